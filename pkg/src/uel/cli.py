"""Command-line entry point: ``uel simulate`` and ``uel infer``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys

import numpy as np

from . import dgp
from .baselines import ij_variance, jackknife_variance, wald_ci
from .el import EL, IJ, JK, MEL, invert_ci, sparsity_diagnostic
from .ensemble import EnsembleFit, fit_forest
from .errors import ConfigurationError, SubsampleTooSmallError
from .harness import load_config, run_experiment, write_report
from .pseudo import ADD, SUBTRACT, pseudo_values
from .tree import TreeParams

logger = logging.getLogger("uel")

METHOD_NAMES = {"el": EL, "mel": MEL, "ij": IJ, "jk": JK}

SMOKE = {"n_list": (100,), "replications": 200, "n_trees": 500}


def _reals(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo coverage study")
    sim.add_argument("--config", required=True, help="JSON simulation config")
    sim.add_argument("--out", required=True, help="CSV report path")
    sim.add_argument("--threads", type=int, default=None)
    sim.add_argument("--smoke", action="store_true",
                     help="override to n=100, 200 replications, 500 trees")

    inf = sub.add_parser("infer", help="confidence interval for one dataset")
    inf.add_argument("--data", required=True, help="CSV with header x1,...,xd,y")
    inf.add_argument("--x0", required=True, type=_reals)
    inf.add_argument("--s", required=True, type=int, help="subsample size")
    inf.add_argument("--trees", required=True, type=int)
    inf.add_argument("--method", required=True, choices=sorted(METHOD_NAMES))
    inf.add_argument("--level", type=float, default=0.95)
    inf.add_argument("--seed", type=int, default=0)
    inf.add_argument("--k", type=int, default=1)
    inf.add_argument("--alpha", type=float, default=0.05, help="alpha-regularity fraction")
    inf.add_argument("--mtry", type=int, default=None)
    inf.add_argument("--random-split-prob", type=float, default=0.05)
    inf.add_argument("--mel-adjustment", choices=(SUBTRACT, ADD), default=SUBTRACT)
    inf.add_argument("--cache", default=None,
                     help="ensemble JSON; reused when it matches, written otherwise")
    return parser


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.smoke:
        config = dataclasses.replace(config, **SMOKE)
    report = run_experiment(config, threads=args.threads, keep_details=False)
    write_report(report, args.out)
    for row in report.rows:
        logger.info("n=%d %-8s coverage=%.3f mean length=%.4f", row.n, row.method,
                    row.coverage, row.mean_ci_length)
    return 0


def _cached_fit(path, data, x0, s, trees):
    try:
        fit = EnsembleFit.load(path)
    except FileNotFoundError:
        return None
    if (fit.n, fit.s, fit.B) == (data.n, s, trees) and np.array_equal(fit.x0, x0):
        return fit
    logger.warning("cached ensemble %s does not match the request; refitting", path)
    return None


def _json_float(value: float):
    return None if math.isnan(value) else value


def cmd_infer(args) -> int:
    data = dgp.read_csv(args.data)
    if args.x0.shape != (data.d,):
        raise ConfigurationError(f"--x0 has {args.x0.size} coordinates, data has d={data.d}")
    if not 1 <= args.s < data.n:
        raise ConfigurationError(f"--s must satisfy 1 <= s < n={data.n}, got {args.s}")
    if args.trees < 1:
        raise ConfigurationError(f"--trees must be positive, got {args.trees}")
    params = TreeParams(k=args.k, alpha=args.alpha, mtry=args.mtry,
                        random_split_prob=args.random_split_prob)
    fit = _cached_fit(args.cache, data, args.x0, args.s, args.trees) if args.cache else None
    if fit is None:
        fit = fit_forest(data, args.x0, args.s, args.trees, params,
                         np.random.default_rng(args.seed))
        if args.cache:
            fit.save(args.cache)

    pvs = pseudo_values(fit, args.mel_adjustment)
    method = METHOD_NAMES[args.method]
    var_ij = ij_variance(fit)
    var_j = jackknife_variance(pvs)
    if method in (EL, MEL):
        ci = invert_ci(pvs, method, args.level)
    else:
        ci = wald_ci(pvs.theta_hat, var_ij if method == IJ else var_j, args.level)
    out = {
        "theta_hat": pvs.theta_hat,
        "ci_lower": ci.lower,
        "ci_upper": ci.upper,
        "method": method,
        "level": args.level,
        "v1": pvs.v1,
        "v2": pvs.v2,
        "c": pvs.c,
        "sparsity_diagnostic": _json_float(sparsity_diagnostic(pvs)),
        "var_ij": var_ij.value,
        "var_j": var_j.value,
        "B": fit.B,
        "s": fit.s,
    }
    print(json.dumps(out))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = cmd_simulate if args.command == "simulate" else cmd_infer
    try:
        return handler(args)
    except (ConfigurationError, SubsampleTooSmallError) as exc:
        print(f"uel: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure as exit 1
        print(f"uel: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
