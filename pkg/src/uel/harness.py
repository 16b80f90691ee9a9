"""Monte Carlo coverage study.

Every replication draws its data and forest from an independent stream keyed
by ``(master_seed, dgp, n, rep_index)``, so results do not depend on how
replications are scheduled across threads.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dgp as dgp_mod
from .baselines import ij_variance, jackknife_variance, wald_ci
from .el import EL, IJ, JK, MEL, METHODS, ConfidenceInterval, feasible_span, invert_ci
from .ensemble import EnsembleFit, fit_forest
from .errors import ConfigurationError
from .pseudo import ADD, SUBTRACT, PseudoValueSet, pseudo_values
from .tree import TreeParams

logger = logging.getLogger(__name__)

_DGP_CODES = {dgp_mod.MLR: 0, dgp_mod.MARS: 1}

REPORT_COLUMNS = ("dgp", "n", "s", "B", "method", "level", "coverage", "mean_ci_length",
                  "infeasible_count", "floored_variance_count", "replications", "seed")


def ceil_power(base: float, exponent: float) -> int:
    """``ceil(base ** exponent)``, immune to results like 16.000000000000004."""
    return math.ceil(base ** exponent - 1e-9)


@dataclass(frozen=True)
class SimulationConfig:
    dgp: str
    n_list: tuple[int, ...] = (200, 400, 800)
    s_exponent: float = 0.8
    tree_exponent: float = 1.1
    n_trees: int | None = None
    d: int = 6
    mtry: int | None = None
    k: int = 1
    alpha_regularity: float = 0.05
    random_split_prob: float = 0.05
    x0: tuple[float, ...] | None = None
    level: float = 0.95
    replications: int = 2000
    master_seed: int = 0
    methods: tuple[str, ...] = METHODS
    mel_adjustment: str = SUBTRACT
    threads: int = 1

    def __post_init__(self):
        if self.dgp not in _DGP_CODES:
            raise ConfigurationError(f"dgp: unknown design {self.dgp!r}, expected MLR or MARS")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if not self.n_list or min(self.n_list) < 2:
            raise ConfigurationError("n_list: need at least one sample size, each >= 2")
        for name in ("d", "k", "replications", "threads"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("s_exponent", "tree_exponent"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.n_trees is not None and self.n_trees < 1:
            raise ConfigurationError(f"n_trees: must be positive, got {self.n_trees}")
        if not 0 < self.level < 1:
            raise ConfigurationError(f"level: must lie in (0, 1), got {self.level}")
        if self.x0 is not None and len(self.x0) != self.d:
            raise ConfigurationError(f"x0: expected {self.d} coordinates, got {len(self.x0)}")
        if self.mel_adjustment not in (SUBTRACT, ADD):
            raise ConfigurationError(
                f"mel_adjustment: expected {SUBTRACT!r} or {ADD!r}, got {self.mel_adjustment!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigurationError(f"methods: unknown {bad!r}, expected a subset of {METHODS}")
        try:
            self.tree_params()
        except ConfigurationError as exc:
            raise ConfigurationError(f"tree settings: {exc}") from None

    @property
    def point(self) -> np.ndarray:
        return np.full(self.d, 0.4) if self.x0 is None else np.array(self.x0)

    def subsample_size(self, n: int) -> int:
        return min(ceil_power(n, self.s_exponent), n - 1)

    def tree_count(self, n: int) -> int:
        if self.n_trees is not None:
            return self.n_trees
        return ceil_power(10 * n, self.tree_exponent)

    def tree_params(self) -> TreeParams:
        params = TreeParams(k=self.k, alpha=self.alpha_regularity, mtry=self.mtry,
                            random_split_prob=self.random_split_prob)
        params.resolve_mtry(self.d)
        return params

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("n_list", "methods", "x0"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out


_FIELDS = {f.name for f in dataclasses.fields(SimulationConfig)}


def config_from_dict(doc: dict) -> SimulationConfig:
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(doc) - _FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown config key {unknown[0]!r}")
    if "dgp" not in doc:
        raise ConfigurationError("missing required config key 'dgp'")
    try:
        return SimulationConfig(**doc)
    except TypeError as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None


def load_config(path: str | Path) -> SimulationConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(doc)


def save_config(config: SimulationConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def replication_rng(master_seed: int, dgp: str, n: int, rep_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(master_seed, spawn_key=(_DGP_CODES[dgp], n, rep_index))
    return np.random.Generator(np.random.PCG64(seq))


def beta_window(n: int, d: int, alpha: float, random_split_prob: float,
                q: float = 6.0) -> tuple[float, float]:
    """Admissible range ``(n**beta_min, n**(1 - 2/q))`` for the subsample size."""
    if random_split_prob <= 0:
        beta_min = 1.0
    else:
        ratio = math.log(1 / alpha) / math.log(1 / (1 - alpha))
        beta_min = 1 - 1 / (1 + d / random_split_prob * ratio)
    return n ** beta_min, n ** (1 - 2 / q)


@dataclass(frozen=True)
class ReplicationResult:
    n: int
    rep_index: int
    truth: float
    theta_hat: float
    c: float
    intervals: dict[str, ConfidenceInterval]
    infeasible: dict[str, bool]
    floored: dict[str, bool]
    failed: bool = False
    error: str = ""

    def hit(self, method: str) -> bool:
        return self.truth in self.intervals[method]


def method_intervals(fit: EnsembleFit, pvs: PseudoValueSet, methods, level: float):
    intervals, floored = {}, {}
    for method in methods:
        if method in (EL, MEL):
            intervals[method] = invert_ci(pvs, method, level)
            floored[method] = False
        else:
            var = ij_variance(fit) if method == IJ else jackknife_variance(pvs)
            intervals[method] = wald_ci(pvs.theta_hat, var, level)
            floored[method] = var.floored
    return intervals, floored


def run_replication(config: SimulationConfig, n: int, rep_index: int,
                    dataset_fn=None) -> ReplicationResult:
    """One dataset, one forest, every requested interval.

    ``dataset_fn(n, d, rng)`` replaces the configured design (used for stubs);
    the truth is then taken as ``true_mean`` of the configured design.
    """
    rng = replication_rng(config.master_seed, config.dgp, n, rep_index)
    x0 = config.point
    truth = dgp_mod.true_mean(config.dgp, x0)
    try:
        make = dataset_fn or dgp_mod.GENERATORS[config.dgp]
        data = make(n, config.d, rng)
        fit = fit_forest(data, x0, config.subsample_size(n), config.tree_count(n),
                         config.tree_params(), rng)
        pvs = pseudo_values(fit, config.mel_adjustment)
        intervals, floored = method_intervals(fit, pvs, config.methods, config.level)
    except (ValueError, ArithmeticError) as exc:
        logger.warning("replication %d (n=%d) failed: %s", rep_index, n, exc)
        return ReplicationResult(n, rep_index, truth, math.nan, math.nan, {}, {}, {},
                                 failed=True, error=str(exc))
    infeasible = {}
    for method in config.methods:
        if method in (EL, MEL):
            lo, hi = feasible_span(pvs, method)
            infeasible[method] = not (lo < truth < hi)
        else:
            infeasible[method] = False
    return ReplicationResult(n, rep_index, truth, pvs.theta_hat, pvs.c, intervals,
                             infeasible, floored)


@dataclass(frozen=True)
class CoverageRow:
    dgp: str
    n: int
    s: int
    B: int
    method: str
    level: float
    coverage: float
    mean_ci_length: float
    infeasible_count: int
    floored_variance_count: int
    replications: int
    seed: int


@dataclass
class CoverageReport:
    rows: list[CoverageRow] = field(default_factory=list)
    failed: dict[int, int] = field(default_factory=dict)
    details: list[ReplicationResult] = field(default_factory=list)

    def row(self, n: int, method: str) -> CoverageRow:
        for r in self.rows:
            if r.n == n and r.method == method:
                return r
        raise KeyError((n, method))


def summarize(config: SimulationConfig, n: int, results) -> list[CoverageRow]:
    ok = [r for r in results if not r.failed]
    rows = []
    for method in config.methods:
        hits = sum(r.hit(method) for r in ok)
        lengths = [r.intervals[method].length for r in ok]
        rows.append(CoverageRow(
            dgp=config.dgp, n=n, s=config.subsample_size(n), B=config.tree_count(n),
            method=method, level=config.level,
            coverage=hits / len(ok) if ok else math.nan,
            mean_ci_length=math.fsum(lengths) / len(ok) if ok else math.nan,
            infeasible_count=sum(r.infeasible[method] for r in ok),
            floored_variance_count=sum(r.floored[method] for r in ok),
            replications=len(ok), seed=config.master_seed))
    return rows


def run_experiment(config: SimulationConfig, threads: int | None = None,
                   keep_details: bool = True, dataset_fn=None) -> CoverageReport:
    threads = config.threads if threads is None else threads
    tasks = [(n, rep) for n in config.n_list for rep in range(config.replications)]
    for n in config.n_list:
        s = config.subsample_size(n)
        lo, hi = beta_window(n, config.d, config.alpha_regularity, config.random_split_prob)
        if not lo < s < hi:
            logger.warning("n=%d: subsample size %d outside the window (%.1f, %.1f) "
                           "required by the honest-forest theory", n, s, lo, hi)

    def work(task):
        return run_replication(config, task[0], task[1], dataset_fn=dataset_fn)

    if threads == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))

    report = CoverageReport()
    for n in config.n_list:
        cell = [r for r in results if r.n == n]
        report.rows.extend(summarize(config, n, cell))
        n_failed = sum(r.failed for r in cell)
        if n_failed:
            report.failed[n] = n_failed
            logger.warning("n=%d: %d of %d replications failed", n, n_failed, len(cell))
    if keep_details:
        report.details = results
    return report


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(report: CoverageReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in report.rows:
            w.writerow([_fmt(getattr(row, col)) for col in REPORT_COLUMNS])
