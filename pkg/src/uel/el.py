"""Empirical likelihood for a scalar mean constraint on pseudo-values.

The log-likelihood ratio ``-2 sum log(n w_i)`` under ``sum w_i V_i = 0`` is
evaluated through its one-dimensional dual::

    ell = 2 sum log(1 + lam V_i),   sum V_i / (1 + lam V_i) = 0

and confidence intervals are the set ``{theta : ell(theta) <= chi2_1 quantile}``
found by bisection on each side of the point estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError
from .pseudo import PseudoValueSet, modified_values, values_at

EL = "EL"
MEL = "mEL"
IJ = "IJ-Wald"
JK = "J-Wald"
METHODS = (EL, MEL, IJ, JK)

_POLE_MARGIN = 1e-10
_REL_TOL = 1e-12
_MAX_ITER = 200


@dataclass(frozen=True)
class ELEvaluation:
    lambda_hat: float
    statistic: float
    feasible: bool
    iterations: int
    degenerate: bool = False


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: str

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def __contains__(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper


def solve_lambda(values) -> ELEvaluation:
    """Solve the dual for the Lagrange multiplier by Newton steps safeguarded by bisection.

    ``g(lam) = sum V_i / (1 + lam V_i)`` is strictly decreasing between the
    poles ``-1/max V`` and ``-1/min V``; iterates never leave that bracket.
    If zero is not strictly inside the range of ``values`` the constraint
    cannot be met and the statistic is ``+inf``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 1:
        raise ConfigurationError("solve_lambda needs at least one value")
    vmin, vmax = float(v.min()), float(v.max())
    if vmin == 0.0 and vmax == 0.0:
        return ELEvaluation(0.0, 0.0, True, 0, degenerate=True)
    if not (vmin < 0.0 < vmax):
        return ELEvaluation(math.nan, math.inf, False, 0)

    lo = -1.0 / vmax * (1.0 - _POLE_MARGIN)
    hi = -1.0 / vmin * (1.0 - _POLE_MARGIN)
    lam = 0.0
    it = 0
    for it in range(1, _MAX_ITER + 1):
        denom = 1.0 + lam * v
        ratio = v / denom
        g = float(ratio.sum())
        if g == 0.0:
            break
        if g > 0.0:
            lo = lam
        else:
            hi = lam
        dg = -float(np.dot(ratio, ratio))
        step = lam - g / dg
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        if abs(step - lam) <= _REL_TOL * max(abs(step), abs(lam)) or step == lam:
            lam = step
            break
        lam = step
    stat = 2.0 * float(np.log1p(lam * v).sum())
    return ELEvaluation(lam, max(stat, 0.0), True, it)


def el_weights(values, lambda_hat: float) -> np.ndarray:
    """Implied probabilities ``1 / (n (1 + lam V_i))``."""
    v = np.asarray(values, dtype=np.float64)
    return 1.0 / (v.size * (1.0 + lambda_hat * v))


def _at_estimate() -> ELEvaluation:
    # Pseudo-values at theta_hat sum to zero by construction: lam = 0.
    return ELEvaluation(0.0, 0.0, True, 0)


def el_stat(pvs: PseudoValueSet, theta: float) -> ELEvaluation:
    if theta == pvs.theta_hat:
        return _at_estimate()
    return solve_lambda(values_at(pvs, theta))


def mel_stat(pvs: PseudoValueSet, theta: float) -> ELEvaluation:
    if theta == pvs.theta_hat:
        return _at_estimate()
    return solve_lambda(modified_values(pvs, theta))


def chi2_quantile_1df(level: float) -> float:
    """Quantile of chi-squared(1) at ``level``, as the squared normal quantile at (1 + level)/2."""
    if not 0.0 <= level < 1.0:
        raise ConfigurationError(f"level must lie in [0, 1), got {level}")
    if level == 0.0:
        return 0.0
    z = float(ndtri(0.5 * (1.0 + level)))
    return z * z


def feasible_span(pvs: PseudoValueSet, method: str) -> tuple[float, float]:
    """Open interval of theta for which zero lies strictly inside the pseudo-value range."""
    lo = float(pvs.anchors.min())
    hi = float(pvs.anchors.max())
    if method == MEL:
        c = pvs.c
        lo = pvs.theta_hat + (lo - pvs.theta_hat) / c
        hi = pvs.theta_hat + (hi - pvs.theta_hat) / c
    elif method != EL:
        raise ConfigurationError(f"EL inversion supports {EL!r} and {MEL!r}, got {method!r}")
    return lo, hi


def statistic(pvs: PseudoValueSet, theta: float, method: str) -> float:
    if method == EL:
        return el_stat(pvs, theta).statistic
    if method == MEL:
        return mel_stat(pvs, theta).statistic
    raise ConfigurationError(f"EL inversion supports {EL!r} and {MEL!r}, got {method!r}")


def _crossing(f, inside: float, outside: float, crit: float, tol: float) -> float:
    if f(outside) <= crit:
        return outside
    while abs(outside - inside) > tol:
        mid = 0.5 * (inside + outside)
        if f(mid) <= crit:
            inside = mid
        else:
            outside = mid
    return inside


def invert_ci(pvs: PseudoValueSet, method: str, level: float) -> ConfidenceInterval:
    """Confidence interval ``{theta : statistic(theta) <= chi2_1(level)}``.

    Relies on the statistic being zero at theta_hat and monotone away from
    it; each endpoint is bisected inside the feasible span to an absolute
    tolerance of ``1e-8 * max(1, |theta_hat|)``.
    """
    crit = chi2_quantile_1df(level)
    th = pvs.theta_hat
    lo, hi = feasible_span(pvs, method)
    if pvs.degenerate or not (lo < th < hi):
        return ConfidenceInterval(th, th, level, method)
    tol = 1e-8 * max(1.0, abs(th))

    def f(theta):
        return statistic(pvs, theta, method)

    lower = _crossing(f, th, lo, crit, tol)
    upper = _crossing(f, th, hi, crit, tol)
    return ConfidenceInterval(lower, upper, level, method)


def sparsity_diagnostic(pvs: PseudoValueSet) -> float:
    """``v2 / v1``: how much of the pseudo-value spread is subsampling noise.

    Large values flag sparse subsampling, where unmodified EL over-covers.
    NaN when ``v1`` is zero.
    """
    if pvs.v1 is None or pvs.v2 is None:
        raise ConfigurationError("variance components not computed; use pseudo_values()")
    if pvs.v1 <= 0:
        return math.nan
    return max(pvs.v2 / pvs.v1, 0.0)
