"""Jackknife-after-subsampling pseudo-values.

Leave-one-out estimates reuse the fitted trees: the estimate without row
``i`` averages the trees whose subsample excludes ``i``, always divided by
the common scale ``(n - s) B / n`` rather than by each row's realized
exclusion count.  With that scale the pseudo-values sum to exactly
``n * theta_hat`` for any membership pattern.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .ensemble import EnsembleFit, kernel_variance
from .errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PseudoValueSet:
    """Anchors ``a_i`` such that the pseudo-value at ``theta`` is ``a_i - theta``.

    ``v1``/``v2``/``c`` are filled in by :func:`variance_components`; the
    modified pseudo-values scale the slope in ``theta`` by ``c``.
    ``net_variance_fallback`` marks fits where ``v2 >= v1`` forced ``c = 1``.
    """

    anchors: np.ndarray
    theta_hat: float
    loo_means: np.ndarray
    b1: float
    excluded_counts: np.ndarray
    n: int
    s: int
    B: int
    v1: float | None = None
    v2: float | None = None
    c: float | None = None
    degenerate: bool = False
    net_variance_fallback: bool = False


def exclusion_sums(fit: EnsembleFit) -> tuple[np.ndarray, np.ndarray]:
    """Per row: total prediction of the trees *containing* it, and how many trees exclude it."""
    flat = fit.memberships.ravel()
    T_in = np.bincount(flat, weights=np.repeat(fit.tree_values, fit.s), minlength=fit.n)
    excluded = fit.B - np.bincount(flat, minlength=fit.n)
    return T_in, excluded


def pseudo_anchors(fit: EnsembleFit) -> PseudoValueSet:
    n, s, B = fit.n, fit.s, fit.B
    if n <= s:
        raise ConfigurationError(f"pseudo-values need n > s, got n={n}, s={s}")
    T_in, excluded = exclusion_sums(fit)
    if np.any(excluded == 0):
        logger.warning("%d observation(s) appear in every tree; their leave-one-out "
                       "average is empty", int(np.sum(excluded == 0)))
    b1 = (n - s) * B / n
    total = math.fsum(fit.tree_values)
    theta = fit.theta_hat
    if np.ptp(fit.tree_values) == 0:
        # Identical trees: every leave-one-out average equals theta_hat, the
        # common scale would only inject membership-imbalance noise.
        loo = np.full(n, theta)
        return PseudoValueSet(anchors=np.full(n, theta), theta_hat=theta, loo_means=loo, b1=b1,
                              excluded_counts=excluded, n=n, s=s, B=B, degenerate=True)
    loo = (total - T_in) / b1
    anchors = theta + (n - 1) * (theta - loo)
    return PseudoValueSet(anchors=anchors, theta_hat=theta, loo_means=loo, b1=b1,
                          excluded_counts=excluded, n=n, s=s, B=B)


SUBTRACT = "subtract"
ADD = "add"


def variance_components(pvs: PseudoValueSet, fit: EnsembleFit,
                        adjustment: str = SUBTRACT) -> tuple[float, float, float]:
    """``(v1, v2, c)`` for the modified pseudo-values.

    ``v1`` is the mean squared pseudo-value at theta_hat and ``v2 = n (s - 1)
    / B * kernel_variance`` the part of it caused by using finitely many
    trees.  With ``adjustment="subtract"`` (default) ``c = sqrt(v1 / (v1 -
    v2))``, which rescales the statistic to the variance net of that noise;
    ``"add"`` gives ``c = sqrt(v1 / (v1 + v2))``.  ``c`` is 1 when ``v1`` is
    zero, and also when ``v2 >= v1`` under ``"subtract"``.
    """
    dev = pvs.anchors - pvs.theta_hat
    v1 = float(np.mean(dev * dev))
    v2 = pvs.n * (pvs.s - 1) / pvs.B * kernel_variance(fit)
    if adjustment == SUBTRACT:
        net = v1 - v2
    elif adjustment == ADD:
        net = v1 + v2
    else:
        raise ConfigurationError(f"adjustment must be {SUBTRACT!r} or {ADD!r}, got {adjustment!r}")
    c = math.sqrt(v1 / net) if v1 > 0 and net > 0 else 1.0
    return v1, v2, c


def pseudo_values(fit: EnsembleFit, adjustment: str = SUBTRACT) -> PseudoValueSet:
    """Anchors plus variance components in one step."""
    pvs = pseudo_anchors(fit)
    v1, v2, c = variance_components(pvs, fit, adjustment)
    fallback = adjustment == SUBTRACT and v1 > 0 and v2 >= v1
    if fallback:
        logger.warning("subsampling noise v2=%.3g exceeds v1=%.3g; modified EL falls back "
                       "to plain EL", v2, v1)
    return replace(pvs, v1=v1, v2=v2, c=c, degenerate=pvs.degenerate or v1 == 0,
                   net_variance_fallback=fallback)


def values_at(pvs: PseudoValueSet, theta: float) -> np.ndarray:
    """Unmodified pseudo-values ``a_i - theta``."""
    return pvs.anchors - theta


def modified_values(pvs: PseudoValueSet, theta: float) -> np.ndarray:
    """Modified pseudo-values ``(a_i - theta_hat) - c (theta - theta_hat)``."""
    if pvs.c is None:
        raise ConfigurationError("scale factor c not computed; use pseudo_values()")
    return (pvs.anchors - pvs.theta_hat) - pvs.c * (theta - pvs.theta_hat)
