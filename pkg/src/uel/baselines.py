"""Wald intervals from jackknife and infinitesimal-jackknife variances."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .el import IJ, JK, ConfidenceInterval
from .ensemble import EnsembleFit
from .errors import ConfigurationError
from .pseudo import PseudoValueSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VarianceEstimate:
    """``value = max(corrected_value, 0)``; ``raw_value`` is the estimate before any correction."""

    value: float
    raw_value: float
    corrected_value: float
    method: str

    @property
    def floored(self) -> bool:
        return self.corrected_value < 0


def jackknife_variance(pvs: PseudoValueSet) -> VarianceEstimate:
    """``(n - 1)/n * sum (loo_i - theta_hat)^2``, with the leave-one-out means on the common scale."""
    dev = pvs.loo_means - pvs.theta_hat
    v = (pvs.n - 1) / pvs.n * float(np.dot(dev, dev))
    return VarianceEstimate(v, v, v, JK)


def ij_covariances(fit: EnsembleFit) -> np.ndarray:
    """Per row: ``(1/B) sum_b (M_bi - s/n)(h_b - theta_hat)`` with ``M`` the membership indicator."""
    dev = fit.tree_values - fit.theta_hat
    inside = np.bincount(fit.memberships.ravel(), weights=np.repeat(dev, fit.s),
                         minlength=fit.n)
    return (inside - fit.s / fit.n * math.fsum(dev)) / fit.B


def ij_variance(fit: EnsembleFit) -> VarianceEstimate:
    """Infinitesimal-jackknife variance with a Monte Carlo noise correction.

    raw = sum_i cov_i^2; the correction subtracts the noise that finite ``B``
    adds to each squared covariance, ``(s/n)(1 - s/n)(n/B) var(h)``.
    Negative corrected values are floored at zero.
    """
    cov = ij_covariances(fit)
    raw = float(np.dot(cov, cov))
    dev = fit.tree_values - fit.theta_hat
    sigma2 = float(np.mean(dev * dev))
    frac = fit.s / fit.n
    corrected = raw - frac * (1 - frac) * (fit.n / fit.B) * sigma2
    if corrected < 0:
        logger.debug("IJ variance %.3g floored at zero", corrected)
    return VarianceEstimate(max(corrected, 0.0), raw, corrected, IJ)


def wald_ci(theta_hat: float, variance: VarianceEstimate, level: float) -> ConfidenceInterval:
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"level must lie in (0, 1), got {level}")
    if variance.value < 0:
        raise ConfigurationError("variance must be non-negative")
    half = float(ndtri(0.5 * (1.0 + level))) * math.sqrt(variance.value)
    return ConfidenceInterval(theta_hat - half, theta_hat + half, level, variance.method)
