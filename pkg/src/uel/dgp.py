"""Synthetic regression designs and their noiseless conditional means.

Both designs draw ``d`` independent Unif(0, 1) features and add ``2 * eps``
noise with ``eps`` standard normal.  Normal deviates come from the inverse
normal CDF applied to the generator's uniform stream so the whole pipeline
relies on a single generator type.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

MLR = "MLR"
MARS = "MARS"

_MIN_DIM = {MLR: 4, MARS: 5}


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.responses, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ConfigurationError(f"features must be a non-empty n x d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ConfigurationError(
                f"responses must have length {X.shape[0]}, got shape {y.shape}")
        if not np.all((X >= 0) & (X <= 1)):
            raise ConfigurationError("feature values must lie in [0, 1]")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def _open_uniforms(rng: np.random.Generator, size) -> np.ndarray:
    # Uniforms on the open interval (0, 1); ndtri is infinite at the endpoints.
    return (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) / 2.0**53


def standard_normals(rng: np.random.Generator, size) -> np.ndarray:
    return ndtri(_open_uniforms(rng, size))


def gen_uniform_features(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or d < 1:
        raise ConfigurationError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    return rng.random((n, d))


def _check_dgp(dgp_id: str, d: int) -> None:
    if dgp_id not in _MIN_DIM:
        raise ConfigurationError(f"unknown dgp {dgp_id!r}; expected one of {sorted(_MIN_DIM)}")
    if d < _MIN_DIM[dgp_id]:
        raise ConfigurationError(f"{dgp_id} needs d >= {_MIN_DIM[dgp_id]}, got d={d}")


def mlr_mean(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return 2 * X[:, 0] + 3 * X[:, 1] - 5 * X[:, 2] - X[:, 3] + 1


def mars_mean(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    return (np.sin(np.pi * X[:, 0] * X[:, 1]) + 2 * (X[:, 2] - 0.05) ** 2
            - X[:, 3] + 0.5 * X[:, 4])


_MEANS = {MLR: mlr_mean, MARS: mars_mean}


def _generate(dgp_id: str, n: int, d: int, rng: np.random.Generator, noise: bool) -> Dataset:
    _check_dgp(dgp_id, d)
    X = gen_uniform_features(n, d, rng)
    eps = standard_normals(rng, n)
    y = _MEANS[dgp_id](X)
    if noise:
        y = y + 2 * eps
    return Dataset(X, y)


def gen_mlr(n: int, d: int, rng: np.random.Generator, noise: bool = True) -> Dataset:
    """Draw ``n`` rows from ``Y = 2X1 + 3X2 - 5X3 - X4 + 1 + 2 eps``.

    ``noise=False`` still consumes the noise draws, so the features match the
    noisy dataset generated from the same seed.
    """
    return _generate(MLR, n, d, rng, noise)


def gen_mars(n: int, d: int, rng: np.random.Generator, noise: bool = True) -> Dataset:
    """Draw ``n`` rows from ``Y = sin(pi X1 X2) + 2 (X3 - 0.05)^2 - X4 + 0.5 X5 + 2 eps``."""
    return _generate(MARS, n, d, rng, noise)


GENERATORS = {MLR: gen_mlr, MARS: gen_mars}


def generate(dgp_id: str, n: int, d: int, rng: np.random.Generator) -> Dataset:
    if dgp_id not in GENERATORS:
        raise ConfigurationError(f"unknown dgp {dgp_id!r}; expected one of {sorted(GENERATORS)}")
    return GENERATORS[dgp_id](n, d, rng)


def true_mean(dgp_id: str, x0) -> float:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1:
        raise ConfigurationError("x0 must be a vector")
    _check_dgp(dgp_id, x0.shape[0])
    return float(_MEANS[dgp_id](x0[None, :])[0])


def read_csv(path: str | Path) -> Dataset:
    """Load ``x1,...,xd,y`` rows.  Schema problems are reported by column name."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigurationError(f"{path}: empty file, expected header x1,...,xd,y") from None
        if len(header) < 2 or header[-1] != "y":
            raise ConfigurationError(f"{path}: last column must be 'y', got {header[-1:]!r}")
        expected = [f"x{j}" for j in range(1, len(header))]
        for got, want in zip(header[:-1], expected):
            if got != want:
                raise ConfigurationError(f"{path}: expected column {want!r}, got {got!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ConfigurationError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ConfigurationError(
                        f"{path}:{lineno}: column {name!r} is not a number: {cell!r}") from None
            rows.append(vals)
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    data = np.array(rows)
    X, y = data[:, :-1], data[:, -1]
    for j in range(X.shape[1]):
        col = X[:, j]
        if not np.all(np.isfinite(col)) or col.min() < 0 or col.max() > 1:
            raise ConfigurationError(f"{path}: column {header[j]!r} has values outside [0, 1]")
    if not np.all(np.isfinite(y)):
        raise ConfigurationError(f"{path}: column 'y' has non-finite values")
    return Dataset(X, y)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(1, dataset.d + 1)] + ["y"])
        for xi, yi in zip(dataset.features, dataset.responses):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
