"""Subsampled tree ensembles and their incomplete U-statistic record."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dgp import Dataset
from .errors import ConfigurationError, SubsampleTooSmallError
from .tree import TreeParams, canonical_order, forest_values


@dataclass(frozen=True, eq=False)
class EnsembleFit:
    """Per-tree predictions at ``x0`` plus the subsample each tree was fitted on.

    ``memberships`` is a ``B x s`` array whose rows are sorted, distinct
    indices into the dataset.  ``theta_hat`` is the plain average of
    ``tree_values``.  ``tree_seeds``, when present, replays tree ``b`` via
    ``fit_tree(X[memberships[b]], y[memberships[b]], params, int(tree_seeds[b]))``.
    """

    n: int
    s: int
    tree_values: np.ndarray
    memberships: np.ndarray
    x0: np.ndarray
    theta_hat: float = field(init=False)
    fallback_leaves: int = 0
    tree_seeds: np.ndarray | None = None

    def __post_init__(self):
        h = np.ascontiguousarray(self.tree_values, dtype=np.float64)
        m = np.ascontiguousarray(self.memberships, dtype=np.int64)
        if h.ndim != 1 or h.size < 1:
            raise ConfigurationError("an ensemble needs at least one tree")
        if m.shape != (h.size, self.s):
            raise ConfigurationError(
                f"memberships must have shape ({h.size}, {self.s}), got {m.shape}")
        if not 1 <= self.s < self.n:
            raise ConfigurationError(f"need 1 <= s < n, got s={self.s}, n={self.n}")
        if m.min() < 0 or m.max() >= self.n:
            raise ConfigurationError("membership indices must lie in [0, n)")
        if self.s > 1 and not np.all(np.diff(m, axis=1) > 0):
            raise ConfigurationError("each membership row must be sorted and distinct")
        object.__setattr__(self, "tree_values", h)
        object.__setattr__(self, "memberships", m)
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=np.float64))
        # fsum(B copies of c) / B can miss c by one ulp; constant trees give c itself
        theta = float(h[0]) if np.all(h == h[0]) else math.fsum(h) / h.size
        object.__setattr__(self, "theta_hat", theta)

    @property
    def B(self) -> int:
        return self.tree_values.size

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "s": self.s,
            "B": self.B,
            "theta_hat": self.theta_hat,
            "x0": self.x0.tolist(),
            "fallback_leaves": self.fallback_leaves,
            "tree_values": self.tree_values.tolist(),
            "memberships": self.memberships.tolist(),
            "tree_seeds": None if self.tree_seeds is None else [int(v) for v in self.tree_seeds],
        })

    @classmethod
    def from_json(cls, text: str) -> EnsembleFit:
        doc = json.loads(text)
        try:
            fit = cls(n=doc["n"], s=doc["s"], tree_values=np.array(doc["tree_values"], float),
                      memberships=np.array(doc["memberships"], dtype=np.int64).reshape(-1, doc["s"]),
                      x0=np.array(doc["x0"], float), fallback_leaves=doc.get("fallback_leaves", 0),
                      tree_seeds=None if doc.get("tree_seeds") is None
                      else np.array(doc["tree_seeds"], dtype=np.uint64))
        except KeyError as exc:
            raise ConfigurationError(f"ensemble document is missing key {exc.args[0]!r}") from None
        if "B" in doc and doc["B"] != fit.B:
            raise ConfigurationError(f"ensemble document says B={doc['B']} but stores {fit.B} trees")
        return fit

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> EnsembleFit:
        return cls.from_json(Path(path).read_text())


def draw_subsamples(n: int, s: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """``B`` independent uniform size-``s`` subsets of ``range(n)``, one per row, sorted."""
    if not 1 <= s < n:
        raise ConfigurationError(f"need 1 <= s < n, got s={s}, n={n}")
    if B < 1:
        raise ConfigurationError(f"need at least one subsample, got B={B}")
    keys = rng.random((B, n))
    rows = np.argpartition(keys, s - 1, axis=1)[:, :s]
    rows.sort(axis=1)
    return rows


def fit_forest(dataset: Dataset, x0, s: int, B: int, tree_params: TreeParams,
               rng: np.random.Generator) -> EnsembleFit:
    """Fit ``B`` honest trees on random subsamples and record their predictions at ``x0``.

    Tree ``b`` is seeded from word ``b`` of a seed sequence keyed by one draw
    from ``rng``, so its randomness does not depend on the other trees.
    """
    if B < 1:
        raise ConfigurationError(f"need at least one tree, got B={B}")
    if s < 2 * tree_params.k:
        raise SubsampleTooSmallError(
            f"subsample of size {s} is smaller than 2k = {2 * tree_params.k}")
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if x0.shape != (dataset.d,):
        raise ConfigurationError(f"x0 must have {dataset.d} coordinates, got {x0.shape}")
    mtry = tree_params.resolve_mtry(dataset.d)

    memberships = draw_subsamples(dataset.n, s, B, rng)
    tree_keys = np.random.SeedSequence(int(rng.integers(0, 2**63))).generate_state(
        B, dtype=np.uint64)

    # Trees see their rows in canonical (lexicographic) order, which makes
    # each tree a function of its row set. Sorting the dataset once and
    # relabelling the memberships gives the same order for every subsample.
    order = canonical_order(dataset.features, dataset.responses)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    canon_rows = np.sort(rank[memberships], axis=1)
    values, fallbacks = forest_values(
        np.ascontiguousarray(dataset.features[order]), dataset.responses[order], canon_rows,
        tree_keys, x0, tree_params.k, tree_params.alpha, mtry, tree_params.random_split_prob)
    return EnsembleFit(n=dataset.n, s=s, tree_values=values, memberships=memberships, x0=x0,
                       fallback_leaves=int(fallbacks.sum()), tree_seeds=tree_keys)


def kernel_variance(fit: EnsembleFit) -> float:
    """Sample variance of the tree predictions, ``mean(h^2) - theta_hat^2``, never negative."""
    dev = fit.tree_values - fit.theta_hat
    return max(float(np.mean(dev * dev)), 0.0)
