"""Honest double-sample regression trees.

A tree fitted on a subsample of ``s`` rows splits it at random into an
estimation half ``I`` (``ceil(s/2)`` rows) and a splitting half ``J``.  Split
placement only reads ``J`` responses; leaf predictions only average ``I``
responses.  Every split keeps at least ``ceil(alpha * m)`` rows of each half on
both sides (``m`` the parent's count for that half) and at least ``k`` ``I``
rows per child, so leaves end up with between ``k`` and ``2k - 1`` ``I`` rows
unless no admissible split exists.

The growing routine is compiled with numba because the coverage study fits
millions of trees.  A tree is a pure function of its rows (as a set) and an
integer seed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError, SubsampleTooSmallError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeParams:
    k: int = 1
    alpha: float = 0.05
    mtry: int | None = None
    random_split_prob: float = 0.0

    def __post_init__(self):
        if not (0 < self.alpha <= 0.2):
            raise ConfigurationError(f"alpha must lie in (0, 0.2], got {self.alpha}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigurationError(f"mtry must be >= 1, got {self.mtry}")
        if not (0 <= self.random_split_prob <= 1):
            raise ConfigurationError(
                f"random_split_prob must lie in [0, 1], got {self.random_split_prob}")

    def resolve_mtry(self, d: int) -> int:
        mtry = math.ceil(d / 2) if self.mtry is None else self.mtry
        if mtry > d:
            raise ConfigurationError(f"mtry={mtry} exceeds the number of features d={d}")
        return mtry


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------
# Randomness is counter based: every node draws from a splitmix64 stream keyed
# by a hash of its parent's key and its side.  A node's split therefore does
# not depend on the order in which other nodes were grown, which lets the
# forest grow only the root-to-x0 path and still reproduce the full tree.

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LEFT = np.uint64(0x243F6A8885A308D3)
_RIGHT = np.uint64(0x13198A2E03707344)
_HALVING = np.uint64(0xA4093822299F31D0)


@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _next(state):
    """Advance a stream; returns (new state, 64 random bits)."""
    state = state + _GAMMA
    return state, _mix(state)


@njit(cache=True, nogil=True)
def _uniform(state):
    state, z = _next(state)
    return state, (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def _randint(state, lo, hi):
    """Uniform integer in [lo, hi)."""
    state, u = _uniform(state)
    r = lo + int(u * (hi - lo))
    if r >= hi:
        r = hi - 1
    return state, r


@njit(cache=True, nogil=True)
def _child_key(key, side):
    return _mix(key ^ (_RIGHT if side else _LEFT))


@njit(cache=True, nogil=True)
def _min_count(frac, m):
    # ceil(frac * m) without the 0.05 * 20 -> 1.0000000000000002 surprise
    return int(math.ceil(frac * m - 1e-9))


@njit(cache=True, nogil=True)
def canonical_order(X, y):
    """Row order sorted lexicographically by (x_1, ..., x_d, y)."""
    n, d = X.shape
    idx = np.arange(n)
    vals = np.empty(n)
    for q in range(n):
        vals[q] = y[idx[q]]
    idx = idx[np.argsort(vals, kind="mergesort")]
    for f in range(d - 1, -1, -1):
        for q in range(n):
            vals[q] = X[idx[q], f]
        idx = idx[np.argsort(vals, kind="mergesort")]
    return idx


@njit(cache=True, nogil=True)
def _halves(s, key):
    """Random split of range(s) into I (first ceil(s/2)) and J by Fisher-Yates."""
    state = _mix(key ^ _HALVING)
    perm = np.arange(s)
    for q in range(s - 1, 0, -1):
        state, r = _randint(state, 0, q + 1)
        tmp = perm[q]
        perm[q] = perm[r]
        perm[r] = tmp
    m_i = (s + 1) // 2
    return perm[:m_i].copy(), perm[m_i:].copy()


@njit(cache=True, nogil=True)
def _sort_pairs(keys, vals, m):
    """Stable ascending sort of keys[:m], carrying vals[:m] along."""
    if m > 48:
        order = np.argsort(keys[:m], kind="mergesort")
        ks = keys[:m][order]
        vs = vals[:m][order]
        keys[:m] = ks
        vals[:m] = vs
        return
    for q in range(1, m):
        kq = keys[q]
        vq = vals[q]
        r = q - 1
        while r >= 0 and keys[r] > kq:
            keys[r + 1] = keys[r]
            vals[r + 1] = vals[r]
            r -= 1
        keys[r + 1] = kq
        vals[r + 1] = vq


@njit(cache=True, nogil=True)
def _scan_feature(Xs, ys, I, ilo, ihi, J, jlo, jhi, f, min_i, min_j, by_median, xj, yj, xi):
    """Search admissible thresholds on feature ``f``.

    Returns (found, threshold, score).  With ``by_median`` the admissible
    threshold closest to the J-half median wins, otherwise the largest
    variance reduction of the J responses.  Ties keep the smallest threshold.
    """
    n_i = ihi - ilo
    n_j = jhi - jlo
    total = 0.0
    for q in range(n_j):
        xj[q] = Xs[J[jlo + q], f]
        yj[q] = ys[J[jlo + q]]
        total += yj[q]
    _sort_pairs(xj, yj, n_j)
    for q in range(n_i):
        xi[q] = Xs[I[ilo + q], f]
    _sort_pairs(xi, xi, n_i)
    xjs = xj
    xis = xi
    if n_j % 2 == 1:
        med = xjs[n_j // 2]
    else:
        med = 0.5 * (xjs[n_j // 2 - 1] + xjs[n_j // 2])

    found = False
    best_t = 0.0
    best = -np.inf
    cum = 0.0
    ptr = 0
    for p in range(1, n_j):
        cum += yj[p - 1]
        if not xjs[p - 1] < xjs[p]:
            continue
        if p < min_j or n_j - p < min_j:
            continue
        t = 0.5 * (xjs[p - 1] + xjs[p])
        if t >= xjs[p]:
            t = xjs[p - 1]
        while ptr < n_i and xis[ptr] <= t:
            ptr += 1
        if ptr < min_i or n_i - ptr < min_i:
            continue
        if by_median:
            score = -abs(t - med)
        else:
            rest = total - cum
            score = cum * cum / p + rest * rest / (n_j - p)
        if score > best:
            best = score
            best_t = t
            found = True
    return found, best_t, best


@njit(cache=True, nogil=True)
def _choose_split(Xs, ys, I, ilo, ihi, J, jlo, jhi, key, k, alpha, mtry,
                  random_split_prob, feats, xj, yj, xi):
    """Split decision for one node.  Returns (status, feature, threshold).

    status: 0 = leaf by size, 1 = split, 2 = leaf because no admissible split.
    """
    n_i = ihi - ilo
    n_j = jhi - jlo
    if n_i < 2 * k:
        return 0, -1, 0.0
    min_i = max(k, _min_count(alpha, n_i))
    min_j = max(1, _min_count(alpha, n_j))
    if n_i < 2 * min_i or n_j < 2 * min_j:
        return 2, -1, 0.0
    d = Xs.shape[1]
    state = key
    state, u = _uniform(state)
    if u < random_split_prob:
        state, f = _randint(state, 0, d)
        ok, t, _ = _scan_feature(Xs, ys, I, ilo, ihi, J, jlo, jhi, f, min_i, min_j, True,
                                 xj, yj, xi)
        if ok:
            return 1, f, t
    for q in range(d):
        feats[q] = q
    for q in range(mtry):
        state, r = _randint(state, q, d)
        tmp = feats[q]
        feats[q] = feats[r]
        feats[r] = tmp
    chosen = np.sort(feats[:mtry])
    best = -np.inf
    best_f = -1
    best_t = 0.0
    for f in chosen:
        ok, t, score = _scan_feature(Xs, ys, I, ilo, ihi, J, jlo, jhi, f, min_i, min_j, False,
                                     xj, yj, xi)
        if ok and score > best:
            best = score
            best_f = f
            best_t = t
    if best_f < 0:
        return 2, -1, 0.0
    return 1, best_f, best_t


@njit(cache=True, nogil=True)
def _partition(Xs, idx, lo, hi, f, t, buf):
    """Stable in-place partition of idx[lo:hi] into (x_f <= t, x_f > t)."""
    n_left = 0
    for q in range(lo, hi):
        if Xs[idx[q], f] <= t:
            buf[n_left] = idx[q]
            n_left += 1
    pos = n_left
    for q in range(lo, hi):
        if Xs[idx[q], f] > t:
            buf[pos] = idx[q]
            pos += 1
    for q in range(hi - lo):
        idx[lo + q] = buf[q]
    return lo + n_left


@njit(cache=True, nogil=True)
def _grow(Xs, ys, key, k, alpha, mtry, random_split_prob):
    """Grow the full tree on rows already in canonical order."""
    s, d = Xs.shape
    I, J = _halves(s, key)
    m_i = I.shape[0]
    cap = 2 * m_i + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    ilo = np.zeros(cap, dtype=np.int64)
    ihi = np.zeros(cap, dtype=np.int64)
    jlo = np.zeros(cap, dtype=np.int64)
    jhi = np.zeros(cap, dtype=np.int64)
    keys = np.zeros(cap, dtype=np.uint64)
    ihi[0] = m_i
    jhi[0] = s - m_i
    keys[0] = key
    n_nodes = 1
    n_fallback = 0

    feats = np.empty(d, dtype=np.int64)
    xj = np.empty(s)
    yj = np.empty(s)
    xi = np.empty(s)
    buf = np.empty(s, dtype=np.int64)
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        status, f, t = _choose_split(Xs, ys, I, ilo[node], ihi[node], J, jlo[node], jhi[node],
                                     keys[node], k, alpha, mtry, random_split_prob,
                                     feats, xj, yj, xi)
        if status != 1:
            if status == 2 and ihi[node] - ilo[node] > 2 * k - 1:
                n_fallback += 1
            continue
        i_mid = _partition(Xs, I, ilo[node], ihi[node], f, t, buf)
        j_mid = _partition(Xs, J, jlo[node], jhi[node], f, t, buf)
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = f
        threshold[node] = t
        left[node] = lc
        right[node] = rc
        ilo[lc] = ilo[node]
        ihi[lc] = i_mid
        jlo[lc] = jlo[node]
        jhi[lc] = j_mid
        ilo[rc] = i_mid
        ihi[rc] = ihi[node]
        jlo[rc] = j_mid
        jhi[rc] = jhi[node]
        keys[lc] = _child_key(keys[node], False)
        keys[rc] = _child_key(keys[node], True)
        stack[top] = rc
        stack[top + 1] = lc
        top += 2

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            ilo[:n_nodes], ihi[:n_nodes], jlo[:n_nodes], jhi[:n_nodes], I, J, n_fallback)


@njit(cache=True, nogil=True)
def _path_value(Xs, ys, key, x0, k, alpha, mtry, random_split_prob, feats, xj, yj, xi, buf):
    """Prediction at x0 growing only the nodes on x0's root-to-leaf path.

    Returns (value, 1 if x0's leaf is a fallback leaf else 0).
    """
    s = Xs.shape[0]
    I, J = _halves(s, key)
    ilo, ihi, jlo, jhi = 0, I.shape[0], 0, J.shape[0]
    while True:
        status, f, t = _choose_split(Xs, ys, I, ilo, ihi, J, jlo, jhi, key, k, alpha, mtry,
                                     random_split_prob, feats, xj, yj, xi)
        if status != 1:
            # mean as first + average offset: exact when the leaf is constant
            first = ys[I[ilo]]
            total = 0.0
            for q in range(ilo, ihi):
                total += ys[I[q]] - first
            fb = 1 if (status == 2 and ihi - ilo > 2 * k - 1) else 0
            return first + total / (ihi - ilo), fb
        i_mid = _partition(Xs, I, ilo, ihi, f, t, buf)
        j_mid = _partition(Xs, J, jlo, jhi, f, t, buf)
        if x0[f] <= t:
            ihi = i_mid
            jhi = j_mid
            key = _child_key(key, False)
        else:
            ilo = i_mid
            jlo = j_mid
            key = _child_key(key, True)


@njit(cache=True, nogil=True)
def _route(feature, threshold, left, right, x0):
    node = 0
    while feature[node] >= 0:
        if x0[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def forest_values(Xc, yc, rows, keys, x0, k, alpha, mtry, random_split_prob):
    """Prediction at ``x0`` of one honest tree per row of ``rows``.

    ``Xc``/``yc`` must be in canonical order and each row of ``rows`` sorted,
    so every subsample reaches the tree in canonical order.  Returns
    (tree values, whether x0's leaf in each tree is a fallback leaf).
    """
    B, s = rows.shape
    d = Xc.shape[1]
    values = np.empty(B)
    fallbacks = np.zeros(B, dtype=np.int64)
    Xs = np.empty((s, d))
    ys = np.empty(s)
    feats = np.empty(d, dtype=np.int64)
    xj = np.empty(s)
    yj = np.empty(s)
    xi = np.empty(s)
    buf = np.empty(s, dtype=np.int64)
    for b in range(B):
        for q in range(s):
            r = rows[b, q]
            ys[q] = yc[r]
            for f in range(d):
                Xs[q, f] = Xc[r, f]
        values[b], fallbacks[b] = _path_value(Xs, ys, _mix(keys[b]), x0, k, alpha, mtry,
                                              random_split_prob, feats, xj, yj, xi, buf)
    return values, fallbacks


# ---------------------------------------------------------------------------
# Python-facing tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tree:
    """A fitted honest tree.

    Row indices (``i_rows``, ``j_rows`` and everything derived from them) are
    positions in the subsample as passed to :func:`fit_tree`.  Node ``q`` owns
    ``i_rows[i_lo[q]:i_hi[q]]`` and ``j_rows[j_lo[q]:j_hi[q]]``; leaves have
    ``feature == -1``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    i_lo: np.ndarray
    i_hi: np.ndarray
    j_lo: np.ndarray
    j_hi: np.ndarray
    i_rows: np.ndarray
    j_rows: np.ndarray
    n_fallback: int
    s: int
    k: int
    alpha: float

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def node_i_rows(self, node: int) -> np.ndarray:
        return self.i_rows[self.i_lo[node]:self.i_hi[node]]

    def node_j_rows(self, node: int) -> np.ndarray:
        return self.j_rows[self.j_lo[node]:self.j_hi[node]]

    def leaves(self) -> list[np.ndarray]:
        """I-row sets of every leaf, in node order."""
        return [np.sort(self.node_i_rows(q)) for q in range(self.n_nodes) if self.is_leaf(q)]

    def apply(self, x0) -> int:
        x0 = np.ascontiguousarray(x0, dtype=np.float64)
        return int(_route(self.feature, self.threshold, self.left, self.right, x0))

    def structure(self) -> tuple:
        """Hashable summary of splits and leaf membership, for comparisons."""
        return (tuple(self.feature.tolist()), tuple(self.threshold.tolist()),
                tuple(tuple(leaf.tolist()) for leaf in self.leaves()))


def _seed_from(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    seed = int(rng)
    if not 0 <= seed < 2**64:
        raise ConfigurationError(f"tree seed must lie in [0, 2**64), got {seed}")
    return seed


def fit_tree(X, y, params: TreeParams, rng) -> Tree:
    """Fit an honest tree on a subsample.

    ``rng`` is either a numpy Generator (one seed is drawn from it) or the
    integer seed itself.  The fitted tree does not depend on the order of
    the subsample rows.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ConfigurationError(f"need an s x d matrix and s responses, got {X.shape}, {y.shape}")
    s, d = X.shape
    if s < 2 * params.k:
        raise SubsampleTooSmallError(f"subsample of size {s} is smaller than 2k = {2 * params.k}")
    mtry = params.resolve_mtry(d)
    seed = _seed_from(rng)
    order = canonical_order(X, y)
    out = _grow(np.ascontiguousarray(X[order]), y[order], np.uint64(_mix(np.uint64(seed))), params.k,
                params.alpha, mtry, params.random_split_prob)
    feature, threshold, left, right, ilo, ihi, jlo, jhi, I, J, n_fb = out
    if n_fb:
        logger.warning("tree has %d leaf(s) above 2k-1 = %d I-rows: no admissible split",
                       n_fb, 2 * params.k - 1)
    return Tree(feature, threshold, left, right, ilo, ihi, jlo, jhi,
                order[I], order[J], int(n_fb), s, params.k, params.alpha)


def leaf_weights(tree: Tree, x0, subsample_size: int | None = None) -> np.ndarray:
    """Weights ``S_i`` over subsample rows: ``1/m`` on the ``m`` I-rows of x0's leaf."""
    s = tree.s if subsample_size is None else subsample_size
    rows = tree.node_i_rows(tree.apply(x0))
    w = np.zeros(s)
    w[rows] = 1.0 / len(rows)
    return w


def predict(tree: Tree, x0, y) -> float:
    """Tree estimate at ``x0``: the mean I-response of the leaf containing it."""
    y = np.asarray(y, dtype=np.float64)
    vals = y[tree.node_i_rows(tree.apply(x0))]
    total = 0.0
    for v in vals:
        total += v - vals[0]
    return float(vals[0] + total / len(vals))
