import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uel.ensemble import EnsembleFit
from uel.errors import ConfigurationError
from uel.pseudo import (ADD, SUBTRACT, exclusion_sums, modified_values, pseudo_anchors,
                        pseudo_values, values_at, variance_components)

from conftest import enumeration_fit, random_fit


def _fit(values, memberships, n):
    memberships = np.asarray(memberships)
    return EnsembleFit(n=n, s=memberships.shape[1], tree_values=np.asarray(values, float),
                       memberships=memberships, x0=np.zeros(1))


def test_exclusion_sums_by_hand():
    T, excluded = exclusion_sums(_fit([5, 7], [[0], [1]], 2))
    np.testing.assert_array_equal(T, [5, 7])
    np.testing.assert_array_equal(excluded, [1, 1])


def test_unused_row():
    T, excluded = exclusion_sums(_fit([5, 7], [[0], [1]], 3))
    assert T[2] == 0 and excluded[2] == 2


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 60), B=st.integers(1, 200))
def test_sum_identities(seed, n, B):
    rng = np.random.default_rng(seed)
    s = int(rng.integers(1, n))
    fit = random_fit(rng, n, s, B)
    T, _ = exclusion_sums(fit)
    assert T.sum() == pytest.approx(s * fit.tree_values.sum(), abs=1e-9 * s * B)
    pvs = pseudo_values(fit)
    scale = n * (1 + abs(fit.theta_hat)) + np.abs(pvs.anchors).sum()
    assert abs(pvs.anchors.sum() - n * fit.theta_hat) <= 1e-12 * scale
    assert abs(values_at(pvs, pvs.theta_hat).sum()) <= 1e-12 * scale
    theta = fit.theta_hat + rng.normal()
    assert modified_values(pvs, theta).mean() == pytest.approx(
        -pvs.c * (theta - fit.theta_hat), abs=1e-12 * scale)


def test_four_point_enumeration():
    pvs = pseudo_anchors(enumeration_fit(np.array([1.0, 2.0, 3.0, 4.0]), 2))
    np.testing.assert_allclose(pvs.anchors, [1, 2, 3, 4], rtol=1e-13)
    assert pvs.theta_hat == 2.5
    assert pvs.b1 == 3.0


@pytest.mark.parametrize("n", range(4, 9))
@pytest.mark.parametrize("s", [1, 2, 3])
def test_enumeration_recovers_responses(n, s):
    if s >= n:
        return
    y = np.random.default_rng(100 * n + s).normal(size=n)
    pvs = pseudo_anchors(enumeration_fit(y, s))
    np.testing.assert_allclose(pvs.anchors, y, rtol=1e-12, atol=1e-12)


def test_needs_more_rows_than_subsample():
    fit = _fit([1.0], [[0, 1]], 3)
    object.__setattr__(fit, "n", 2)
    with pytest.raises(ConfigurationError):
        pseudo_anchors(fit)


def test_row_in_every_tree_warns(caplog):
    fit = _fit([1.0, 2.0, 4.0], [[0, 1], [0, 2], [0, 1]], 4)
    with caplog.at_level("WARNING", logger="uel.pseudo"):
        pvs = pseudo_anchors(fit)
    assert "every tree" in caplog.text
    assert np.isfinite(pvs.anchors).all()


def test_identical_trees_give_constant_anchors():
    rng = np.random.default_rng(1)
    fit = random_fit(rng, 20, 6, 40)
    object.__setattr__(fit, "tree_values", np.full(40, 3.25))
    object.__setattr__(fit, "theta_hat", 3.25)
    pvs = pseudo_values(fit)
    np.testing.assert_array_equal(pvs.anchors, 3.25)
    assert pvs.degenerate and pvs.v1 == 0 and pvs.c == 1


def test_v1_and_v2_examples():
    fit = enumeration_fit(np.array([1.0, 2.0, 3.0, 4.0]), 2)
    pvs = pseudo_anchors(fit)
    v1, v2, _ = variance_components(pvs, fit)
    assert v1 == pytest.approx(1.25, rel=1e-12)
    # six subsets, kernel variance of the pair means is 5/12
    zeta = np.var(fit.tree_values)
    assert v2 == pytest.approx(4 * 1 / 6 * zeta, rel=1e-12)


def test_v2_formula_with_given_kernel_variance():
    # n=4, s=2, B=6 with kernel variance 2/3 -> v2 = 4/9
    values = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    assert np.var(values) == pytest.approx(2 / 3)
    fit = _fit(values, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], 4)
    v1, v2, c = variance_components(pseudo_anchors(fit), fit)
    assert v2 == pytest.approx(4 / 9, rel=1e-12)


def test_s1_has_no_subsampling_component():
    rng = np.random.default_rng(2)
    fit = random_fit(rng, 12, 1, 300)
    for adjustment in (SUBTRACT, ADD):
        v1, v2, c = variance_components(pseudo_anchors(fit), fit, adjustment)
        assert v2 == 0 and c == 1


def test_scale_factor_by_adjustment():
    rng = np.random.default_rng(3)
    fit = random_fit(rng, 40, 10, 400)
    pvs_sub = pseudo_values(fit, SUBTRACT)
    pvs_add = pseudo_values(fit, ADD)
    v1, v2 = pvs_sub.v1, pvs_sub.v2
    assert 0 < v2 < v1
    assert pvs_sub.c == pytest.approx(math.sqrt(v1 / (v1 - v2)), rel=1e-14)
    assert pvs_add.c == pytest.approx(math.sqrt(v1 / (v1 + v2)), rel=1e-14)
    assert pvs_add.c < 1 < pvs_sub.c
    with pytest.raises(ConfigurationError):
        variance_components(pvs_sub, fit, "multiply")


def test_net_variance_fallback(caplog):
    # both trees use rows {0, 1}: the jackknife sees almost no spread while
    # the tree-to-tree variance is large
    fit = _fit([1.0, -0.9], [[0, 1], [0, 1]], 3)
    with caplog.at_level("WARNING", logger="uel.pseudo"):
        pvs = pseudo_values(fit, SUBTRACT)
    assert pvs.v2 >= pvs.v1
    assert pvs.c == 1.0 and pvs.net_variance_fallback
    assert "falls back" in caplog.text


def test_modified_values_examples():
    pvs = pseudo_values(enumeration_fit(np.array([1.0, 2.0, 3.0, 4.0]), 2))
    np.testing.assert_allclose(modified_values(pvs, pvs.theta_hat), pvs.anchors - 2.5)
    half = replace(pvs, c=0.5)
    np.testing.assert_allclose(modified_values(half, 3.5), [-2, -1, 0, 1], atol=1e-12)
    one = replace(pvs, c=1.0)
    for theta in (-1.0, 0.3, 2.5, 7.0):
        np.testing.assert_allclose(modified_values(one, theta), values_at(pvs, theta),
                                   atol=1e-12)


def test_modified_values_need_c():
    pvs = pseudo_anchors(enumeration_fit(np.arange(5.0), 2))
    with pytest.raises(ConfigurationError):
        modified_values(pvs, 0.0)


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    fit = random_fit(rng, 25, 7, 150)
    pvs = pseudo_values(fit)
    tree_perm = rng.permutation(fit.B)
    by_tree = pseudo_values(EnsembleFit(n=25, s=7, tree_values=fit.tree_values[tree_perm],
                                        memberships=fit.memberships[tree_perm], x0=fit.x0))
    assert (by_tree.v1, by_tree.v2) == pytest.approx((pvs.v1, pvs.v2), rel=1e-12)
    relabel = rng.permutation(25)
    by_row = pseudo_values(EnsembleFit(n=25, s=7, tree_values=fit.tree_values,
                                       memberships=np.sort(relabel[fit.memberships], axis=1),
                                       x0=fit.x0))
    np.testing.assert_allclose(by_row.anchors[relabel], pvs.anchors, rtol=1e-12)
    assert (by_row.v1, by_row.v2) == pytest.approx((pvs.v1, pvs.v2), rel=1e-12)
