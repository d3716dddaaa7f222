import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcdg.hlc import GmmClassifier, GmmComponent
from gcdg.numerics import DomainError, ShapeError, make_rng
from gcdg.scb import (ScbConfig, ScbRoute, activation, apply_scb, batch_masks, build_mask, plan_scb,
                      shuffle_pair)

UNIT = GmmComponent([0.0, 0.0], [0.0, 0.0])


def test_activation_examples():
    np.testing.assert_array_equal(activation(UNIT, [0.0, 3.0]), [0.0, -4.5])


@given(st.floats(0, 10), st.floats(0, 10), st.floats(-3, 3))
def test_activation_decreases_with_distance(d1, d2, lv):
    comp = GmmComponent([0.0], [lv])
    a1, a2 = activation(comp, [d1])[0], activation(comp, [d2])[0]
    if d1 < d2:
        assert a1 > a2 or math.isclose(a1, a2, abs_tol=1e-12)


def test_build_mask_examples():
    np.testing.assert_array_equal(build_mask([0.0, -4.5], 50).bits, [1, 0])
    assert build_mask([1.0, 2.0, 3.0, 4.0], 99).bits.sum() == 0
    # ties at the threshold are all masked
    np.testing.assert_array_equal(build_mask([1.0, 1.0, 1.0, 5.0], 25).bits, [0, 0, 0, 1])


@pytest.mark.parametrize("q", [10, 20, 30])
@pytest.mark.parametrize("D", [4, 8, 10, 16])
def test_mask_cardinality_on_distinct_activations(q, D):
    a = make_rng(D).permutation(D).astype(float)
    assert build_mask(a, q).n_masked == math.ceil(q * D / 100)


def test_scb_config_validates_q():
    with pytest.raises(DomainError):
        ScbConfig(q=0)
    with pytest.raises(DomainError):
        ScbConfig(q=100)


def test_shuffle_pair_worked_example():
    z_m, z_n = np.array([0.1, 3.0]), np.array([0.2, -2.0])
    m_m, m_n = build_mask(activation(UNIT, z_m), 50), build_mask(activation(UNIT, z_n), 50)
    np.testing.assert_array_equal(m_m.bits, [1, 0])
    np.testing.assert_array_equal(m_n.bits, [1, 0])
    a, b = shuffle_pair(z_m, z_n, m_m, m_n)
    np.testing.assert_array_equal(a, [0.1, -2.0])
    np.testing.assert_array_equal(b, [0.2, 3.0])


def test_shuffle_pair_fixed_points():
    z = np.array([1.0, 2.0, 3.0])
    m = np.array([1, 0, 1])
    a, b = shuffle_pair(z, z, m, m)
    np.testing.assert_array_equal(a, z)
    np.testing.assert_array_equal(b, z)
    ones = np.ones(3)
    a, b = shuffle_pair(z, -z, ones, ones)
    np.testing.assert_array_equal(a, z)
    np.testing.assert_array_equal(b, -z)


def test_shuffle_pair_differing_masks_follow_formula():
    z_m, z_n = np.array([1.0, 2.0]), np.array([10.0, 20.0])
    a, b = shuffle_pair(z_m, z_n, np.array([1, 0]), np.array([0, 1]))
    np.testing.assert_array_equal(a, [1.0 + 10.0, 0.0])
    np.testing.assert_array_equal(b, [0.0, 20.0 + 2.0])


def test_shuffle_pair_shape_mismatch():
    with pytest.raises(ShapeError):
        shuffle_pair([1.0], [1.0, 2.0], [1], [1, 1])


def _random_batch(seed, N=12, D=6, C=3, K=2):
    rng = make_rng(seed)
    clf = GmmClassifier(rng.standard_normal((C, K, D)), 0.3 * rng.standard_normal((C, K, D)))
    Z = rng.standard_normal((N, D))
    y = rng.integers(0, C, N)
    comps = rng.integers(0, K, N)
    return clf, Z, y, comps


def test_disabled_is_bit_exact_noop():
    clf, Z, y, comps = _random_batch(1)
    out = apply_scb(Z, y, clf, comps, ScbConfig(enabled=False), make_rng(0))
    assert out is not Z
    assert out.tobytes() == Z.tobytes()


def test_single_sample_per_class_unchanged():
    clf, Z, _, comps = _random_batch(2, N=3)
    out = apply_scb(Z, np.array([0, 1, 2]), clf, comps, ScbConfig(), make_rng(0))
    np.testing.assert_array_equal(out, Z)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([10, 20, 30, 50]))
def test_pairs_stay_within_class_and_conserve_values_when_masks_agree(seed, q):
    clf, Z, y, comps = _random_batch(seed)
    route = plan_scb(Z, y, clf, comps, ScbConfig(q=q), make_rng(seed))
    out = route.forward(Z)
    paired = np.concatenate([route.left, route.right])
    assert len(set(paired.tolist())) == paired.size
    for l, r in zip(route.left, route.right):
        assert y[l] == y[r]
        if np.array_equal(route.masks[l], route.masks[r]):
            for d in range(Z.shape[1]):
                assert sorted([out[l, d], out[r, d]]) == sorted([Z[l, d], Z[r, d]])
    unpaired = np.setdiff1d(np.arange(len(y)), paired)
    np.testing.assert_array_equal(out[unpaired], Z[unpaired])


def test_route_masks_match_per_sample_percentile():
    clf, Z, y, comps = _random_batch(4, D=10)
    route = plan_scb(Z, y, clf, comps, ScbConfig(q=30), make_rng(4))
    for n in np.concatenate([route.left, route.right]):
        expected = build_mask(activation(clf.component(y[n], comps[n]), Z[n]), 30).bits
        np.testing.assert_array_equal(route.masks[n], expected)


def test_route_backward_is_adjoint_of_forward():
    clf, Z, y, comps = _random_batch(5)
    route = plan_scb(Z, y, clf, comps, ScbConfig(), make_rng(5))
    rng = make_rng(6)
    X, G = rng.standard_normal(Z.shape), rng.standard_normal(Z.shape)
    assert np.sum(route.forward(X) * G) == pytest.approx(np.sum(X * route.backward(G)), abs=1e-12)


def test_batch_masks_rows_match_build_mask():
    A = make_rng(8).standard_normal((5, 7))
    M = batch_masks(A, 20)
    for row, m in zip(A, M):
        np.testing.assert_array_equal(m, build_mask(row, 20).bits)


def test_route_with_no_pairs():
    Z = np.ones((1, 2))
    r = ScbRoute(np.ones_like(Z), np.array([], dtype=int), np.array([], dtype=int))
    np.testing.assert_array_equal(r.forward(Z), Z)
    np.testing.assert_array_equal(r.backward(Z), Z)
