import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcdg import features as F
from gcdg.numerics import STREAM_INIT, ShapeError, make_rng

from oracles import central_diff, rel_err


def test_zero_parameters_give_zero_features():
    net = F.FeatureNet(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
    z, _ = F.forward(net, [1.0, -2.0, 3.0])
    np.testing.assert_array_equal(z, [0.0, 0.0])


def test_small_weights_act_as_identity():
    eps = 1e-3
    net = F.FeatureNet(eps * np.eye(3), np.zeros(3), np.eye(3) / eps, np.zeros(3))
    x = np.array([0.3, -0.7, 1.1])
    z, _ = F.forward(net, x)
    np.testing.assert_allclose(z, x, atol=1e-4)


def test_golden_forward_seed_42():
    # recorded once from the implementation; guards against initialization drift
    net = F.FeatureNet.init_random(3, 4, 2, make_rng(42, STREAM_INIT))
    z, _ = F.forward(net, [0.5, -1.0, 2.0])
    assert z.tolist() == [1.5413765298348614, -0.4295338831361384]


def test_identity_net_passes_through():
    net = F.FeatureNet.identity_net(2)
    z, cache = F.forward(net, [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(z, [[1.0, 2.0], [3.0, 4.0]])
    assert net.n_params() == 0
    assert F.backward(net, cache, np.ones((2, 2)))["x"].tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_zero_upstream_gives_zero_grads():
    net = F.FeatureNet.init_random(3, 4, 2, make_rng(1))
    _, cache = F.forward(net, [0.1, 0.2, 0.3])
    for g in F.backward(net, cache, np.zeros(2)).values():
        assert not g.any()


def test_single_unit_closed_form():
    net = F.FeatureNet([[0.5]], [0.0], [[2.0]], [0.0])
    _, cache = F.forward(net, [1.0])
    g = F.backward(net, cache, [1.0])
    expected = 2.0 * (1.0 - math.tanh(0.5) ** 2)
    assert expected == pytest.approx(1.5729, abs=1e-4)
    assert g["W1"][0, 0] == pytest.approx(expected, abs=1e-15)


def test_shape_errors():
    net = F.FeatureNet.init_random(3, 4, 2, make_rng(1))
    with pytest.raises(ShapeError):
        F.forward(net, [1.0, 2.0])
    _, cache = F.forward(net, [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        F.backward(net, cache, np.ones(3))
    with pytest.raises(ShapeError):
        F.FeatureNet(np.zeros((4, 3)), np.zeros(5), np.zeros((2, 4)), np.zeros(2))


def test_stale_cache_rejected():
    net = F.FeatureNet.init_random(3, 4, 2, make_rng(1))
    _, cache = F.forward(net, [1.0, 2.0, 3.0])
    net.mark_updated()
    with pytest.raises(F.StaleCacheError):
        F.backward(net, cache, np.ones(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_backward_matches_finite_differences(fin, hidden, out, N, seed):
    rng = make_rng(seed)
    net = F.FeatureNet.init_random(fin, hidden, out, rng)
    net.b1[:] = 0.1 * rng.standard_normal(hidden)
    X = rng.standard_normal((N, fin))
    G = rng.standard_normal((N, out))

    def f():
        return float(np.sum(F.forward(net, X)[0] * G))

    _, cache = F.forward(net, X)
    g = F.backward(net, cache, G)
    arrays = [net.W1, net.b1, net.W2, net.b2, X]
    for name, fd in zip(["W1", "b1", "W2", "b2", "x"], central_diff(f, arrays)):
        assert rel_err(g[name], fd) < 1e-5, name


def test_copy_is_independent():
    net = F.FeatureNet.init_random(2, 3, 2, make_rng(0))
    twin = net.copy()
    twin.W1[0, 0] += 1.0
    assert net.W1[0, 0] != twin.W1[0, 0]
