import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsl import netfuncs
from deepsl.errors import ShapeMismatch


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), role=st.sampled_from(sorted(netfuncs.DEFAULT_RANGES)),
       scale=st.floats(0.1, 100.0))
def test_outputs_stay_in_range(seed, role, scale):
    lo, hi = netfuncs.DEFAULT_RANGES[role]
    net = netfuncs.init([3, 8, 1], "leaky-relu", (lo, hi), seed=seed)
    X = scale * np.random.default_rng(seed).normal(size=(50, 3))
    out = netfuncs.forward(net, X)
    assert np.all(out >= lo) and np.all(out <= hi)


@pytest.mark.parametrize("activation", ["leaky-relu", "tanh"])
def test_backprop_matches_finite_differences(activation):
    net = netfuncs.init([3, 5, 4, 2], activation, (0.1, 10.0), seed=3)
    rng = np.random.default_rng(0)
    X = rng.uniform(0.2, 0.8, size=(4, 3))
    cot = rng.normal(size=(4, 2))
    gx, gp = netfuncs.backprop(net, X, cot)
    theta = net.flat()

    def f(th):
        return float(np.sum(netfuncs.forward(net.with_flat(th), X) * cot))

    eps = 1e-6
    fd = np.array([(f(theta + eps * e) - f(theta - eps * e)) / (2 * eps) for e in np.eye(theta.size)])
    assert np.allclose(gp.flat(), fd, rtol=1e-5, atol=1e-8)
    fdx = np.zeros_like(X)
    for idx in np.ndindex(*X.shape):
        E = np.zeros_like(X)
        E[idx] = eps
        fdx[idx] = (np.sum(netfuncs.forward(net, X + E) * cot) - np.sum(netfuncs.forward(net, X - E) * cot)) / (2 * eps)
    assert np.allclose(gx, fdx, rtol=1e-5, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_jvp_and_vjp_are_adjoint(seed):
    rng = np.random.default_rng(seed)
    net = netfuncs.init([2, 6, 2], "tanh", (0.01, 1.0), seed=seed)
    x, v, c = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
    _, jv = netfuncs.jvp(net, x, v)
    assert float(c @ jv) == pytest.approx(float(netfuncs.input_vjp(net, x, c) @ v), rel=1e-10, abs=1e-12)


def test_flat_roundtrip():
    net = netfuncs.init([2, 3, 1], seed=1)
    again = net.with_flat(net.flat())
    assert np.array_equal(again.flat(), net.flat())
    with pytest.raises((ShapeMismatch, ValueError)):
        net.with_flat(np.zeros(net.size + 1))


def test_input_shape_checked():
    net = netfuncs.init([2, 3, 1], seed=1)
    with pytest.raises(ShapeMismatch):
        netfuncs.forward(net, np.zeros(3))


def test_orthogonal_init_rows():
    net = netfuncs.init([4, 4, 1], scheme="orthogonal", seed=2)
    W = net.weights[0]
    assert np.allclose(W @ W.T, np.eye(4), atol=1e-12)
    with pytest.raises(ValueError):
        netfuncs.init([2, 2], scheme="he")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), role=st.sampled_from(sorted(netfuncs.DEFAULT_RANGES)), bump=st.floats(0.01, 3.0))
def test_squash_is_monotone(seed, role, bump):
    net = netfuncs.init([2, 4, 1], "leaky-relu", netfuncs.DEFAULT_RANGES[role], seed=seed)
    x = np.random.default_rng(seed).uniform(size=(5, 2))
    raised = net.with_arrays([*net.arrays()[:-1], net.biases[-1] + bump])
    assert np.all(netfuncs.forward(raised, x) > netfuncs.forward(net, x))


def test_zero_network_gives_range_midpoint():
    net = netfuncs.init([3, 4, 1], "leaky-relu", (1.0, 10.0))
    zero = net.with_flat(np.zeros(net.size))
    assert netfuncs.forward(zero, np.array([0.2, 0.3, 0.4]))[0] == pytest.approx(5.5)


def test_tanh_identity_layer():
    net = netfuncs.MlpParams((3, 3), [np.eye(3)], [np.zeros(3)], "tanh")
    x = np.array([-0.5, 0.1, 2.0])
    assert np.allclose(netfuncs.forward(net, x), np.tanh(x))
