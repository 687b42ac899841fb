import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsl import odeint
from deepsl.errors import MaxStepsExceeded, NoEventDetected


def test_exponential_decay_matches_closed_form():
    sol = odeint.integrate(lambda t, y: -y, [1.0], 0.0, 2.0, rtol=1e-10, atol=1e-12)
    t = np.linspace(0.0, 2.0, 11)
    assert np.allclose(sol(t)[:, 0], np.exp(-t), rtol=1e-8)


def test_backward_integration():
    sol = odeint.integrate(lambda t, y: y, [1.0], 0.0, -1.0, rtol=1e-10, atol=1e-12)
    assert sol.direction == -1
    assert sol(-1.0)[0] == pytest.approx(np.exp(-1.0), rel=1e-8)


def test_harmonic_oscillator_dense_output():
    def rhs(t, y):
        return np.array([y[1], -y[0]])
    sol = odeint.integrate(rhs, [0.0, 1.0], 0.0, 10.0, rtol=1e-10, atol=1e-12)
    t = np.linspace(0.0, 10.0, 97)
    assert np.max(np.abs(sol(t)[:, 0] - np.sin(t))) < 1e-7


def test_event_location_linear_motion():
    t_ev, y_ev, _ = odeint.integrate_to_event(lambda t, y: np.array([0.3]), [0.1], 0.0, 1,
                                              lambda y: y[0] - 1.0, tol_t=1e-12)
    assert t_ev == pytest.approx(3.0, abs=1e-10)
    assert y_ev[0] == pytest.approx(1.0, abs=1e-10)


def test_event_backward():
    t_ev, _ = odeint.locate_event(lambda t, y: np.array([0.5]), [0.4], 0.0, "backward",
                                     lambda y: y[0], tol_t=1e-12)
    assert t_ev == pytest.approx(-0.8, abs=1e-10)


def test_event_never_happens():
    with pytest.raises((NoEventDetected, MaxStepsExceeded)):
        odeint.integrate_to_event(lambda t, y: -y, [1.0], 0.0, 1, lambda y: y[0] - 2.0,
                                  max_steps=200, horizon=50.0)


def test_max_steps():
    with pytest.raises(MaxStepsExceeded):
        odeint.integrate(lambda t, y: np.array([np.cos(50 * t)]), [0.0], 0.0, 100.0, max_steps=10)


@settings(max_examples=25, deadline=None)
@given(rate=st.floats(0.05, 2.0), start=st.floats(0.0, 0.9))
def test_event_time_property(rate, start):
    t_ev, _, _ = odeint.integrate_to_event(lambda t, y: np.array([rate]), [start], 0.0, 1,
                                           lambda y: y[0] - 1.0, tol_t=1e-10)
    assert t_ev == pytest.approx((1.0 - start) / rate, rel=1e-8, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rk4_replay_vjp_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(2, 2))

    def rhs(Y):
        return np.tanh(Y @ M.T)

    def vjp(Y, cot):
        return (cot * (1 - np.tanh(Y @ M.T) ** 2)) @ M

    y0 = rng.normal(size=(3, 2))
    steps = rng.uniform(0.0, 0.1, size=(6, 3))
    steps[rng.random((6, 3)) < 0.3] = 0.0
    cot = rng.normal(size=(6, 3, 2))

    def objective(y):
        return float(np.sum(odeint.rk4_replay(rhs, y, steps)[0] * cot))

    _, stages = odeint.rk4_replay(rhs, y0, steps)
    g = odeint.rk4_replay_vjp(vjp, stages, steps, cot)
    eps = 1e-6
    fd = np.zeros_like(y0)
    for idx in np.ndindex(*y0.shape):
        e = np.zeros_like(y0)
        e[idx] = eps
        fd[idx] = (objective(y0 + e) - objective(y0 - e)) / (2 * eps)
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_dense_output_exact_at_mesh_points():
    def rhs(t, y):
        return np.array([y[1], -np.sin(y[0])])
    sol = odeint.integrate(rhs, [1.0, 0.0], 0.0, 5.0)
    assert np.array_equal(sol(sol.mesh), sol.y_mesh)


def test_tighter_tolerance_never_worse():
    errors = []
    for tol in (1e-4, 5e-5, 2.5e-5, 1.25e-5, 6.25e-6):
        sol = odeint.integrate(lambda t, y: -y, [1.0], 0.0, 3.0, rtol=tol, atol=tol)
        errors.append(abs(sol(3.0)[0] - np.exp(-3.0)))
    assert all(b <= a for a, b in zip(errors, errors[1:]))


@settings(max_examples=20, deadline=None)
@given(freq=st.floats(0.5, 3.0), tol=st.sampled_from([1e-4, 1e-6, 1e-9]))
def test_event_bracket_contains_sign_change(freq, tol):
    def rhs(t, y):
        return np.array([freq * np.cos(freq * t)])
    def event(y):
        return y[0] - 0.5
    t_ev, _, sol = odeint.integrate_to_event(rhs, [0.0], 0.0, 1, event, tol_t=tol, rtol=1e-10, atol=1e-12)
    before = event(sol(max(t_ev - tol, 0.0)))
    after = event(odeint.integrate(rhs, [0.0], 0.0, t_ev + tol, rtol=1e-10, atol=1e-12)(t_ev + tol))
    assert before <= 0 <= after
    assert t_ev == pytest.approx(np.arcsin(0.5) / freq, abs=2 * tol)
