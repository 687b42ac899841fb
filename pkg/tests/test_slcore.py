import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsl import slcore
from deepsl.errors import BracketFailure
from deepsl.fieldline import CoefficientTrace


@settings(max_examples=20, deadline=None)
@given(ip=st.floats(1.0, 10.0), q=st.floats(-10.0, 10.0), w=st.floats(0.1, 10.0),
       length=st.floats(0.3, 2.0), n=st.integers(1, 6))
def test_constant_coefficients_closed_form(ip, q, w, length, n):
    tr = CoefficientTrace.from_values(0.0, length, np.full(201, ip), q, w)
    lam = slcore.solve_nth(tr, n, 1e-10, 1e-10, 1e-10)
    exact = ((n * math.pi / length) ** 2 / ip + q) / w
    assert lam == pytest.approx(exact, rel=1e-7, abs=1e-7)
    lo, hi = slcore.eigen_bounds(tr, n)
    slack = 1e-7 * max(1.0, abs(exact))
    assert lo - slack <= lam <= hi + slack


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_bounds_contain_eigenvalues_for_linear_coefficients(seed):
    rng = np.random.default_rng(seed)
    tr = CoefficientTrace.from_values(0.0, rng.uniform(0.5, 2.0),
                                      np.linspace(*rng.uniform(1, 10, 2), 101),
                                      np.linspace(*rng.uniform(-10, 10, 2), 101),
                                      np.linspace(*rng.uniform(0.1, 10, 2), 101))
    spec = slcore.spectrum(tr, 4, 1e-9, 1e-10, 1e-10)
    assert np.all(np.diff(spec.lambdas) > 0)
    slack = 1e-7 * np.maximum(1, np.abs(spec.lambdas))
    assert np.all(spec.bounds[:, 0] - slack <= spec.lambdas)
    assert np.all(spec.lambdas <= spec.bounds[:, 1] + slack)


def test_residual_changes_sign_across_eigenvalue(unit_trace):
    lam = math.pi ** 2
    assert slcore.pruefer_residual(unit_trace, lam * 0.99, 1) < 0 < slcore.pruefer_residual(unit_trace, lam * 1.01, 1)


def test_basis_values_and_derivatives():
    tr = CoefficientTrace.from_values(0.0, 1.0, np.ones(2001), 0.0, 1.0, d=3)
    spec = slcore.spectrum(tr, 3, 1e-10, 1e-10, 1e-10)
    basis = slcore.eval_basis(tr, spec, 401)
    n = np.arange(1, 4)[:, None]
    assert np.max(np.abs(basis.du - np.cos(n * math.pi * basis.times))) < 1e-4
    assert np.allclose(basis.u_at_zero, 0.0, atol=1e-8)
    assert np.allclose(basis.lambdas, spec.lambdas, rtol=1e-6)


def test_initial_slope_scales_eigenfunction():
    tr = CoefficientTrace.from_values(0.0, 1.0, np.full(501, 2.0), 0.0, 1.0, v0=[3.0, 3.0])
    spec = slcore.spectrum(tr, 2, 1e-10, 1e-10, 1e-10)
    basis = slcore.eval_basis(tr, spec, 101)
    assert basis.du[:, 0] == pytest.approx([3.0, 3.0], rel=1e-6)


def test_count_sign_changes():
    assert slcore.count_sign_changes([1, -1, 1e-12, -1, 1]) == 2
    assert slcore.count_sign_changes([0, 0, 0]) == 0
    assert slcore.count_sign_changes([]) == 0


def test_fd_oracle_constant(unit_trace):
    vals = slcore.fd_oracle(unit_trace, 4, 2000)
    assert np.allclose(vals, (np.arange(1, 5) * math.pi) ** 2, rtol=1e-5)
    with pytest.raises(ValueError):
        slcore.fd_oracle(unit_trace, 5, 4)


def test_bad_arguments(unit_trace):
    with pytest.raises(ValueError):
        slcore.solve_nth(unit_trace, 0)
    with pytest.raises(ValueError):
        slcore.spectrum(unit_trace, 0)
    assert issubclass(BracketFailure, Exception)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000), factor=st.floats(0.2, 5.0))
def test_scaling_weight_divides_eigenvalues(seed, factor):
    from deepsl.selfcheck import random_trace
    tr = random_trace(np.random.default_rng(seed), K=400, d=4)
    q = np.zeros_like(tr.q_vals)
    base = CoefficientTrace(tr.knots, tr.inv_p_vals, q, tr.w_vals, tr.v0)
    scaled = CoefficientTrace(tr.knots, tr.inv_p_vals, q, tr.w_vals * factor, tr.v0)
    a = slcore.spectrum(base, 4, 1e-10, 1e-10, 1e-10).lambdas
    b = slcore.spectrum(scaled, 4, 1e-10, 1e-10, 1e-10).lambdas
    assert np.allclose(b, a / factor, rtol=1e-6)


def test_far_end_value_shrinks_with_tolerance():
    from deepsl.selfcheck import random_trace
    tr = random_trace(np.random.default_rng(5), K=1000, d=4)
    for tol in (1e-4, 1e-8):
        spec = slcore.spectrum(tr, 4, tol, 1e-10, 1e-10)
        basis = slcore.eval_basis(tr, spec, 501)
        scale = np.max(np.abs(basis.u), axis=1)
        assert np.all(np.abs(basis.u[:, -1]) <= 1e-8 * scale)
        assert np.allclose(basis.lambdas, spec.lambdas, rtol=max(10 * tol, 1e-5))
