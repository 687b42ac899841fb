import numpy as np
import pytest

from deepsl import gradflow
from deepsl.errors import SingularJacobian
from deepsl.model import DslModel, SolverConfig, forward_sample

TIGHT = SolverConfig(knots=50, tol_t=1e-10, tol_lambda=1e-10, rtol=1e-10, atol=1e-10)
X0 = np.array([0.4, 0.6])


@pytest.fixture(scope="module")
def tiny():
    model = DslModel.create(2, 2, 3, hidden=(4,), seed=0)
    return model, forward_sample(model, X0, TIGHT)


def test_jacobian_block_structure(tiny):
    model, fw = tiny
    state = gradflow.implicit_state(model, fw)
    d = model.d
    J = state.J_psi
    scale = np.max(np.abs(J))
    off = J[:d, :d] - np.diag(np.diag(J[:d, :d]))
    assert np.max(np.abs(off)) < 1e-8 * scale
    assert np.max(np.abs(J[d:, :d])) < 1e-8 * scale
    assert np.all(np.abs(np.diag(J)) > 0)


def test_residual_vanishes_at_solution(tiny):
    model, fw = tiny
    state = gradflow.implicit_state(model, fw)
    H = gradflow.mapping_residual(model, X0, state.psi, TIGHT, fw.basis.substeps)
    assert np.max(np.abs(H[:model.d])) < 1e-8
    assert np.max(np.abs(H[model.d:])) < 1e-8


def test_jacobian_matches_finite_differences_of_residual(tiny):
    model, fw = tiny
    state = gradflow.implicit_state(model, fw)
    psi = state.psi
    m = fw.basis.substeps
    numeric = np.empty_like(state.J_psi)
    for j in range(psi.size):
        h = 1e-6 * max(1.0, abs(psi[j]))
        e = np.zeros_like(psi)
        e[j] = h
        numeric[:, j] = (gradflow.mapping_residual(model, X0, psi + e, TIGHT, m)
                         - gradflow.mapping_residual(model, X0, psi - e, TIGHT, m)) / (2 * h)
    assert np.allclose(state.J_psi, numeric, rtol=1e-4, atol=1e-6 * np.max(np.abs(numeric)))


def test_singular_jacobian_raises():
    state = gradflow.ImplicitState(np.zeros(2), np.zeros(2), np.array([[1.0, 0.0], [0.0, 0.0]]), np.inf)
    with pytest.raises(SingularJacobian) as info:
        gradflow.solve_adjoint(state, np.ones(2))
    assert info.value.condition_estimate == np.inf


def test_gradient_matches_finite_differences():
    model = DslModel.create(2, 2, 2, hidden=(3,), seed=2)
    report = gradflow.fd_check(model, X0, 0, step=1e-5,
                               solver=SolverConfig(knots=30, tol_t=1e-10, tol_lambda=1e-10, rtol=1e-10, atol=1e-10))
    assert report.fraction_within >= 0.99
    assert report.max_rel_error <= 1e-2


def test_ablation_gradient_matches_finite_differences():
    model = DslModel.create(2, 2, 2, hidden=(3,), ablation=True, seed=1)
    report = gradflow.fd_check(model, X0, 1, step=1e-5, kind="hinge", alpha=0.1,
                               solver=SolverConfig(knots=30, tol_lambda=1e-10, rtol=1e-10, atol=1e-10))
    assert "a" not in report.per_network or report.per_network["a"] == 0.0
    assert report.max_rel_error <= 1e-3


def test_frozen_knots_keep_exit_terms(tiny):
    model, fw = tiny
    g = np.array([1.0, -0.5])
    full = gradflow.implicit_grad(model, X0, g, solver=TIGHT, forward=fw)
    frozen = gradflow.implicit_grad(model, X0, g, solver=SolverConfig(**{**TIGHT.__dict__, "freeze_knot_positions": True}),
                                    forward=fw)
    sl = model.group_slices()
    assert np.allclose(full[sl["inv_p"]], frozen[sl["inv_p"]])
    assert not np.allclose(full[sl["a"]], frozen[sl["a"]])
    assert np.any(frozen[sl["a"]] != 0)


def test_batch_gradient_is_sum_of_samples():
    model = DslModel.create(2, 2, 2, hidden=(3,), seed=5)
    solver = SolverConfig(knots=40, tol_t=1e-8, tol_lambda=1e-8, rtol=1e-8, atol=1e-8)
    X = np.array([[0.3, 0.5], [0.6, 0.4]])
    fws = [forward_sample(model, x, solver) for x in X]
    G = np.array([[1.0, 0.0], [0.0, -1.0]])
    total, used = gradflow.batch_grad(model, fws, G, None, solver)
    assert used.all()
    parts = sum(gradflow.implicit_grad(model, x, g, solver=solver, forward=fw) for x, g, fw in zip(X, G, fws))
    assert np.allclose(total, parts, rtol=1e-10, atol=1e-12)
