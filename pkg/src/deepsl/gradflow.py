"""Training gradients through the eigenvalues and exit times.

The eigenvalues and the two exit times ``psi = (lam_1..lam_d, t_minus,
t_plus)`` are defined implicitly by ``H(psi, theta) = 0`` with

    H_k     = u_k(t_plus)                  k = 1..d
    H_{d+1} = gamma_{j-}(t_minus)          smallest coordinate at the back exit
    H_{d+2} = gamma_{j+}(t_plus) - 1       largest coordinate at the front exit

where the coordinate indices are frozen at their forward-pass values.  For a
loss that depends on ``u(x)`` and ``lam``, the parameter gradient is the
direct derivative at fixed ``psi`` minus ``mu^T dH/dtheta``, with ``mu``
solving ``J_psi^T mu = dloss/dpsi``.

Everything is differentiated on the discretised problem: the fixed-step
eigenfunction march on the knot grid, and an RK4 march of the field line
on the same grid for the vector-field network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels, netfuncs, slcore
from .errors import SingularJacobian
from .fieldline import CoefficientTrace, field_fn, sample_ablation_coefficients
from .losses import loss_and_grad, spectral_penalty, spectral_penalty_grad
from .model import DslModel, SampleForward, SolverConfig, forward_sample, parallel_map
from .odeint import integrate, rk4_replay, rk4_replay_vjp

MAX_CONDITION = 1e12
# Minimum RK4 steps across a field line in the vector-field replay.
REPLAY_MIN_STEPS = 200


@dataclass(frozen=True)
class ImplicitState:
    psi: np.ndarray
    H: np.ndarray
    J_psi: np.ndarray
    condition_estimate: float


@dataclass
class _Partials:
    """Derivatives of H_k and U_k = u_k(x) for one sample (k = 1..d)."""

    H: np.ndarray
    U: np.ndarray
    H_coef: np.ndarray   # (d, 3, K+1) w.r.t. (1/p, q, w) knot values
    U_coef: np.ndarray
    H_lam: np.ndarray
    U_lam: np.ndarray
    H_v0: np.ndarray
    U_v0: np.ndarray
    H_T: np.ndarray
    U_T: np.ndarray
    U_s: np.ndarray


def _partials(fw: SampleForward) -> _Partials:
    tr, d = fw.trace, fw.basis.lambdas.size
    K = tr.K
    r0 = slcore.initial_flux(tr, d)
    ip0 = tr.inv_p_vals[0]
    coef = np.zeros((2, d, 3, K + 1))
    lam, v0, T, s = (np.zeros((2, d)) for _ in range(4))
    H, U = np.empty(d), np.empty(d)
    for i in range(d):
        H[i], U[i], g_ip, g_q, g_w, g_lam, g_T, g_s, g_r0 = _kernels.rk4_adjoint(
            tr.inv_p_vals, tr.q_vals, tr.w_vals, tr.length, fw.basis.lambdas[i], r0[i],
            fw.basis.substeps, tr.s_origin)
        coef[:, i, 0], coef[:, i, 1], coef[:, i, 2] = g_ip, g_q, g_w
        # r0 = v0 / (1/p)(t_minus)
        coef[:, i, 0, 0] -= g_r0 * r0[i] / ip0
        v0[:, i] = g_r0 / ip0
        lam[:, i], T[:, i], s[:, i] = g_lam, g_T, g_s
    return _Partials(H, U, coef[0], coef[1], lam[0], lam[1], v0[0], v0[1], T[0], T[1], s[1])


def _time_rates(model: DslModel, fw: SampleForward) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """d/dt of the knot coefficients and of v0 along the field line, and a at the knots."""
    Z = fw.trace.positions
    A = netfuncs.forward(model.a_net, Z)
    rates = np.stack([netfuncs.jvp(net, Z, A)[1][:, 0] for net in (model.p_net, model.q_net, model.w_net)])
    if model.v_net is not None:
        v_rate = netfuncs.jvp(model.v_net, Z[0], A[0])[1]
    else:
        v_rate = np.zeros(model.d)
    return rates, v_rate, A


def _assemble(model: DslModel, fw: SampleForward, P: _Partials):
    """Implicit state plus the psi-derivatives of U (rows: d eigen, then t_minus, t_plus)."""
    d, tr = model.d, fw.trace
    if model.ablation:
        J = np.diag(P.H_lam)
        psi = fw.basis.lambdas.copy()
        return ImplicitState(psi, P.H.copy(), J, _condition(J)), np.diag(P.U_lam), None
    rates, v_rate, A = _time_rates(model, fw)
    K = tr.K
    frac = np.arange(K + 1) / K
    tm, tp, T = tr.t_minus, tr.t_plus, tr.length

    def time_partials(coef, g_T, g_v0, g_s=None):
        moved = np.einsum("dck,ck->dk", coef, rates)
        d_tm = moved @ (1.0 - frac) - g_T + g_v0 * v_rate
        d_tp = moved @ frac + g_T
        if g_s is not None:
            d_tm = d_tm - g_s * tp / T ** 2
            d_tp = d_tp + g_s * tm / T ** 2
        return d_tm, d_tp

    H_tm, H_tp = time_partials(P.H_coef, P.H_T, P.H_v0)
    U_tm, U_tp = time_partials(P.U_coef, P.U_T, P.U_v0, P.U_s)
    j_minus, j_plus = fw.line.exit_minus, fw.line.exit_plus
    J = np.zeros((d + 2, d + 2))
    J[:d, :d] = np.diag(P.H_lam)
    J[:d, d] = H_tm
    J[:d, d + 1] = H_tp
    J[d, d] = A[0, j_minus]
    J[d + 1, d + 1] = A[-1, j_plus]
    Z = tr.positions
    H = np.concatenate([P.H, [Z[0, j_minus], Z[-1, j_plus] - 1.0]])
    psi = np.concatenate([fw.basis.lambdas, [tm, tp]])
    U_psi = np.zeros((d, d + 2))
    U_psi[:, :d] = np.diag(P.U_lam)
    U_psi[:, d] = U_tm
    U_psi[:, d + 1] = U_tp
    return ImplicitState(psi, H, J, _condition(J)), U_psi, (j_minus, j_plus)


def _condition(J: np.ndarray) -> float:
    if not np.all(np.isfinite(J)):
        return float("inf")
    return float(np.linalg.cond(J))


def implicit_state(model: DslModel, fw: SampleForward) -> ImplicitState:
    return _assemble(model, fw, _partials(fw))[0]


def solve_adjoint(state: ImplicitState, cotangent_psi) -> np.ndarray:
    """``mu`` with ``mu^T J_psi = cotangent^T``, from one linear solve."""
    if not state.condition_estimate < MAX_CONDITION:
        raise SingularJacobian(f"psi-Jacobian condition estimate {state.condition_estimate:.3e}",
                               state.condition_estimate)
    return np.linalg.solve(state.J_psi.T, np.asarray(cotangent_psi, dtype=float))


@dataclass
class _SampleCotangents:
    knots: np.ndarray            # (3, K+1) cotangents of (1/p, q, w) knot values
    v0: np.ndarray               # (d,)
    exits: Optional[tuple]       # ((j_minus, bar), (j_plus, bar)) on the end knots


def _sample_cotangents(model: DslModel, fw: SampleForward, g_u: np.ndarray,
                       g_lam: np.ndarray) -> _SampleCotangents:
    P = _partials(fw)
    state, U_psi, exits = _assemble(model, fw, P)
    d = model.d
    c = g_u @ U_psi
    c[:d] += g_lam
    mu = solve_adjoint(state, c)
    knots = np.einsum("d,dck->ck", g_u, P.U_coef) - np.einsum("d,dck->ck", mu[:d], P.H_coef)
    v0 = g_u * P.U_v0 - mu[:d] * P.H_v0
    exit_bars = None
    if exits is not None:
        exit_bars = ((exits[0], -mu[d]), (exits[1], -mu[d + 1]))
    return _SampleCotangents(knots, v0, exit_bars)


def _replay_schedule(fws: list[SampleForward], K: int):
    """RK4 steps from each sample to every knot, forward and backward rows.

    Each knot interval is split into the same number of substeps; ``target``
    names the knot reached after a step, or -1 between knots.
    """
    B = len(fws)
    sub = max(1, -(-REPLAY_MIN_STEPS // K))
    J = (K + 1) * sub
    steps = np.zeros((J, 2 * B))
    target = np.full((J, 2 * B), -1, dtype=int)
    used = 1
    for b, fw in enumerate(fws):
        tm, T = fw.trace.t_minus, fw.trace.length
        h = T / K
        k0 = min(max(int(np.floor(-tm / h)), 0), K - 1)
        for col, first, rest, knots in ((b, tm + (k0 + 1) * h, h, np.arange(k0 + 1, K + 1)),
                                        (B + b, tm + k0 * h, -h, np.arange(k0, -1, -1))):
            sizes = np.repeat(np.concatenate([[first], np.full(knots.size - 1, rest)]) / sub, sub)
            steps[:sizes.size, col] = sizes
            target[sub - 1:sizes.size:sub, col] = knots
            used = max(used, sizes.size)
    return steps[:used], target[:used]


def _vector_field_grad(model: DslModel, fws: list[SampleForward], zbars: list[np.ndarray]) -> np.ndarray:
    K = fws[0].trace.K
    B = len(fws)
    steps, target = _replay_schedule(fws, K)
    X = np.stack([fw.x for fw in fws])
    Y0 = np.vstack([X, X])
    cots = np.zeros(steps.shape + (model.n,))
    for r in range(2 * B):
        zb = zbars[r % B]
        valid = target[:, r] >= 0
        cots[valid, r] = zb[target[valid, r]]
    a = model.a_net
    _, stage_in = rk4_replay(lambda Y: netfuncs.forward(a, Y), Y0, steps)
    acc = np.zeros(a.size)

    def vjp_rows(Y, cot):
        nonlocal acc
        gin, gp = netfuncs.backprop(a, Y, cot)
        acc += gp.flat()
        return gin

    rk4_replay_vjp(vjp_rows, stage_in, steps, cots)
    return acc


def batch_grad(model: DslModel, fws: list[SampleForward], g_logits: np.ndarray,
               g_lambdas: Optional[np.ndarray] = None, solver: SolverConfig = SolverConfig()):
    """Summed parameter gradient over samples, given logit and eigenvalue cotangents.

    Returns ``(flat_gradient, used)`` where ``used`` flags the samples whose
    psi-Jacobian was solvable; the others contribute nothing.
    """
    B = len(fws)
    g_logits = np.atleast_2d(np.asarray(g_logits, dtype=float))
    if g_lambdas is None:
        g_lambdas = np.zeros((B, model.d))
    sl = model.group_slices()
    grad = np.zeros(model.size)
    g_u = g_logits @ model.head_L

    def one(b):
        try:
            return _sample_cotangents(model, fws[b], g_u[b], g_lambdas[b])
        except SingularJacobian as exc:
            return exc

    results = parallel_map(one, [(b,) for b in range(B)], solver.threads)
    used = np.array([not isinstance(r, Exception) for r in results])
    idx = np.flatnonzero(used)
    if idx.size == 0:
        return grad, used
    grad[sl["L"]] = (g_logits[idx].T @ np.stack([fws[b].u for b in idx])).ravel()
    if "bias" in sl:
        grad[sl["bias"]] = g_logits[idx].sum(axis=0)
    keep = [fws[b] for b in idx]
    cots = [results[b] for b in idx]
    Z = np.concatenate([fw.trace.positions for fw in keep])
    C = np.concatenate([c.knots.T for c in cots])
    zbar = np.zeros_like(Z)
    for col, name in enumerate(("inv_p", "q", "w")):
        gin, gp = netfuncs.backprop(model.nets()[name], Z, C[:, col:col + 1])
        grad[sl[name]] = gp.flat()
        zbar += gin
    K1 = keep[0].trace.K + 1
    if model.v_net is not None:
        Z0 = Z[::K1]
        gin, gp = netfuncs.backprop(model.v_net, Z0, np.stack([c.v0 for c in cots]))
        grad[sl["v"]] = gp.flat()
        zbar[::K1] += gin
    if model.ablation:
        return grad, used
    if solver.freeze_knot_positions:
        zbar[:] = 0.0
    zbars = [zbar[j * K1:(j + 1) * K1].copy() for j in range(len(keep))]
    for zb, c in zip(zbars, cots):
        (jm, bm), (jp, bp) = c.exits
        zb[0, jm] += bm
        zb[-1, jp] += bp
    grad[sl["a"]] = _vector_field_grad(model, keep, zbars)
    return grad, used


def implicit_grad(model: DslModel, x, upstream, upstream_lambda=None,
                  solver: SolverConfig = SolverConfig(), forward: Optional[SampleForward] = None) -> np.ndarray:
    """Flat parameter gradient (all networks and the head) for one sample.

    ``upstream`` is the loss gradient with respect to the logits and
    ``upstream_lambda`` the optional gradient with respect to the eigenvalues.
    """
    fw = forward if forward is not None else forward_sample(model, x, solver)
    g_lam = None if upstream_lambda is None else np.asarray(upstream_lambda, dtype=float)[None, :]
    grad, used = batch_grad(model, [fw], np.asarray(upstream, dtype=float)[None, :], g_lam, solver)
    if not used[0]:
        state = implicit_state(model, fw)
        raise SingularJacobian("psi-Jacobian is singular", state.condition_estimate)
    return grad


def mapping_residual(model: DslModel, x, psi, solver: SolverConfig = SolverConfig(),
                     substeps: Optional[int] = None) -> np.ndarray:
    """H at the supplied eigenvalues and exit times, recomputed without any search."""
    psi = np.asarray(psi, dtype=float)
    x = np.asarray(x, dtype=float)
    d, K = model.d, solver.knots
    lam = psi[:d]
    if model.ablation:
        tr = sample_ablation_coefficients(x, model.p_net, model.q_net, model.w_net, K, d)
        ends = None
    else:
        tm, tp = psi[d], psi[d + 1]
        if not tm < 0 < tp:
            raise ValueError("need t_minus < 0 < t_plus")
        a = field_fn(model.a_net)

        def rhs(t, y):
            return a(y[None, :])[0]

        fwd = integrate(rhs, x, 0.0, tp, solver.rtol, solver.atol, solver.max_steps)
        bwd = integrate(rhs, x, 0.0, tm, solver.rtol, solver.atol, solver.max_steps)
        knots = tm + (tp - tm) * np.arange(K + 1) / K
        Z = np.empty((K + 1, model.n))
        Z[knots >= 0] = fwd(knots[knots >= 0])
        Z[knots < 0] = bwd(knots[knots < 0])
        Z[-1] = fwd(tp)
        Z[0] = bwd(tm)
        v0 = netfuncs.forward(model.v_net, Z[0]) if model.v_net is not None else np.ones(d)
        tr = CoefficientTrace(knots, netfuncs.forward(model.p_net, Z)[:, 0],
                              netfuncs.forward(model.q_net, Z)[:, 0],
                              netfuncs.forward(model.w_net, Z)[:, 0], v0, 0.0, Z)
        ends = (Z[0].min(), Z[-1].max() - 1.0)
    m = substeps if substeps is not None else slcore.substeps_for(tr, lam)
    r0 = slcore.initial_flux(tr, d)
    H = np.array([_kernels.rk4_end(tr.inv_p_vals, tr.q_vals, tr.w_vals, tr.length, lam[i], r0[i], m)
                  for i in range(d)])
    return H if ends is None else np.concatenate([H, ends])


@dataclass(frozen=True)
class FdReport:
    max_rel_error: float
    fraction_within: float
    per_network: dict
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray


def sample_loss(model: DslModel, x, y: int, kind: str, alpha: float, solver: SolverConfig) -> float:
    fw = forward_sample(model, x, solver)
    return loss_and_grad(fw.logits, y, kind)[0] + spectral_penalty(fw.lambdas, alpha)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    floor = 1e-6 * np.max(np.abs(numeric)) + 1e-10
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)


def fd_check(model: DslModel, x, y: int, step: float = 1e-5, kind: str = "squared", alpha: float = 0.0,
             solver: Optional[SolverConfig] = None, tol: float = 1e-3) -> FdReport:
    """Compare :func:`implicit_grad` with central differences of the full sample loss.

    Solver tolerances default to 1e-10 so that the differences resolve the
    implemented function.
    """
    if solver is None:
        solver = SolverConfig(knots=50, tol_t=1e-10, tol_lambda=1e-10, rtol=1e-10, atol=1e-10)
    fw = forward_sample(model, x, solver)
    g_logits = loss_and_grad(fw.logits, y, kind)[1]
    analytic = implicit_grad(model, x, g_logits, spectral_penalty_grad(fw.lambdas, alpha), solver, fw)
    theta = model.flat()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        up = sample_loss(model.with_flat(theta + e), x, y, kind, alpha, solver)
        down = sample_loss(model.with_flat(theta - e), x, y, kind, alpha, solver)
        numeric[i] = (up - down) / (2 * step)
    rel = relative_errors(analytic, numeric)
    per = {name: float(rel[s].max()) if s.stop > s.start else 0.0 for name, s in model.group_slices().items()}
    return FdReport(float(rel.max()), float(np.mean(rel <= tol)), per, analytic, numeric, rel)
