"""Sturm-Liouville eigenpairs along a coefficient trace.

Solves ``-(p u')' + q u = lam w u`` with ``u(t_minus) = u(t_plus) = 0`` by
Prüfer shooting: ``theta`` obeys ``theta' = cos^2(theta)/p + (lam w - q) sin^2(theta)``
from ``theta(t_minus) = 0``, and the n-th eigenvalue is the root of
``theta(t_plus) - n pi``, which increases with ``lam``.

Eigenfunctions are normalised by their initial slope ``u'(t_minus) = v0``
rather than by their weighted norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import eigh_tridiagonal

from . import _kernels
from .errors import BracketFailure, DSLError, MaxStepsExceeded, StepSizeUnderflow
from .fieldline import CoefficientTrace

MAX_EXPAND = 8
MAX_SUBSTEPS = 256
# Target for omega * h on the fixed-step eigenfunction march.
PHASE_PER_STEP = 0.02
DEADBAND = 1e-8


@dataclass(frozen=True)
class Spectrum:
    d: int
    lambdas: np.ndarray
    bounds: np.ndarray
    residuals: np.ndarray
    tol_lambda: float


@dataclass(frozen=True)
class BasisEval:
    """Eigenfunctions sampled on ``times``.

    ``lambdas`` are the eigenvalues of the fixed-step march that produced
    ``u``; they agree with the shooting spectrum to its tolerance.
    """

    times: np.ndarray
    u: np.ndarray
    du: np.ndarray
    u_at_zero: np.ndarray
    lambdas: np.ndarray
    substeps: int


def _raise_status(status: int, what: str):
    if status == 1:
        raise MaxStepsExceeded(f"{what}: step cap exceeded")
    if status == 2:
        raise StepSizeUnderflow(f"{what}: step size underflow")
    if status == 3:
        raise BracketFailure(f"{what}: residual keeps its sign after {MAX_EXPAND} expansions")
    if status != 0:
        raise DSLError(f"{what}: solver status {status}")


def eigen_bounds(trace: CoefficientTrace, n: int) -> tuple[float, float]:
    """Comparison-theorem bracket for the n-th eigenvalue.

    Extremes of ``w p`` and ``q / w`` are taken over knot values; the
    integral of 1/p uses the trapezoid rule, which is exact for linear knots.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    wp = trace.w_vals * trace.p_vals
    qw = trace.q_vals / trace.w_vals
    ip = trace.inv_p_vals
    int_ip = trace.length * float(np.sum(ip[1:] + ip[:-1])) / (2 * trace.K)
    base = (n * math.pi / int_ip) ** 2
    return base / wp.max() + qw.min(), base / wp.min() + qw.max()


def pruefer_residual(trace: CoefficientTrace, lam: float, n: int, rtol: float = 1e-10,
                     atol: float = 1e-10, max_steps: int = 100_000) -> float:
    """theta(t_plus) - n pi for the given trial eigenvalue."""
    theta, status = _kernels.pruefer_end(trace.inv_p_vals, trace.q_vals, trace.w_vals,
                                         trace.length, float(lam), rtol, atol, max_steps)
    _raise_status(status, "Prüfer integration")
    return theta - n * math.pi


def _solve(trace, n, tol_lambda, rtol, atol, max_steps):
    lo, hi = eigen_bounds(trace, n)
    lam, g, status, lo, hi, _, _ = _kernels.bisect_eigen(
        trace.inv_p_vals, trace.q_vals, trace.w_vals, trace.length, n, lo, hi,
        tol_lambda, rtol, atol, max_steps, MAX_EXPAND)
    _raise_status(status, f"eigenvalue {n}")
    return lam, g


def solve_nth(trace: CoefficientTrace, n: int, tol_lambda: float = 1e-4, rtol: float = 1e-6,
              atol: float = 1e-6, max_steps: int = 100_000) -> float:
    """n-th eigenvalue (1-based) by bisection until the bracket is at most
    ``tol_lambda * max(1, |upper end|)`` wide."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _solve(trace, n, tol_lambda, rtol, atol, max_steps)[0]


def spectrum(trace: CoefficientTrace, d: int = 10, tol_lambda: float = 1e-4, rtol: float = 1e-6,
             atol: float = 1e-6, max_steps: int = 100_000) -> Spectrum:
    if d < 1:
        raise ValueError("d must be >= 1")
    lams, res, bounds = np.empty(d), np.empty(d), np.empty((d, 2))
    for i in range(d):
        bounds[i] = eigen_bounds(trace, i + 1)
        lams[i], g = _solve(trace, i + 1, tol_lambda, rtol, atol, max_steps)
        res[i] = abs(g)
    if np.any(np.diff(lams) <= 0):
        raise BracketFailure(f"eigenvalues are not strictly increasing: {lams}")
    return Spectrum(d, lams, bounds, res, tol_lambda)


def substeps_for(trace: CoefficientTrace, lambdas) -> int:
    """RK4 substeps per knot interval keeping the local phase step small."""
    lam = np.asarray(lambdas, dtype=float)
    stiff = max(float(np.max(np.abs(l * trace.w_vals - trace.q_vals))) for l in (lam.min(), lam.max()))
    omega = trace.length * math.sqrt(float(trace.inv_p_vals.max()) * stiff)
    return int(min(MAX_SUBSTEPS, max(1, math.ceil(omega / (PHASE_PER_STEP * trace.K)))))


def initial_flux(trace: CoefficientTrace, d: int) -> np.ndarray:
    """p u' at t_minus for each eigenfunction (slope condition on u')."""
    v0 = np.broadcast_to(trace.v0, (d,))
    return v0 / trace.inv_p_vals[0]


def refine_for_march(trace: CoefficientTrace, lambdas, r0, m: int, tol_lambda: float) -> np.ndarray:
    """Re-shoot each eigenvalue against the fixed-step march with ``m`` substeps.

    One-sided shooting amplifies any eigenvalue error exponentially where
    ``lam w < q``; matching ``u(t_plus) = 0`` of the march itself removes
    spurious zeros near the far end.
    """
    out = np.empty(len(lambdas))
    for i, lam in enumerate(lambdas):
        out[i], status = _kernels.refine_discrete(
            trace.inv_p_vals, trace.q_vals, trace.w_vals, trace.length, float(lam), float(r0[i]), m,
            max(tol_lambda, 1e-9), 30)
        _raise_status(status, f"eigenfunction {i + 1}")
    if np.any(np.diff(out) <= 0):
        raise BracketFailure("re-shot eigenvalues are not strictly increasing")
    return out


def eval_basis(trace: CoefficientTrace, spec: Spectrum, grid_size: int = 2001,
               substeps: Optional[int] = None) -> BasisEval:
    """Eigenfunctions and their t-derivatives on a uniform grid, plus u at ``t_origin``."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    m = substeps if substeps is not None else substeps_for(trace, spec.lambdas)
    s_grid = np.linspace(0.0, 1.0, grid_size)
    s_read = np.append(s_grid, trace.s_origin)
    r0 = initial_flux(trace, spec.d)
    T = trace.length
    u = np.empty((spec.d, grid_size))
    du = np.empty((spec.d, grid_size))
    u0 = np.empty(spec.d)
    lambdas = refine_for_march(trace, spec.lambdas, r0, m, spec.tol_lambda)
    for i, lam in enumerate(lambdas):
        states = _kernels.rk4_states(trace.inv_p_vals, trace.q_vals, trace.w_vals, T, lam, r0[i], m)
        vals = _kernels.hermite_read(states, trace.inv_p_vals, T, m, s_read)
        u[i] = vals[:-1, 0]
        du[i] = vals[:-1, 1] / T
        u0[i] = vals[-1, 0]
    return BasisEval(trace.t_minus + T * s_grid, u, du, u0, lambdas, m)


def count_sign_changes(values, deadband: float = DEADBAND) -> int:
    """Strict sign alternations, ignoring entries below ``deadband * max|values|``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0
    scale = np.max(np.abs(v))
    if scale == 0:
        return 0
    signs = np.sign(v[np.abs(v) >= deadband * scale])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def orthogonality_gram(trace: CoefficientTrace, basis: BasisEval) -> np.ndarray:
    """G_ij = integral of w u_i u_j over the trace, by the trapezoid rule on the basis grid."""
    w = np.interp(basis.times, trace.knots, trace.w_vals)
    wu = basis.u * w
    return trapezoid(wu[:, None, :] * basis.u[None, :, :], basis.times, axis=-1)


def fd_oracle(trace: CoefficientTrace, d: int, mesh_size: int = 2000) -> np.ndarray:
    """d smallest eigenvalues from a second-order finite-difference discretisation.

    p is taken at cell midpoints; the generalised problem ``A u = lam W u``
    is symmetrised with ``W^{-1/2}`` and solved as a tridiagonal eigenproblem.
    """
    if mesh_size < 3 or d > mesh_size - 1:
        raise ValueError("mesh too small for the requested eigenvalue count")
    t = np.linspace(trace.t_minus, trace.t_plus, mesh_size + 1)
    h = t[1] - t[0]
    mid = 0.5 * (t[1:] + t[:-1])
    p_half = 1.0 / np.interp(mid, trace.knots, trace.inv_p_vals)
    inner = t[1:-1]
    q = np.interp(inner, trace.knots, trace.q_vals)
    w = np.interp(inner, trace.knots, trace.w_vals)
    diag = (p_half[:-1] + p_half[1:]) / h ** 2 + q
    off = -p_half[1:-1] / h ** 2
    sw = np.sqrt(w)
    vals = eigh_tridiagonal(diag / w, off / (sw[:-1] * sw[1:]), eigvals_only=True,
                            select="i", select_range=(0, d - 1))
    return np.asarray(vals)
