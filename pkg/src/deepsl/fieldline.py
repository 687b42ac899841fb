"""Field lines of ``dz/dt = a(z)`` through samples of the unit hypercube.

A field line is integrated backward and forward from its sample until it
leaves ``(0, 1)^n``: the backward exit is where the smallest coordinate hits
0 and the forward exit where the largest coordinate hits 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import netfuncs
from .errors import StartOnBoundary
from .netfuncs import MlpParams
from .odeint import DenseSolution, integrate_rows_to_event

START_MARGIN = 1e-6

Field = Union[MlpParams, Callable[[np.ndarray], np.ndarray]]


def field_fn(field: Field) -> Callable[[np.ndarray], np.ndarray]:
    """Row-wise callable for either an MLP or a plain function of stacked points."""
    if isinstance(field, MlpParams):
        return lambda Z: netfuncs.forward(field, Z)
    return lambda Z: np.asarray(field(Z), dtype=float)


@dataclass(frozen=True)
class FieldLine:
    x0: np.ndarray
    t_minus: float
    t_plus: float
    forward: DenseSolution
    backward: DenseSolution
    exit_minus: int
    exit_plus: int

    @property
    def length(self) -> float:
        return self.t_plus - self.t_minus

    def position(self, t):
        """gamma(t) for scalar or array ``t`` in [t_minus, t_plus]."""
        t = np.asarray(t, dtype=float)
        tt = np.atleast_1d(t)
        out = np.empty((tt.size, self.x0.size))
        fwd = tt >= 0
        if fwd.any():
            out[fwd] = self.forward(tt[fwd])
        if (~fwd).any():
            out[~fwd] = self.backward(tt[~fwd])
        return out[0] if t.ndim == 0 else out

    def knot_times(self, K: int) -> np.ndarray:
        return self.t_minus + (self.t_plus - self.t_minus) * np.arange(K + 1) / K


def _flip(sol: DenseSolution) -> DenseSolution:
    # Solution of z' = -a(z) in tau = -t, rewritten in t.
    return DenseSolution(mesh=-sol.mesh, steps=-sol.steps, y_mesh=sol.y_mesh,
                         coeffs=-sol.coeffs, rtol=sol.rtol, atol=sol.atol)


def trace_batch(field: Field, X, tol_t: float = 1e-4, rtol: float = 1e-6, atol: float = 1e-6,
                max_steps: int = 100_000) -> list[FieldLine]:
    """Trace the field line of every row of ``X`` (both directions in one batch)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m, n = X.shape
    if np.any(X.min(axis=1) < START_MARGIN) or np.any(X.max(axis=1) > 1 - START_MARGIN):
        raise StartOnBoundary("sample lies within 1e-6 of the domain boundary")
    return _trace_rows(field_fn(field), X, tol_t, rtol, atol, max_steps)


def _trace_rows(a, X, tol_t, rtol, atol, max_steps):
    m, n = X.shape
    Y0 = np.vstack([X, X])
    signs = np.concatenate([np.ones(m), -np.ones(m)])
    # Each row carries its direction as an extra constant state component so
    # that rhs and event stay purely row-wise.
    Y0 = np.hstack([Y0, signs[:, None]])

    def rhs(t, Y):
        out = np.zeros_like(Y)
        out[:, :n] = Y[:, n:n + 1] * a(Y[:, :n])
        return out

    def event(Y):
        Z = Y[:, :n]
        return np.where(Y[:, n] > 0, Z.max(axis=1) - 1.0, -Z.min(axis=1))

    res = integrate_rows_to_event(rhs, Y0, 0.0, 1, event, tol_t=tol_t, rtol=rtol, atol=atol,
                                  max_steps=max_steps)
    lines = []
    for i in range(m):
        t_p, y_p, sol_p = res[i]
        t_m, y_m, sol_m = res[m + i]
        fwd = _strip(sol_p, n)
        bwd = _flip(_strip(sol_m, n))
        lines.append(FieldLine(
            x0=X[i].copy(), t_minus=-t_m, t_plus=t_p, forward=fwd, backward=bwd,
            exit_minus=int(np.argmin(y_m[:n])), exit_plus=int(np.argmax(y_p[:n])),
        ))
    return lines


def _strip(sol: DenseSolution, n: int) -> DenseSolution:
    return DenseSolution(mesh=sol.mesh, steps=sol.steps, y_mesh=sol.y_mesh[:, :n],
                         coeffs=sol.coeffs[:, :n], rtol=sol.rtol, atol=sol.atol)


def trace(field: Field, x, tol_t: float = 1e-4, rtol: float = 1e-6, atol: float = 1e-6,
          max_steps: int = 100_000) -> FieldLine:
    """Field line through a single point ``x`` of the open unit hypercube."""
    return trace_batch(field, np.asarray(x, dtype=float)[None, :], tol_t, rtol, atol, max_steps)[0]


@dataclass(frozen=True)
class CoefficientTrace:
    """Piecewise-linear coefficients on a uniform knot grid.

    ``inv_p_vals`` holds 1/p at the knots; ``v0`` is the initial slope of
    each eigenfunction and ``t_origin`` the time at which the basis is read.
    ``positions`` keeps the knot points on the field line when there is one.
    """

    knots: np.ndarray
    inv_p_vals: np.ndarray
    q_vals: np.ndarray
    w_vals: np.ndarray
    v0: np.ndarray
    t_origin: float = 0.0
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        K = self.knots.size - 1
        if K < 2:
            raise ValueError("need at least 3 knots")
        for arr in (self.inv_p_vals, self.q_vals, self.w_vals):
            if arr.shape != self.knots.shape:
                raise ValueError("knot values must match the knot grid")
        h = np.diff(self.knots)
        if not np.all(h > 0) or np.ptp(h) > 1e-9 * max(1.0, abs(h[0])) * K:
            raise ValueError("knots must be uniform and increasing")
        if not (np.all(self.inv_p_vals > 0) and np.all(self.w_vals > 0)):
            raise ValueError("p and w must be positive at every knot")

    @classmethod
    def from_values(cls, t_minus, t_plus, inv_p, q, w, v0=None, d=None, t_origin=0.0,
                    positions=None) -> "CoefficientTrace":
        """Build a trace from knot values, broadcasting scalars over the grid."""
        arrays = [np.atleast_1d(np.asarray(v, dtype=float)) for v in (inv_p, q, w)]
        K = max(a.size for a in arrays) - 1
        if K < 2:
            raise ValueError("at least one coefficient must be given at 3 or more knots")
        arrays = [np.broadcast_to(a, (K + 1,)).copy() for a in arrays]
        if v0 is None:
            v0 = np.ones(d if d is not None else 1)
        return cls(np.linspace(t_minus, t_plus, K + 1), *arrays, np.asarray(v0, dtype=float),
                   float(t_origin), positions)

    @property
    def K(self) -> int:
        return self.knots.size - 1

    @property
    def t_minus(self) -> float:
        return float(self.knots[0])

    @property
    def t_plus(self) -> float:
        return float(self.knots[-1])

    @property
    def length(self) -> float:
        return self.t_plus - self.t_minus

    @property
    def p_vals(self) -> np.ndarray:
        return 1.0 / self.inv_p_vals

    @property
    def s_origin(self) -> float:
        return (self.t_origin - self.t_minus) / self.length

    def coefficients_at(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Linear interpolation of (1/p, q, w) at times ``t``."""
        return tuple(np.interp(t, self.knots, v) for v in (self.inv_p_vals, self.q_vals, self.w_vals))


def _net_values(nets, Z):
    ip_net, q_net, w_net = nets
    return (netfuncs.forward(ip_net, Z)[:, 0], netfuncs.forward(q_net, Z)[:, 0],
            netfuncs.forward(w_net, Z)[:, 0])


def sample_coefficients(fl: FieldLine, p_net: MlpParams, q_net: MlpParams, w_net: MlpParams,
                        v_net: Optional[MlpParams] = None, K: int = 2000,
                        d: Optional[int] = None) -> CoefficientTrace:
    """Evaluate the coefficient networks at the knots of a field line.

    ``p_net`` predicts 1/p.  Without ``v_net`` every initial slope is 1 and
    ``d`` sets how many there are.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    knots = fl.knot_times(K)
    Z = fl.position(knots)
    ip, q, w = _net_values((p_net, q_net, w_net), Z)
    if v_net is not None:
        v0 = netfuncs.forward(v_net, Z[0])
    else:
        v0 = np.ones(d if d is not None else 1)
    return CoefficientTrace(knots, ip, q, w, v0, 0.0, Z)


def sample_ablation_coefficients(x, p_net: MlpParams, q_net: MlpParams, w_net: MlpParams,
                                 K: int = 2000, d: int = 1) -> CoefficientTrace:
    """Coefficients of the fixed-interval variant: networks see (x, s) on s in [0, 1].

    Eigenfunctions start with slope 1 at s = 0 and are read at s = 0.5.
    """
    x = np.asarray(x, dtype=float)
    s = np.linspace(0.0, 1.0, K + 1)
    inputs = np.hstack([np.broadcast_to(x, (K + 1, x.size)), s[:, None]])
    ip, q, w = _net_values((p_net, q_net, w_net), inputs)
    return CoefficientTrace(s, ip, q, w, np.ones(d), 0.5, inputs)
