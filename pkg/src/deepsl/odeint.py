"""Adaptive Dormand-Prince 5(4) integration with dense output and event location.

Every routine here works on a stack of independent systems ("rows"): each row
keeps its own time, step size and error control, so integrating a batch of
rows gives the same per-row results as integrating them one by one.  The
single-system helpers (:func:`integrate`, :func:`locate_event`) are thin
wrappers around the row engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import MaxStepsExceeded, NoEventDetected, StepSizeUnderflow

# Dormand-Prince 5(4) tableau; the seventh stage is the FSAL evaluation.
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
])
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Continuous extension (Shampine): y(t0 + x h) = y0 + h * K^T P [x, x^2, x^3, x^4].
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

ORDER = 5
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
EPS = np.finfo(float).eps

RowRhs = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DenseSolution:
    """Piecewise quartic interpolant produced by one integration.

    ``mesh`` holds the step boundaries in integration order (decreasing for
    backward integration).  Segment ``i`` covers ``mesh[i] .. mesh[i+1]`` and
    is parameterised by the signed step ``steps[i]`` it was computed with; the
    final segment may be cut short by an event, in which case
    ``mesh[-1] < mesh[-2] + steps[-1]`` (in the integration direction).
    """

    mesh: np.ndarray
    steps: np.ndarray
    y_mesh: np.ndarray
    coeffs: np.ndarray
    rtol: float
    atol: float

    @property
    def t_start(self) -> float:
        return float(self.mesh[0])

    @property
    def t_end(self) -> float:
        return float(self.mesh[-1])

    @property
    def direction(self) -> float:
        return 1.0 if self.mesh[-1] >= self.mesh[0] else -1.0

    @property
    def segments(self) -> list[tuple[tuple[float, float], np.ndarray]]:
        return [((float(self.mesh[i]), float(self.mesh[i + 1])), self.coeffs[i])
                for i in range(len(self.steps))]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        d = self.direction
        lo, hi = sorted((self.t_start, self.t_end))
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(tt < lo - slack) or np.any(tt > hi + slack):
            raise ValueError(f"evaluation time outside [{lo}, {hi}]")
        key = d * self.mesh
        idx = np.searchsorted(key, d * tt, side="right") - 1
        idx = np.clip(idx, 0, len(self.steps) - 1)
        x = (tt - self.mesh[idx]) / self.steps[idx]
        powers = np.stack([x, x * x, x ** 3, x ** 4], axis=-1)
        y = self.y_mesh[idx] + self.steps[idx][:, None] * np.einsum("mnj,mj->mn", self.coeffs[idx], powers)
        at_end = tt == self.mesh[-1]
        if np.any(at_end):
            y[at_end] = self.y_mesh[-1]
        return y[0] if scalar else y


def _rms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(x * x, axis=-1))


def _initial_step(rhs, t, y, f, direction, rtol, atol):
    scale = atol + rtol * np.abs(y)
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    y1 = y + (h0 * direction)[:, None] * f
    f1 = rhs(t + h0 * direction, y1)
    d2 = _rms((f1 - f) / scale) / h0
    big = np.maximum(d1, d2)
    h1 = np.where(big <= 1e-15, np.maximum(1e-6, h0 * 1e-3),
                  (0.01 / np.maximum(big, 1e-300)) ** (1.0 / ORDER))
    return np.minimum(100 * h0, h1)


def _step(rhs, t, y, h, k1):
    """One Dormand-Prince step for every row; returns y_new, stages, error."""
    K = np.empty((7,) + y.shape)
    K[0] = k1
    hc = h[:, None]
    for s in range(1, 6):
        dy = np.tensordot(A[s, :s], K[:s], axes=(0, 0))
        K[s] = rhs(t + C[s] * h, y + hc * dy)
    y_new = y + hc * np.tensordot(B, K[:6], axes=(0, 0))
    K[6] = rhs(t + h, y_new)
    err = hc * np.tensordot(E, K, axes=(0, 0))
    return y_new, K, err


@dataclass
class _RowLog:
    times: list
    steps: list
    ys: list
    coeffs: list
    event_seen: bool = False


def _march(rhs: RowRhs, t0: np.ndarray, y0: np.ndarray, t_bound: np.ndarray, rtol: float,
           atol: float, max_steps: int, event=None, max_step: float = np.inf,
           first_step=None):
    m = y0.shape[0]
    direction = np.sign(t_bound - t0)
    if np.any(direction == 0):
        raise ValueError("t0 and t1 must differ")
    t = t0.astype(float).copy()
    y = y0.astype(float).copy()
    f = rhs(t, y)
    if first_step is None:
        h_abs = _initial_step(rhs, t, y, f, direction, rtol, atol)
    else:
        h_abs = np.full(m, float(first_step))
    logs = [_RowLog([t[i]], [], [y[i].copy()], []) for i in range(m)]
    g_prev = event(y) if event is not None else None
    if event is not None and np.any(g_prev == 0):
        raise ValueError("event function must have a strict sign at the initial state")
    active = np.ones(m, dtype=bool)
    n_steps = np.zeros(m, dtype=int)
    rejected = np.zeros(m, dtype=bool)

    while active.any():
        idx = np.flatnonzero(active)
        n_steps[idx] += 1
        over = idx[n_steps[idx] > max_steps]
        if over.size:
            raise MaxStepsExceeded(f"step cap of {max_steps} exceeded")
        ti, yi, fi = t[idx], y[idx], f[idx]
        hmin = 10 * EPS * np.maximum(1.0, np.abs(ti))
        remaining = np.abs(t_bound[idx] - ti)
        ha = np.minimum(np.minimum(h_abs[idx], max_step), remaining)
        if np.any(ha < hmin):
            raise StepSizeUnderflow(f"step size {ha.min():.3e} fell below machine-epsilon scale")
        last = ha >= remaining
        h = ha * direction[idx]
        y_new, K, err = _step(rhs, ti, yi, h, fi)
        scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y_new))
        err_norm = _rms(err / scale)
        accept = err_norm <= 1.0
        with np.errstate(divide="ignore"):
            factor = np.where(err_norm == 0, MAX_FACTOR,
                              SAFETY * err_norm ** (-1.0 / ORDER))
        factor = np.clip(factor, MIN_FACTOR, MAX_FACTOR)
        factor = np.where(accept & rejected[idx], np.minimum(factor, 1.0), factor)
        h_abs[idx] = ha * factor
        rejected[idx] = ~accept

        if not accept.any():
            continue
        acc = np.flatnonzero(accept)
        rows = idx[acc]
        t_new = np.where(last[acc], t_bound[rows], ti[acc] + h[acc])
        Q = np.einsum("smn,sj->mnj", K[:, acc], P)
        g_new = event(y_new[acc]) if event is not None else None
        for j, r in enumerate(rows):
            log = logs[r]
            log.times.append(t_new[j])
            log.steps.append(h[acc][j])
            log.ys.append(y_new[acc][j].copy())
            log.coeffs.append(Q[j])
        t[rows] = t_new
        y[rows] = y_new[acc]
        f[rows] = K[6, acc]
        done = last[acc].copy()
        if event is not None:
            crossed = np.sign(g_new) != np.sign(g_prev[rows])
            for j, r in enumerate(rows):
                if crossed[j]:
                    logs[r].event_seen = True
            done |= crossed
            g_prev[rows] = g_new
        active[rows[done]] = False
    return logs, g_prev


def _solution(log: _RowLog, rtol: float, atol: float) -> DenseSolution:
    return DenseSolution(
        mesh=np.asarray(log.times, dtype=float),
        steps=np.asarray(log.steps, dtype=float),
        y_mesh=np.asarray(log.ys, dtype=float),
        coeffs=np.asarray(log.coeffs, dtype=float),
        rtol=rtol, atol=atol,
    )


def _refine_events(logs, event, g_start, tol_t, rtol, atol):
    """Bisect each row's last segment until its time bracket is <= tol_t."""
    m = len(logs)
    t_old = np.array([lg.times[-2] for lg in logs])
    h = np.array([lg.steps[-1] for lg in logs])
    y_old = np.array([lg.ys[-2] for lg in logs])
    Q = np.array([lg.coeffs[-1] for lg in logs])
    tol = np.broadcast_to(np.asarray(tol_t, dtype=float), (m,))
    n_iter = np.maximum(0, np.ceil(np.log2(np.abs(h) / tol))).astype(int)

    def poly(x):
        powers = np.stack([x, x * x, x ** 3, x ** 4], axis=-1)
        return y_old + h[:, None] * np.einsum("mnj,mj->mn", Q, powers)

    lo = np.zeros(m)
    hi = np.ones(m)
    s_old = np.sign(g_start)
    for it in range(int(n_iter.max(initial=0))):
        live = it < n_iter
        mid = 0.5 * (lo + hi)
        same = np.sign(event(poly(mid))) == s_old
        lo = np.where(live & same, mid, lo)
        hi = np.where(live & ~same, mid, hi)
    x_ev = 0.5 * (lo + hi)
    t_ev = t_old + x_ev * h
    y_ev = poly(x_ev)
    out = []
    for r, lg in enumerate(logs):
        lg.times[-1] = t_ev[r]
        lg.ys[-1] = y_ev[r].copy()
        out.append((float(t_ev[r]), y_ev[r].copy(), _solution(lg, rtol, atol)))
    return out


def integrate(rhs: Callable[[float, np.ndarray], np.ndarray], y0, t0: float, t1: float,
              rtol: float = 1e-6, atol: float = 1e-6, max_steps: int = 100_000,
              first_step: float | None = None, max_step: float = np.inf) -> DenseSolution:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1`` (either order).

    Raises:
        StepSizeUnderflow: the controller asked for a step below ~10 eps |t|.
        MaxStepsExceeded: more than ``max_steps`` step attempts were needed.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))

    def rows(t, Y):
        return np.stack([np.asarray(rhs(float(ti), yi), dtype=float) for ti, yi in zip(t, Y)])

    logs, _ = _march(rows, np.array([float(t0)]), y0[None, :], np.array([float(t1)]),
                     rtol, atol, max_steps, max_step=max_step, first_step=first_step)
    return _solution(logs[0], rtol, atol)


def integrate_rows_to_event(rhs: RowRhs, Y0: np.ndarray, t0, direction: int,
                            event: Callable[[np.ndarray], np.ndarray], tol_t=None,
                            rtol: float = 1e-6, atol: float = 1e-6,
                            max_steps: int = 100_000, horizon: float = 1e8,
                            max_step: float = np.inf):
    """Integrate every row until its scalar ``event`` changes sign.

    ``rhs(t, Y)`` and ``event(Y)`` act on stacked rows.  Sign changes are
    detected at accepted step endpoints, then bracketed by bisection on the
    dense interpolant.  Returns one ``(t_event, y_event, DenseSolution)``
    triple per row, with each solution ending at its event.
    """
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=float))
    m = Y0.shape[0]
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), (m,)).copy()
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if tol_t is None:
        tol_t = 1e-10 * np.maximum(1.0, np.abs(t0))
    t_bound = t0 + direction * horizon
    g0 = event(Y0)
    try:
        logs, _ = _march(rhs, t0, Y0, t_bound, rtol, atol, max_steps, event=event,
                         max_step=max_step)
    except MaxStepsExceeded as exc:
        raise NoEventDetected(f"no event within the step cap: {exc}") from exc
    missing = [i for i, lg in enumerate(logs) if not lg.event_seen]
    if missing:
        raise NoEventDetected(f"rows {missing} reached the horizon without an event")
    return _refine_events(logs, event, g0, tol_t, rtol, atol)


def integrate_to_event(rhs: Callable[[float, np.ndarray], np.ndarray], y0, t0: float,
                       direction: str | int, event: Callable[[np.ndarray], float],
                       tol_t: float | None = None, rtol: float = 1e-6, atol: float = 1e-6,
                       max_steps: int = 100_000, horizon: float = 1e8):
    """Single-system version of :func:`integrate_rows_to_event`."""
    sign = _direction(direction)
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))

    def rows(t, Y):
        return np.stack([np.asarray(rhs(float(ti), yi), dtype=float) for ti, yi in zip(t, Y)])

    def ev(Y):
        return np.array([float(event(yi)) for yi in Y])

    return integrate_rows_to_event(rows, y0[None, :], t0, sign, ev, tol_t=tol_t, rtol=rtol,
                                   atol=atol, max_steps=max_steps, horizon=horizon)[0]


def locate_event(rhs, y0, t0: float, direction: str | int, event, tol_t: float | None = None,
                 rtol: float = 1e-6, atol: float = 1e-6, max_steps: int = 100_000):
    """Return ``(t_event, y_event)`` for the first sign change of ``event``."""
    t_ev, y_ev, _ = integrate_to_event(rhs, y0, t0, direction, event, tol_t=tol_t,
                                       rtol=rtol, atol=atol, max_steps=max_steps)
    return t_ev, y_ev


def _direction(direction: str | int) -> int:
    if direction in ("forward", 1, 1.0):
        return 1
    if direction in ("backward", -1, -1.0):
        return -1
    raise ValueError(f"unknown direction {direction!r}")


def rk4_replay(rhs_rows: Callable[[np.ndarray], np.ndarray], y0: np.ndarray,
               steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Classic RK4 march of an autonomous system over a per-row step schedule.

    ``steps`` has shape (J, m): row ``r`` takes steps ``steps[:, r]`` (zeros are
    no-ops).  Returns the states after every step, shape (J, m, n), and the
    stage inputs, shape (J, 4, m, n), which :func:`rk4_replay_vjp` needs.
    """
    J = steps.shape[0]
    y = np.array(y0, dtype=float)
    states = np.empty((J,) + y.shape)
    stage_in = np.zeros((J, 4) + y.shape)
    for j in range(J):
        act = steps[j] != 0  # zero steps are skipped, not evaluated
        if not act.any():
            states[j] = y
            continue
        h = steps[j][act][:, None]
        ya = y[act]
        stage_in[j, 0, act] = ya
        k1 = rhs_rows(ya)
        stage_in[j, 1, act] = ya + 0.5 * h * k1
        k2 = rhs_rows(stage_in[j, 1, act])
        stage_in[j, 2, act] = ya + 0.5 * h * k2
        k3 = rhs_rows(stage_in[j, 2, act])
        stage_in[j, 3, act] = ya + h * k3
        k4 = rhs_rows(stage_in[j, 3, act])
        y[act] = ya + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        states[j] = y
    return states, stage_in


def rk4_replay_vjp(vjp_rows: Callable[[np.ndarray, np.ndarray], np.ndarray],
                   stage_in: np.ndarray, steps: np.ndarray,
                   state_cotangents: np.ndarray) -> np.ndarray:
    """Reverse sweep through :func:`rk4_replay`.

    ``vjp_rows(Y, cot)`` must return ``cot^T d rhs/dY`` row-wise and may
    accumulate parameter cotangents as a side effect.  ``state_cotangents``
    (J, m, n) are injected at the state after each step.  Returns the
    cotangent of the initial state.
    """
    J = steps.shape[0]
    ybar = np.zeros(stage_in.shape[2:])
    for j in range(J - 1, -1, -1):
        ybar = ybar + state_cotangents[j]
        act = steps[j] != 0
        if not act.any():
            continue
        h = steps[j][act][:, None]
        yb = ybar[act]
        kb1 = h / 6.0 * yb
        kb2 = h / 3.0 * yb
        kb3 = h / 3.0 * yb
        kb4 = h / 6.0 * yb
        y0bar = yb.copy()
        Yb = vjp_rows(stage_in[j, 3, act], kb4)
        y0bar += Yb
        kb3 = kb3 + h * Yb
        Yb = vjp_rows(stage_in[j, 2, act], kb3)
        y0bar += Yb
        kb2 = kb2 + 0.5 * h * Yb
        Yb = vjp_rows(stage_in[j, 1, act], kb2)
        y0bar += Yb
        kb1 = kb1 + 0.5 * h * Yb
        y0bar += vjp_rows(stage_in[j, 0, act], kb1)
        ybar[act] = y0bar
    return ybar


__all__: Sequence[str] = (
    "DenseSolution", "integrate", "integrate_rows_to_event", "integrate_to_event",
    "locate_event", "rk4_replay", "rk4_replay_vjp",
)
