"""The Sturm-Liouville predictor and its forward pipeline.

For an input ``x`` the pipeline traces the field line of ``a`` through
``x``, samples ``1/p``, ``q`` and ``w`` along it, solves for the first ``d``
eigenpairs, and reads every eigenfunction at ``x`` itself (t = 0).  A linear
head maps those ``d`` values to class logits.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import netfuncs, slcore
from .errors import DSLError
from .fieldline import (CoefficientTrace, FieldLine, sample_ablation_coefficients, trace_batch)
from .netfuncs import MlpParams

DEFAULT_HIDDEN = (128, 64, 32)
V_RANGE = (0.1, 10.0)


@dataclass(frozen=True)
class SolverConfig:
    knots: int = 2000
    tol_t: float = 1e-4
    tol_lambda: float = 1e-4
    rtol: float = 1e-6
    atol: float = 1e-6
    max_steps: int = 100_000
    freeze_knot_positions: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.knots < 2:
            raise ValueError("knots must be at least 2")
        for name in ("tol_t", "tol_lambda", "rtol", "atol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def preset(cls, precision: str = "standard", **overrides) -> "SolverConfig":
        if precision == "standard":
            base = cls()
        elif precision == "high":
            base = cls(tol_t=1e-8, tol_lambda=1e-8, rtol=1e-9, atol=1e-9)
        else:
            raise ValueError(f"unknown precision {precision!r}")
        return replace(base, **overrides)


@dataclass
class DslModel:
    n: int
    k: int
    d: int
    a_net: Optional[MlpParams]
    p_net: MlpParams
    q_net: MlpParams
    w_net: MlpParams
    v_net: Optional[MlpParams]
    head_L: np.ndarray
    head_bias: Optional[np.ndarray] = None
    ablation: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.head_L.shape != (self.k, self.d):
            raise ValueError(f"head_L must have shape ({self.k}, {self.d})")
        if self.head_bias is not None and self.head_bias.shape != (self.k,):
            raise ValueError("head_bias must have length k")
        if self.ablation == (self.a_net is not None):
            raise ValueError("the fixed-interval variant has no vector field; the default needs one")
        if self.ablation and self.v_net is not None:
            raise ValueError("the fixed-interval variant uses unit initial slopes")
        n_coef = self.n + 1 if self.ablation else self.n
        for net in (self.p_net, self.q_net, self.w_net):
            if net.n_in != n_coef or net.n_out != 1:
                raise ValueError(f"coefficient networks must map {n_coef} inputs to 1 output")
        if self.a_net is not None and (self.a_net.n_in != self.n or self.a_net.n_out != self.n):
            raise ValueError("vector field network must map n inputs to n outputs")
        if self.v_net is not None and (self.v_net.n_in != self.n or self.v_net.n_out != self.d):
            raise ValueError("slope network must map n inputs to d outputs")

    @classmethod
    def create(cls, n: int, k: int, d: int = 10, hidden: Sequence[int] = DEFAULT_HIDDEN,
               learn_v: bool = False, head_bias: bool = True, ablation: bool = False,
               init_scheme: str = "glorot-uniform", seed: int = 0) -> "DslModel":
        seeds = np.random.SeedSequence(seed).spawn(6)
        hidden = list(hidden)
        n_coef = n + 1 if ablation else n

        def coef(role, s):
            return netfuncs.init([n_coef, *hidden, 1], "leaky-relu", netfuncs.DEFAULT_RANGES[role],
                                 init_scheme, s)

        a_net = None if ablation else netfuncs.init([n, *hidden, n], "tanh",
                                                    netfuncs.DEFAULT_RANGES["a"], init_scheme, seeds[0])
        v_net = netfuncs.init([n, *hidden, d], "leaky-relu", V_RANGE, init_scheme, seeds[4]) \
            if learn_v else None
        limit = np.sqrt(6.0 / (k + d))
        L = np.random.default_rng(seeds[5]).uniform(-limit, limit, size=(k, d))
        return cls(n, k, d, a_net, coef("inv_p", seeds[1]), coef("q", seeds[2]), coef("w", seeds[3]),
                   v_net, L, np.zeros(k) if head_bias else None, ablation)

    @classmethod
    def constant(cls, n: int, k: int, d: int, inv_p: float = 2.0, q: float = 0.0, w: float = 1.0,
                 speed: float = 0.5, hidden: Sequence[int] = (4,)) -> "DslModel":
        """Model whose networks output constants: useful as an analytic reference.

        Every network has zero weights; the output bias is set so that the
        squash returns the requested value.
        """
        def const_net(n_in, n_out, value, role):
            net = netfuncs.init([n_in, *hidden, n_out], "tanh" if role == "a" else "leaky-relu",
                                netfuncs.DEFAULT_RANGES[role])
            lo, hi = netfuncs.DEFAULT_RANGES[role]
            if not lo < value < hi:
                raise ValueError(f"{role} value {value} outside ({lo}, {hi})")
            if lo == -hi:
                pre = np.arctanh(value / hi)
            else:
                frac = (value - lo) / (hi - lo)
                pre = np.log(frac / (1.0 - frac))
            weights = [np.zeros_like(W) for W in net.weights]
            biases = [np.zeros_like(b) for b in net.biases]
            biases[-1] = np.full(n_out, pre)
            return MlpParams(net.layer_dims, weights, biases, net.activation, net.output_range)

        L = np.zeros((k, d))
        L[0, 0] = 1.0
        return cls(n, k, d, const_net(n, n, speed, "a"), const_net(n, 1, inv_p, "inv_p"),
                   const_net(n, 1, q, "q"), const_net(n, 1, w, "w"), None, L, None, False)

    def nets(self) -> dict[str, MlpParams]:
        out = {}
        if self.a_net is not None:
            out["a"] = self.a_net
        out.update(inv_p=self.p_net, q=self.q_net, w=self.w_net)
        if self.v_net is not None:
            out["v"] = self.v_net
        return out

    def groups(self) -> list[tuple[str, list[np.ndarray]]]:
        """Parameter arrays in flattening order, grouped by network."""
        out = [(name, net.arrays()) for name, net in self.nets().items()]
        out.append(("L", [self.head_L]))
        if self.head_bias is not None:
            out.append(("bias", [self.head_bias]))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, arrays in self.groups() for a in arrays])

    def group_slices(self) -> dict[str, slice]:
        out, i = {}, 0
        for name, arrays in self.groups():
            size = sum(a.size for a in arrays)
            out[name] = slice(i, i + size)
            i += size
        return out

    @property
    def size(self) -> int:
        return sum(a.size for _, arrays in self.groups() for a in arrays)

    def with_flat(self, vec: np.ndarray) -> "DslModel":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {vec.shape}")
        sl = self.group_slices()
        nets = {name: net.with_flat(vec[sl[name]]) for name, net in self.nets().items()}
        return DslModel(self.n, self.k, self.d, nets.get("a"), nets["inv_p"], nets["q"], nets["w"],
                        nets.get("v"), vec[sl["L"]].reshape(self.k, self.d).copy(),
                        vec[sl["bias"]].copy() if "bias" in sl else None, self.ablation)

    def head(self, u: np.ndarray) -> np.ndarray:
        out = u @ self.head_L.T
        return out if self.head_bias is None else out + self.head_bias


@dataclass
class SampleForward:
    """Everything the gradient pass needs from one prediction."""

    x: np.ndarray
    line: Optional[FieldLine]
    trace: CoefficientTrace
    spectrum: slcore.Spectrum
    basis: slcore.BasisEval
    logits: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return self.basis.u_at_zero

    @property
    def lambdas(self) -> np.ndarray:
        return self.basis.lambdas


def _coefficient_traces(model: DslModel, X: np.ndarray, solver: SolverConfig):
    """Field lines and coefficient traces for a batch; failures come back as exceptions."""
    K, d = solver.knots, model.d
    B = X.shape[0]
    if model.ablation:
        return [None] * B, [sample_ablation_coefficients(x, model.p_net, model.q_net, model.w_net, K, d)
                            for x in X]
    try:
        lines = trace_batch(model.a_net, X, solver.tol_t, solver.rtol, solver.atol, solver.max_steps)
    except DSLError:
        lines = []
        for x in X:
            try:
                lines.append(trace_batch(model.a_net, x[None, :], solver.tol_t, solver.rtol,
                                         solver.atol, solver.max_steps)[0])
            except DSLError as exc:
                lines.append(exc)
    ok = [i for i, ln in enumerate(lines) if isinstance(ln, FieldLine)]
    traces: list = [ln if not isinstance(ln, FieldLine) else None for ln in lines]
    if not ok:
        return lines, traces
    Z = np.concatenate([lines[i].position(lines[i].knot_times(K)) for i in ok])
    ip = netfuncs.forward(model.p_net, Z)[:, 0]
    q = netfuncs.forward(model.q_net, Z)[:, 0]
    w = netfuncs.forward(model.w_net, Z)[:, 0]
    if model.v_net is not None:
        V0 = netfuncs.forward(model.v_net, Z[::K + 1])
    for j, i in enumerate(ok):
        part = slice(j * (K + 1), (j + 1) * (K + 1))
        v0 = V0[j] if model.v_net is not None else np.ones(d)
        traces[i] = CoefficientTrace(lines[i].knot_times(K), ip[part], q[part], w[part], v0, 0.0, Z[part])
    return lines, traces


def _solve_one(model: DslModel, solver: SolverConfig, x, line, trace):
    if isinstance(trace, Exception):
        return trace
    try:
        spec = slcore.spectrum(trace, model.d, solver.tol_lambda, solver.rtol, solver.atol,
                               solver.max_steps)
        basis = slcore.eval_basis(trace, spec, grid_size=2)
    except DSLError as exc:
        return exc
    return SampleForward(x, line, trace, spec, basis, model.head(basis.u_at_zero))


def parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def forward_batch(model: DslModel, X, solver: SolverConfig = SolverConfig()) -> list:
    """Forward pass for each row of ``X``.

    Each entry is a :class:`SampleForward`, or the :class:`DSLError` that
    stopped that sample.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n:
        raise ValueError(f"expected {model.n} features, got {X.shape[1]}")
    lines, traces = _coefficient_traces(model, X, solver)
    items = [(model, solver, X[i], lines[i], traces[i]) for i in range(X.shape[0])]
    return parallel_map(_solve_one, items, solver.threads)


def forward_sample(model: DslModel, x, solver: SolverConfig = SolverConfig()) -> SampleForward:
    out = forward_batch(model, np.asarray(x, dtype=float)[None, :], solver)[0]
    if isinstance(out, Exception):
        raise out
    return out


def predict(model: DslModel, x, solver: SolverConfig = SolverConfig()) -> np.ndarray:
    """Class logits for a single point."""
    return forward_sample(model, x, solver).logits


def predict_batch(model: DslModel, X, solver: SolverConfig = SolverConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Logits for every row (NaN rows where the forward pass failed) and a success mask."""
    outs = forward_batch(model, X, solver)
    logits = np.full((len(outs), model.k), np.nan)
    ok = np.zeros(len(outs), dtype=bool)
    for i, o in enumerate(outs):
        if isinstance(o, SampleForward):
            logits[i] = o.logits
            ok[i] = True
    return logits, ok
