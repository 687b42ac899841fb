"""Small multilayer perceptrons with hand-written reverse and forward derivatives.

Layers compute ``h_{l+1} = act(W_l h_l + b_l)`` with ``W_l`` of shape
(out, in).  Hidden layers use the network's activation; the last layer uses
the range squash when an output range is set, and the activation otherwise.
All functions accept a single input vector or a stack of row inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeMismatch

LEAKY_SLOPE = 0.01

# Output ranges used for the coefficient networks.
DEFAULT_RANGES = {
    "a": (0.01, 1.0),
    "q": (-10.0, 10.0),
    "inv_p": (1.0, 10.0),
    "w": (0.1, 10.0),
}


@dataclass(frozen=True)
class RangeSpec:
    role: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty range ({self.lo}, {self.hi}) for {self.role}")

    @classmethod
    def default(cls, role: str) -> "RangeSpec":
        lo, hi = DEFAULT_RANGES[role]
        return cls(role, lo, hi)


@dataclass
class MlpParams:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "leaky-relu"
    output_range: Optional[tuple[float, float]] = None
    _squash: str = field(init=False, repr=False)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if self.activation not in ("leaky-relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatch("layer count does not match layer_dims")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[l + 1], self.layer_dims[l]) or b.shape != (self.layer_dims[l + 1],):
                raise ShapeMismatch(f"layer {l} has shapes {W.shape}, {b.shape}")
        if self.output_range is not None:
            lo, hi = (float(v) for v in self.output_range)
            if not lo < hi:
                raise ValueError("output_range must satisfy lo < hi")
            self.output_range = (lo, hi)
            self._squash = "tanh" if lo == -hi else "sigmoid"
        else:
            self._squash = "none"

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(self.layer_dims, [np.array(a) for a in arrays[0::2]],
                         [np.array(a) for a in arrays[1::2]], self.activation, self.output_range)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        if np.size(vec) != self.size:
            raise ShapeMismatch(f"expected {self.size} parameters, got {np.size(vec)}")
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i:i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        return self.with_arrays(out)


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, LEAKY_SLOPE * z)


def _act_grad(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _squash(z, params: MlpParams):
    lo, hi = params.output_range
    if params._squash == "tanh":
        t = np.tanh(z)
        return hi * t, hi * (1.0 - t * t)
    s = 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free sigmoid
    return lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s)


def _rows(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.n_in:
        raise ShapeMismatch(f"expected input dim {params.n_in}, got shape {x.shape}")
    return X, single


def _forward_cache(params: MlpParams, X):
    """Forward pass keeping pre-activations and local derivatives."""
    hs, dacts = [X], []
    h = X
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W.T + b
        if l == last and params._squash != "none":
            h, d = _squash(z, params)
        else:
            h = _act(z, params.activation)
            d = _act_grad(z, h, params.activation)
        hs.append(h)
        dacts.append(d)
    return hs, dacts


def forward(params: MlpParams, x) -> np.ndarray:
    X, single = _rows(params, x)
    out = _forward_cache(params, X)[0][-1]
    return out[0] if single else out


def backprop(params: MlpParams, x, cotangent):
    """Reverse-mode derivative of :func:`forward`.

    Returns the input cotangent (same shape as ``x``) and an ``MlpParams``
    holding the parameter gradient, summed over rows for stacked inputs.
    """
    X, single = _rows(params, x)
    G = np.asarray(cotangent, dtype=float)
    G = G[None, :] if G.ndim == 1 else G
    if G.shape != (X.shape[0], params.n_out):
        raise ShapeMismatch(f"cotangent shape {np.shape(cotangent)} does not match output")
    hs, dacts = _forward_cache(params, X)
    grads_W, grads_b = [], []
    g = G
    for l in range(len(params.weights) - 1, -1, -1):
        gz = g * dacts[l]
        grads_W.append(gz.T @ hs[l])
        grads_b.append(gz.sum(axis=0))
        g = gz @ params.weights[l]
    grad = MlpParams(params.layer_dims, grads_W[::-1], grads_b[::-1], params.activation,
                     params.output_range)
    return (g[0] if single else g), grad


def input_vjp(params: MlpParams, x, cotangent) -> np.ndarray:
    """Input cotangent only (skips the parameter gradient bookkeeping)."""
    X, single = _rows(params, x)
    G = np.asarray(cotangent, dtype=float)
    G = G[None, :] if G.ndim == 1 else G
    hs, dacts = _forward_cache(params, X)
    g = G
    for l in range(len(params.weights) - 1, -1, -1):
        g = (g * dacts[l]) @ params.weights[l]
    return g[0] if single else g


def jvp(params: MlpParams, x, tangent) -> tuple[np.ndarray, np.ndarray]:
    """Forward-mode derivative along an input tangent: returns (output, d output)."""
    X, single = _rows(params, x)
    V = np.asarray(tangent, dtype=float)
    V = V[None, :] if V.ndim == 1 else V
    if V.shape != X.shape:
        raise ShapeMismatch("tangent shape must match input shape")
    hs, dacts = _forward_cache(params, X)
    v = V
    for l, W in enumerate(params.weights):
        v = (v @ W.T) * dacts[l]
    out = hs[-1]
    return (out[0], v[0]) if single else (out, v)


def init(layer_dims: Sequence[int], activation: str = "leaky-relu",
         output_range: Optional[tuple[float, float]] = None, scheme: str = "glorot-uniform",
         seed=0) -> MlpParams:
    """Random weights (Glorot-uniform or orthogonal) with zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError("layer_dims needs at least an input and an output size, all positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if scheme == "glorot-uniform":
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        elif scheme == "orthogonal":
            M = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
            Qm, R = np.linalg.qr(M)
            Qm = Qm * np.sign(np.diag(R))
            W = Qm if fan_out >= fan_in else Qm.T
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(dims), weights, biases, activation, output_range)
