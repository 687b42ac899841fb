"""Per-sample classification losses and their logit gradients."""

from __future__ import annotations

import numpy as np

LOSS_KINDS = ("hinge", "cross-entropy", "squared")


def loss_and_grad(logits, label: int, kind: str) -> tuple[float, np.ndarray]:
    z = np.asarray(logits, dtype=float)
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    if kind == "hinge":
        margins = 1.0 + z - z[label]
        margins[label] = 0.0
        active = margins > 0
        g = active.astype(float)
        g[label] = -float(active.sum())
        return float(margins[active].sum()), g
    if kind == "cross-entropy":
        shifted = z - z.max()
        log_norm = np.log(np.exp(shifted).sum())
        probs = np.exp(shifted - log_norm)
        g = probs.copy()
        g[label] -= 1.0
        return float(log_norm - shifted[label]), g
    if kind == "squared":
        target = np.zeros_like(z)
        target[label] = 1.0
        resid = z - target
        return 0.5 * float(resid @ resid), resid
    raise ValueError(f"unknown loss {kind!r}")


def loss(logits, label: int, kind: str) -> float:
    """Multiclass hinge (sum of ``max(0, 1 + z_j - z_y)`` over wrong classes),
    softmax cross-entropy, or half squared error against the one-hot target."""
    return loss_and_grad(logits, label, kind)[0]


def spectral_penalty(lambdas, alpha: float) -> float:
    lam = np.asarray(lambdas, dtype=float)
    return alpha / lam.size * float(np.abs(lam).sum())


def spectral_penalty_grad(lambdas, alpha: float) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    return alpha / lam.size * np.sign(lam)
