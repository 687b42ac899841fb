"""Training and evaluation of the Sturm-Liouville predictor."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional

import numpy as np

from .errors import TrainingAborted
from .gradflow import batch_grad
from .losses import LOSS_KINDS, loss, loss_and_grad, spectral_penalty_grad
from .losses import spectral_penalty as _penalty
from .model import (DEFAULT_HIDDEN, DslModel, SampleForward, SolverConfig, forward_batch, predict,
                    predict_batch)

__all__ = [
    "TrainConfig", "DatasetSplit", "Normalization", "EpochRecord", "FitResult", "EvalResult",
    "Adam", "DslModel", "predict", "predict_batch", "loss", "spectral_penalty", "normalize",
    "denormalize", "make_split", "two_moons", "fit", "evaluate",
]

LOWER, UPPER = 0.25, 0.75


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    epochs: int = 40
    batch_size: int = 32
    d: int = 10
    alpha: float = 1e-4
    loss: str = "hinge"
    seed: int = 0
    tol_lambda: float = 1e-4
    tol_t: float = 1e-4
    knots: int = 2000
    rtol: float = 1e-6
    atol: float = 1e-6
    max_steps: int = 100_000
    freeze_knot_positions: bool = False
    hidden: tuple = DEFAULT_HIDDEN
    learn_v: bool = False
    head_bias: bool = True
    ablation: bool = False
    init_scheme: str = "glorot-uniform"
    max_fail_fraction: float = 0.1
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.d < 1:
            raise ValueError("epochs must be >= 0, batch_size and d >= 1")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if not 0 <= self.max_fail_fraction <= 1:
            raise ValueError("max_fail_fraction must lie in [0, 1]")
        self.solver()

    def solver(self) -> SolverConfig:
        return SolverConfig(self.knots, self.tol_t, self.tol_lambda, self.rtol, self.atol, self.max_steps,
                            self.freeze_knot_positions, self.threads)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Normalization:
    mins: np.ndarray
    maxs: np.ndarray


@dataclass(frozen=True)
class DatasetSplit:
    features: np.ndarray
    labels: np.ndarray
    normalization: Normalization

    def __len__(self) -> int:
        return self.labels.size


def normalize(raw, stats: Optional[Normalization] = None) -> tuple[np.ndarray, Normalization]:
    """Affine map of each feature so the training range becomes [0.25, 0.75].

    Values beyond the training range are clipped to the same band; constant
    features map to 0.5.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if stats is None:
        stats = Normalization(raw.min(axis=0), raw.max(axis=0))
    span = stats.maxs - stats.mins
    flat = span == 0
    scaled = LOWER + (UPPER - LOWER) * (raw - stats.mins) / np.where(flat, 1.0, span)
    scaled[:, flat] = 0.5
    return np.clip(scaled, LOWER, UPPER), stats


def denormalize(features, stats: Normalization) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    return stats.mins + (features - LOWER) / (UPPER - LOWER) * (stats.maxs - stats.mins)


def make_split(raw, labels, stats: Optional[Normalization] = None) -> DatasetSplit:
    feats, stats = normalize(raw, stats)
    return DatasetSplit(feats, np.asarray(labels, dtype=int), stats)


def two_moons(m: int, noise: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Two interleaved half circles, ``m // 2`` points each, with Gaussian noise."""
    if m % 2:
        raise ValueError("m must be even")
    rng = np.random.default_rng(seed)
    half = m // 2
    ang_outer = rng.uniform(0.0, math.pi, half)
    ang_inner = rng.uniform(0.0, math.pi, half)
    outer = np.column_stack([np.cos(ang_outer), np.sin(ang_outer)])
    inner = np.column_stack([1.0 - np.cos(ang_inner), 0.5 - np.sin(ang_inner)])
    X = np.vstack([outer, inner]) + noise * rng.standard_normal((m, 2))
    y = np.repeat([0, 1], half)
    order = rng.permutation(m)
    return X[order], y[order]


def spectral_penalty(spec, alpha: float) -> float:
    """``alpha / d * sum |lambda_i|`` for a spectrum or a plain eigenvalue vector."""
    return _penalty(getattr(spec, "lambdas", spec), alpha)


class Adam:
    def __init__(self, lr: float = 2e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    skipped: int


@dataclass
class FitResult:
    model: DslModel
    history: list[EpochRecord]
    best_epoch: int
    final_model: DslModel


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    mean_loss: float
    failures: int


def _batch_step(model: DslModel, X, y, config: TrainConfig, solver: SolverConfig):
    """Mean loss and gradient over the samples of one minibatch that went through."""
    fws = forward_batch(model, X, solver)
    ok = [i for i, f in enumerate(fws) if isinstance(f, SampleForward)]
    failed = len(fws) - len(ok)
    if failed > config.max_fail_fraction * len(fws):
        raise TrainingAborted(f"{failed} of {len(fws)} samples failed in one batch")
    if not ok:
        return None, np.zeros(model.size), failed
    keep = [fws[i] for i in ok]
    losses, g_logits, g_lams = [], [], []
    for i, fw in zip(ok, keep):
        val, g = loss_and_grad(fw.logits, int(y[i]), config.loss)
        losses.append(val + _penalty(fw.lambdas, config.alpha))
        g_logits.append(g)
        g_lams.append(spectral_penalty_grad(fw.lambdas, config.alpha))
    grad, used = batch_grad(model, keep, np.array(g_logits), np.array(g_lams), solver)
    n_used = int(used.sum())
    if n_used == 0:
        return None, grad, failed + len(keep)
    return float(np.mean(np.array(losses)[used])), grad / n_used, failed + len(keep) - n_used


def evaluate(model: DslModel, split: DatasetSplit, solver: SolverConfig = SolverConfig(),
             kind: str = "hinge", batch_size: int = 256) -> EvalResult:
    """Accuracy of argmax logits (failed samples count as wrong), mean loss over the rest."""
    if len(split) == 0:
        raise ValueError("empty split")
    correct, failures, losses = 0, 0, []
    for start in range(0, len(split), batch_size):
        X = split.features[start:start + batch_size]
        y = split.labels[start:start + batch_size]
        logits, ok = predict_batch(model, X, solver)
        failures += int((~ok).sum())
        correct += int(np.sum(np.argmax(logits[ok], axis=1) == y[ok]))
        losses += [loss(z, int(t), kind) for z, t in zip(logits[ok], y[ok])]
    return EvalResult(correct / len(split), float(np.mean(losses)) if losses else float("nan"), failures)


def fit(config: TrainConfig, train: DatasetSplit, val: DatasetSplit, model: Optional[DslModel] = None,
        n_classes: Optional[int] = None,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> FitResult:
    """Adam over shuffled minibatches; keeps the parameters with the best validation accuracy."""
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation splits must be nonempty")
    n = train.features.shape[1]
    k = n_classes or int(max(train.labels.max(), val.labels.max())) + 1
    if model is None:
        model = DslModel.create(n, k, config.d, config.hidden, config.learn_v, config.head_bias,
                                config.ablation, config.init_scheme, config.seed)
    solver = config.solver()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(7)[6])
    opt = Adam(config.lr)
    theta = model.flat()
    best, best_acc, best_epoch = model, -1.0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total, count, skipped = 0.0, 0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_loss, grad, bad = _batch_step(model, train.features[idx], train.labels[idx], config, solver)
            skipped += bad
            if batch_loss is None:
                continue
            n_ok = len(idx) - bad
            total += batch_loss * n_ok
            count += n_ok
            theta = opt.step(theta, grad)
            model = model.with_flat(theta)
        acc = evaluate(model, val, solver, config.loss).accuracy
        rec = EpochRecord(epoch, total / count if count else float("nan"), acc, skipped)
        history.append(rec)
        if acc > best_acc:
            best, best_acc, best_epoch = model, acc, epoch
        if on_epoch is not None:
            on_epoch(rec)
    if config.epochs == 0:
        best = model
    return FitResult(best, history, best_epoch, model)
