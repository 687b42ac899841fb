"""Quick numerical self-checks run by ``dsl selfcheck``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gradflow, slcore
from .fieldline import CoefficientTrace
from .model import DslModel


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def smooth_profile(rng: np.random.Generator, K: int, lo: float, hi: float, modes: int = 4) -> np.ndarray:
    """Random sum of sines on [0, 1] rescaled to span [lo, hi]."""
    s = np.linspace(0.0, 1.0, K + 1)
    f = sum(rng.normal() * np.sin((j + 1) * math.pi * s + rng.uniform(0, 2 * math.pi)) for j in range(modes))
    f = (f - f.min()) / (np.ptp(f) + 1e-300)
    return lo + (hi - lo) * f


def random_trace(rng: np.random.Generator, K: int = 2000, d: int = 6) -> CoefficientTrace:
    length = rng.uniform(0.5, 2.0)
    t_minus = -rng.uniform(0.1, length - 0.1)
    return CoefficientTrace.from_values(t_minus, t_minus + length, smooth_profile(rng, K, 1.0, 10.0),
                                        smooth_profile(rng, K, -10.0, 10.0),
                                        smooth_profile(rng, K, 0.1, 10.0), d=d)


def check_analytic() -> CheckResult:
    tr = CoefficientTrace.from_values(0.0, 1.0, np.ones(2001), 0.0, 1.0, d=10)
    spec = slcore.spectrum(tr, 10, 1e-10, 1e-10, 1e-10)
    n = np.arange(1, 11)
    lam_err = float(np.max(np.abs(spec.lambdas / (n * math.pi) ** 2 - 1)))
    basis = slcore.eval_basis(tr, spec)
    exact = np.sin(n[:, None] * math.pi * basis.times) / (n[:, None] * math.pi)
    u_err = float(np.max(np.abs(basis.u - exact)))
    return CheckResult("analytic eigenpairs", lam_err < 1e-6 and u_err < 1e-4,
                       f"max rel eigenvalue error {lam_err:.2e}, eigenfunction sup error {u_err:.2e}")


def check_shift() -> CheckResult:
    tr = CoefficientTrace.from_values(0.0, 1.0, np.ones(2001), 5.0, 1.0)
    lam = slcore.solve_nth(tr, 1, 1e-10, 1e-10, 1e-10)
    lo, hi = slcore.eigen_bounds(tr, 1)
    exact = math.pi ** 2 + 5
    err = abs(lam / exact - 1)
    inside = lo - 1e-9 * exact <= lam <= hi + 1e-9 * exact
    return CheckResult("constant potential shift", err < 1e-6 and inside,
                       f"rel error {err:.2e}, bounds ({lo:.6f}, {hi:.6f})")


def check_oracle(count: int = 5, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, outside = 0.0, 0
    for _ in range(count):
        tr = random_trace(rng)
        spec = slcore.spectrum(tr, 6, 1e-8, 1e-10, 1e-10)
        fd = slcore.fd_oracle(tr, 6, 2000)
        worst = max(worst, float(np.max(np.abs(spec.lambdas / fd - 1))))
        outside += int(np.sum((spec.lambdas < spec.bounds[:, 0]) | (spec.lambdas > spec.bounds[:, 1])))
    return CheckResult("bounds and finite-difference oracle", worst < 1e-3 and outside == 0,
                       f"max rel difference {worst:.2e}, eigenvalues outside bounds {outside}")


def check_orthogonality(count: int = 5, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, bad_counts = 0.0, 0
    for _ in range(count):
        tr = random_trace(rng)
        spec = slcore.spectrum(tr, 6, 1e-8, 1e-10, 1e-10)
        basis = slcore.eval_basis(tr, spec, 4000)
        G = slcore.orthogonality_gram(tr, basis)
        norm = np.sqrt(np.diag(G))
        off = np.abs(G / np.outer(norm, norm) - np.eye(6))
        worst = max(worst, float(off.max()))
        counts = [slcore.count_sign_changes(basis.u[i, 1:-1]) for i in range(6)]
        bad_counts += int(counts != list(range(6)))
    return CheckResult("orthogonality and zero counts", worst < 1e-3 and bad_counts == 0,
                       f"max normalised off-diagonal {worst:.2e}, traces with wrong zero count {bad_counts}")


def check_gradient(seed: int = 0) -> CheckResult:
    model = DslModel.create(2, 2, 2, hidden=(4,), seed=seed)
    report = gradflow.fd_check(model, np.array([0.4, 0.6]), 1, step=1e-5)
    ok = report.fraction_within >= 0.99 and report.max_rel_error <= 1e-2
    parts = ", ".join(f"{k} {v:.1e}" for k, v in report.per_network.items())
    return CheckResult("implicit gradient vs finite differences", ok,
                       f"{100 * report.fraction_within:.1f}% within 1e-3, max {report.max_rel_error:.2e} ({parts})")


CHECKS: list[Callable[[], CheckResult]] = [
    check_analytic, check_shift, check_oracle, check_orthogonality, check_gradient,
]


def run_all() -> list[CheckResult]:
    return [check() for check in CHECKS]
