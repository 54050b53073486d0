"""KL trust-region game optimizers (TRGDA and TRCoPO).

Both players' steps come from the stationarity conditions of the linear-
bilinear surrogate game penalised by ``lam/2`` times the quadratic KL model::

    lam A11 d1 =   g1 + B12 d2
    lam A22 d2 = -(g2 + B21 d1)

``lam`` is line-searched (doubling) until ``d1'A11 d1 + d2'A22 d2 <= delta``.
TRGDA is the same solve with ``B12 = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core import DomainError, JointUpdate, JointVec, NumericalFailure, pack
from .estimators import (
    Batch,
    bilinear_dense,
    grad_eta,
    kl_hessian_dense,
    kl_hessian_matvec,
    surrogate_bilinear_matvec,
    surrogate_value,
)
from .optim import CgConfig, cg_solve

RIDGE = 1e-8
LAMBDA_FLOOR = 1e-6


class TrustRegionFailure(NumericalFailure):
    pass


@dataclass(frozen=True)
class TrustRegionConfig:
    delta: float = 0.01
    lambda0: Union[float, str] = "auto"
    max_doublings: int = 40
    cg: CgConfig = CgConfig(tol=1e-12, max_iter=1000)
    dense_max_dim: int = 512
    require_mutual_gain: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError("trust-region delta must be positive")
        if self.max_doublings < 1:
            raise DomainError("max_doublings must be >= 1")
        if self.lambda0 != "auto" and not float(self.lambda0) > 0:
            raise DomainError("lambda0 must be positive or 'auto'")


@dataclass(frozen=True)
class ConstrainedSolveResult:
    delta_theta: JointVec
    lam: float
    constraint_value: float
    solver_iters: int = 0
    ridge: bool = False


@dataclass
class SurrogateProblem:
    """Gradients, KL-Hessian blocks and surrogate mixed derivative."""

    g1: np.ndarray
    g2: np.ndarray
    a11: Callable[[np.ndarray], np.ndarray]
    a22: Callable[[np.ndarray], np.ndarray]
    b12: Callable[[np.ndarray], np.ndarray]
    b21: Callable[[np.ndarray], np.ndarray]
    dense: Optional[Callable[[], tuple]] = None  # -> (A11, A22, B12)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dims(self):
        return self.g1.shape[0], self.g2.shape[0]

    def matrices(self):
        if "m" not in self._cache:
            if self.dense is not None:
                self._cache["m"] = self.dense()
            else:
                d1, d2 = self.dims
                A11 = np.stack([self.a11(e) for e in np.eye(d1)], axis=1)
                A22 = np.stack([self.a22(e) for e in np.eye(d2)], axis=1)
                B12 = np.stack([self.b12(e) for e in np.eye(d2)], axis=1)
                self._cache["m"] = (0.5 * (A11 + A11.T), 0.5 * (A22 + A22.T), B12)
        return self._cache["m"]

    def constraint(self, d1, d2) -> float:
        return float(d1 @ self.a11(d1) + d2 @ self.a22(d2))

    @classmethod
    def from_batch(cls, batch: Batch) -> "SurrogateProblem":
        return cls(
            grad_eta(batch, 1),
            grad_eta(batch, 2),
            lambda v: kl_hessian_matvec(batch, 1, v),
            lambda v: kl_hessian_matvec(batch, 2, v),
            lambda v: surrogate_bilinear_matvec(batch, 12, v),
            lambda v: surrogate_bilinear_matvec(batch, 21, v),
            dense=lambda: (
                kl_hessian_dense(batch, 1),
                kl_hessian_dense(batch, 2),
                bilinear_dense(batch, surrogate=True),
            ),
        )

    @classmethod
    def from_matrices(cls, g1, g2, A11, A22, B12) -> "SurrogateProblem":
        g1, g2 = np.asarray(g1, float), np.asarray(g2, float)
        A11, A22, B12 = (np.asarray(m, float) for m in (A11, A22, B12))
        return cls(
            g1, g2,
            lambda v: A11 @ v, lambda v: A22 @ v,
            lambda v: B12 @ v, lambda v: B12.T @ v,
            dense=lambda: (A11, A22, B12),
        )

    def decoupled(self) -> "SurrogateProblem":
        d1, d2 = self.dims
        zero12 = lambda v: np.zeros(d1)
        zero21 = lambda v: np.zeros(d2)
        dense = lambda: self.matrices()[:2] + (np.zeros((d1, d2)),)
        return SurrogateProblem(self.g1, self.g2, self.a11, self.a22, zero12, zero21, dense)


def _problem(source) -> SurrogateProblem:
    if isinstance(source, SurrogateProblem):
        return source
    if isinstance(source, Batch):
        return SurrogateProblem.from_batch(source)
    raise DomainError(f"expected Batch or SurrogateProblem, got {type(source).__name__}")


def _regularise(A) -> tuple[np.ndarray, bool]:
    w = np.linalg.eigvalsh(A)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() <= 1e-12 * scale:
        return A + RIDGE * np.eye(A.shape[0]), True
    return A, False


def solve_constrained_system(source, lam: float, cfg: TrustRegionConfig = TrustRegionConfig()) -> ConstrainedSolveResult:
    """Solve the penalised stationarity system for a fixed ``lam``.

    Dense block solve up to ``cfg.dense_max_dim`` total parameters, otherwise
    matrix-free CG on the player-1 Schur complement.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    p = _problem(source)
    d1, d2 = p.dims
    if d1 + d2 <= cfg.dense_max_dim:
        A11, A22, B12 = p.matrices()
        A11r, f1 = _regularise(A11)
        A22r, f2 = _regularise(A22)
        K = np.block([[lam * A11r, -B12], [B12.T, lam * A22r]])
        sol = np.linalg.solve(K, np.concatenate([p.g1, -p.g2]))
        x1, x2 = sol[:d1], sol[d1:]
        iters, ridge = 0, f1 or f2
    else:
        # matrix-free path: ridge always on since singularity is not checked
        a11 = lambda v: p.a11(v) + RIDGE * v
        a22 = lambda v: p.a22(v) + RIDGE * v
        inner = CgConfig(tol=cfg.cg.tol, max_iter=cfg.cg.max_iter, warm_start=False)
        count = [0]

        def a22_inv(v):
            x, it, _ = cg_solve(a22, v, inner)
            count[0] += it
            return x

        schur = lambda v: lam * a11(v) + p.b12(a22_inv(p.b21(v))) / lam
        rhs = p.g1 - p.b12(a22_inv(p.g2)) / lam
        x1, it, _ = cg_solve(schur, rhs, cfg.cg)
        x2 = -a22_inv(p.g2 + p.b21(x1)) / lam
        iters, ridge = it + count[0], True
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise NumericalFailure("non-finite trust-region solution")
    return ConstrainedSolveResult(pack(x1, x2), float(lam), p.constraint(x1, x2), iters, ridge)


def lambda_init(source, delta: float) -> float:
    """Smallest per-player closed-form multiplier ``sqrt(g' A^-1 g / delta)``."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    p = _problem(source)
    A11, A22, _ = p.matrices()
    lams = []
    for g, A in ((p.g1, A11), (p.g2, A22)):
        if not np.any(g):
            continue
        A, _ = _regularise(A)
        q = float(g @ np.linalg.solve(A, g))
        lams.append(np.sqrt(max(q, 0.0) / delta))
    lams = [l for l in lams if l > 0]
    return max(min(lams), LAMBDA_FLOOR) if lams else LAMBDA_FLOOR


def _line_search(p: SurrogateProblem, cfg: TrustRegionConfig, base: Optional[Batch] = None) -> JointUpdate:
    lam = lambda_init(p, cfg.delta) if cfg.lambda0 == "auto" else float(cfg.lambda0)
    for trial in range(cfg.max_doublings + 1):
        res = solve_constrained_system(p, lam, cfg)
        if res.constraint_value <= cfg.delta:
            info = {"grads": (p.g1, p.g2), "doublings": trial, "ridge": res.ridge}
            update = JointUpdate(res.delta_theta, res.solver_iters, res.lam, res.constraint_value, info)
            if cfg.require_mutual_gain and base is not None:
                update = _mutual_gain_filter(base, update)
            return update
        lam *= 2.0
    raise TrustRegionFailure(f"constraint still violated after {cfg.max_doublings} doublings")


def _mutual_gain_filter(batch: Batch, update: JointUpdate) -> JointUpdate:
    t1, t2 = batch.theta1, batch.theta2
    base = surrogate_value(batch, t1, t2)
    gain1 = surrogate_value(batch, t1 + update.delta.p1, t2) - base
    gain2 = base - surrogate_value(batch, t1, t2 + update.delta.p2)
    if gain1 > 0 and gain2 > 0:
        return update
    zero = pack(np.zeros_like(t1), np.zeros_like(t2))
    return JointUpdate(zero, update.solver_iters, update.lam, 0.0, {**update.info, "rejected": True})


def trcopo_step(source, cfg: TrustRegionConfig = TrustRegionConfig()) -> JointUpdate:
    """Trust-region competitive step with the bilinear surrogate coupling."""
    batch = source if isinstance(source, Batch) else None
    return _line_search(_problem(source), cfg, batch)


def trgda_step(source, cfg: TrustRegionConfig = TrustRegionConfig()) -> JointUpdate:
    """Independent KL-constrained steps sharing one joint budget."""
    batch = source if isinstance(source, Batch) else None
    return _line_search(_problem(source).decoupled(), cfg, batch)
