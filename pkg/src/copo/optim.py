"""Gradient-based game optimizers: GDA, Neumann-truncated updates and CoPG.

Player 1 ascends and player 2 descends the same objective (player 1's
expected return). Every step accepts either an annotated
:class:`~copo.estimators.Batch` or explicit :class:`~copo.estimators.GameTerms`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import DomainError, JointUpdate, NumericalFailure, pack
from .estimators import Batch, GameTerms, game_terms


class CgDivergence(NumericalFailure):
    pass


@dataclass(frozen=True)
class CgConfig:
    tol: float = 1e-10
    max_iter: Optional[int] = None  # None -> min(dim, 200)
    warm_start: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("CG tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise DomainError("CG max_iter must be >= 1")

    def iters_for(self, dim: int) -> int:
        return self.max_iter if self.max_iter is not None else max(1, min(dim, 200))


def cg_solve(
    matvec: Callable[[np.ndarray], np.ndarray],
    b,
    cfg: CgConfig = CgConfig(),
    x0: Optional[np.ndarray] = None,
):
    """Conjugate gradient for an SPD operator; returns ``(x, iters, residual)``.

    Stops once ``||Ax - b|| <= tol * max(1, ||b||)``.
    """
    b = np.asarray(b, dtype=np.float64)
    max_iter = cfg.iters_for(b.shape[0])
    thresh = cfg.tol * max(1.0, float(np.linalg.norm(b)))
    if x0 is not None and cfg.warm_start:
        x = np.array(x0, dtype=np.float64)
        r = b - matvec(x)
    else:
        x = np.zeros_like(b)
        r = b.copy()
    rr = float(r @ r)
    if not np.isfinite(rr):
        raise CgDivergence("non-finite residual")
    if np.sqrt(rr) <= thresh:
        return x, 0, np.sqrt(rr)
    p = r.copy()
    for it in range(1, max_iter + 1):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0.0:
            raise CgDivergence("operator is not positive definite or produced non-finite values")
        a = rr / pAp
        x = x + a * p
        r = r - a * Ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise CgDivergence("non-finite residual")
        if np.sqrt(rr_new) <= thresh:
            return x, it, np.sqrt(rr_new)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, max_iter, np.sqrt(rr)


def _terms(source, surrogate: bool = False) -> GameTerms:
    if isinstance(source, GameTerms):
        return source
    if isinstance(source, Batch):
        return game_terms(source, surrogate=surrogate)
    raise DomainError(f"expected Batch or GameTerms, got {type(source).__name__}")


def _check_alpha(alpha):
    if not alpha > 0:
        raise DomainError("step size must be positive")


def gda_step(g1, g2, alpha: float) -> JointUpdate:
    _check_alpha(alpha)
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    return JointUpdate.from_parts(alpha * g1, alpha * -g2, info={"grads": (g1, g2)})


def copg_step(source, alpha: float, cfg: CgConfig = CgConfig(), x0=None) -> JointUpdate:
    """Competitive policy gradient step.

    Player 1's system ``(I + a^2 D12 D21) x = g1 - a D12 g2`` is solved by CG
    (warm-started from ``x0``); player 2 plays the closed-form counter
    strategy ``-a (D21 d1 + g2)``.
    """
    _check_alpha(alpha)
    t = _terms(source)
    a2 = alpha * alpha
    rhs = t.g1 - alpha * t.d12(t.g2)
    x, iters, res = cg_solve(lambda v: v + a2 * t.d12(t.d21(v)), rhs, cfg, x0)
    d1 = alpha * x
    d2 = -alpha * (t.d21(d1) + t.g2)
    if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
        raise NumericalFailure("non-finite CoPG update")
    return JointUpdate.from_parts(
        d1, d2, solver_iters=iters, info={"grads": (t.g1, t.g2), "cg_solution": x, "cg_residual": res}
    )


def truncated_step(source, alpha: float, N: int) -> JointUpdate:
    """Order-N Neumann approximation of the CoPG inverse (N=0 GDA, N=1 LOLA)."""
    _check_alpha(alpha)
    if N < 0:
        raise DomainError("N must be >= 0")
    t = _terms(source)
    c1, c2 = t.g1.copy(), -t.g2
    s1, s2 = c1.copy(), c2.copy()
    for _ in range(N):
        c1, c2 = alpha * t.d12(c2), -alpha * t.d21(c1)
        s1 = s1 + c1
        s2 = s2 + c2
    return JointUpdate.from_parts(alpha * s1, alpha * s2, info={"grads": (t.g1, t.g2)})


def selfplay_copg_parts(source, alpha: float, cfg: CgConfig = CgConfig()) -> JointUpdate:
    """The two sequential half-updates of shared-parameter CoPG.

    ``delta.p1`` moves the shared parameters as the first role, ``delta.p2``
    as the second; their sum is the full update.
    """
    _check_alpha(alpha)
    t = _terms(source)
    if t.dims[0] != t.dims[1]:
        raise DomainError("self-play needs one shared parameter space")
    a2 = alpha * alpha
    x1, it1, _ = cg_solve(lambda v: v + a2 * t.d12(t.d21(v)), t.g1 - alpha * t.d12(t.g2), cfg)
    x2, it2, _ = cg_solve(lambda v: v + a2 * t.d21(t.d12(v)), t.g2 + alpha * t.d21(t.g1), cfg)
    return JointUpdate.from_parts(alpha * x1, -alpha * x2, solver_iters=it1 + it2, info={"grads": (t.g1, t.g2)})


def selfplay_copg_step(source, alpha: float, cfg: CgConfig = CgConfig()) -> np.ndarray:
    parts = selfplay_copg_parts(source, alpha, cfg)
    return parts.delta.p1 + parts.delta.p2


# ------------------------------------------------------- optimizer state


@dataclass
class OptimizerState:
    theta1: np.ndarray
    theta2: np.ndarray
    v1: Optional[np.ndarray] = None
    v2: Optional[np.ndarray] = None
    t: int = 0
    cg_x0: Optional[np.ndarray] = None

    def apply(self, update: JointUpdate) -> None:
        self.theta1 = self.theta1 + update.delta.p1
        self.theta2 = self.theta2 + update.delta.p2
        if "cg_solution" in update.info:
            self.cg_x0 = update.info["cg_solution"]


def adaptive_scale(state: OptimizerState, update: JointUpdate, beta: float = 0.9, eps: float = 1e-8) -> JointUpdate:
    """RMSProp-style rescaling by ``1/sqrt(v_hat + eps)`` per coordinate.

    ``v`` is a bias-corrected EMA of squared gradients, read from
    ``update.info["grads"]``. Mutates the accumulators in ``state``.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError("beta must lie in (0, 1)")
    if not eps > 0:
        raise DomainError("eps must be positive")
    try:
        g1, g2 = update.info["grads"]
    except KeyError:
        raise DomainError("update carries no gradients to scale by") from None
    if state.v1 is None:
        state.v1 = np.zeros_like(g1)
        state.v2 = np.zeros_like(g2)
    state.t += 1
    state.v1 = beta * state.v1 + (1.0 - beta) * g1 * g1
    state.v2 = beta * state.v2 + (1.0 - beta) * g2 * g2
    corr = 1.0 - beta**state.t
    s1 = 1.0 / np.sqrt(state.v1 / corr + eps)
    s2 = 1.0 / np.sqrt(state.v2 / corr + eps)
    scaled = pack(update.delta.p1 * s1, update.delta.p2 * s2)
    return replace(update, delta=scaled, info={**update.info, "scale": (s1, s2)})
