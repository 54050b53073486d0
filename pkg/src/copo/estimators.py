"""Monte-Carlo estimators for competitive policy updates.

A :class:`Batch` stores ``n`` trajectories padded to a common length ``T``
with a validity mask. All estimates average over trajectories (not steps) and
use ``np.einsum`` without path optimisation, so reductions run in a fixed
order and are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import DimensionMismatchError, DomainError, EmptyRequestError
from .policies import PolicyFamily

RIDGE = 1e-6


@dataclass
class Trajectory:
    steps: list  # (state, a1, a2, reward)
    terminal_state: np.ndarray

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s[3] for s in self.steps], dtype=np.float64)


@dataclass(frozen=True)
class ValueModel:
    weights: np.ndarray  # value features followed by bias

    def __call__(self, value_feats: np.ndarray) -> np.ndarray:
        return value_feats @ self.weights[:-1] + self.weights[-1]


@dataclass
class Batch:
    fam1: PolicyFamily
    fam2: PolicyFamily
    theta1: np.ndarray
    theta2: np.ndarray
    states: np.ndarray  # (n, T+1, state_dim)
    feats1: np.ndarray  # (n, T, f1)
    feats2: np.ndarray
    actions1: np.ndarray  # (n, T) ints or (n, T, k) reals
    actions2: np.ndarray
    rewards: np.ndarray  # (n, T), player 1's reward
    mask: np.ndarray  # (n, T) bool
    value_feats: np.ndarray  # (n, T, fv)
    gamma: float
    info: dict = field(default_factory=dict)
    # filled by annotate()
    scores1: Optional[np.ndarray] = None
    scores2: Optional[np.ndarray] = None
    cum1: Optional[np.ndarray] = None
    cum2: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    value_model: Optional[ValueModel] = None

    @property
    def n_traj(self) -> int:
        return self.mask.shape[0]

    @property
    def horizon(self) -> int:
        return self.mask.shape[1]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def discounts(self) -> np.ndarray:
        return self.gamma ** np.arange(self.horizon, dtype=np.float64)

    def trajectory(self, i: int) -> Trajectory:
        L = int(self.lengths[i])
        steps = [
            (self.states[i, k], self.actions1[i, k], self.actions2[i, k], float(self.rewards[i, k]))
            for k in range(L)
        ]
        return Trajectory(steps, self.states[i, L])

    def annotated(self) -> bool:
        return self.advantages is not None and self.scores1 is not None

    def step_weights(self) -> np.ndarray:
        """gamma^k * A_k on valid steps, zero on padding."""
        if not self.annotated():
            raise DomainError("batch has no advantages; call annotate() first")
        return np.where(self.mask, self.advantages * self.discounts, 0.0)

    # the estimator entry points, as methods for convenience
    def grad(self, player: int) -> np.ndarray:
        return grad_eta(self, player)

    def game_terms(self, surrogate: bool = False) -> "GameTerms":
        return game_terms(self, surrogate=surrogate)


# ---------------------------------------------------------------- returns


def mc_returns(rewards, gamma: float) -> np.ndarray:
    """Discounted reward-to-go of one trajectory."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise EmptyRequestError("empty trajectory")
    out = np.empty_like(rewards)
    acc = 0.0
    for k in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[k] + gamma * acc
        out[k] = acc
    return out


def _batch_returns(rewards: np.ndarray, mask: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[0])
    for k in range(rewards.shape[1] - 1, -1, -1):
        acc = np.where(mask[:, k], rewards[:, k] + gamma * acc, 0.0)
        out[:, k] = acc
    return out


def fit_value_baseline(batch: Batch, features: Optional[np.ndarray] = None) -> ValueModel:
    """Ridge least-squares fit of per-step returns onto ``(features, 1)``."""
    feats = batch.value_feats if features is None else features
    returns = batch.returns if batch.returns is not None else _batch_returns(batch.rewards, batch.mask, batch.gamma)
    m = batch.mask
    if not m.any():
        raise EmptyRequestError("batch has no steps")
    X = feats[m]
    X = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
    y = returns[m]
    A = X.T @ X + RIDGE * np.eye(X.shape[1])
    return ValueModel(np.linalg.solve(A, X.T @ y))


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantages for one trajectory.

    ``values`` holds V(s_0..s_{L-1}); the value after the last step is 0.
    """
    if not 0.0 <= lam <= 1.0:
        raise DomainError("GAE lambda must lie in [0, 1]")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    nxt = np.append(values[1:], 0.0)
    delta = rewards + gamma * nxt - values
    out = np.empty_like(delta)
    acc = 0.0
    for k in range(delta.shape[0] - 1, -1, -1):
        acc = delta[k] + gamma * lam * acc
        out[k] = acc
    return out


def _batch_gae(rewards, values, mask, gamma, lam):
    values = np.where(mask, values, 0.0)
    nxt = np.concatenate([values[:, 1:], np.zeros((values.shape[0], 1))], axis=1)
    delta = np.where(mask, rewards + gamma * nxt - values, 0.0)
    out = np.zeros_like(delta)
    acc = np.zeros(delta.shape[0])
    for k in range(delta.shape[1] - 1, -1, -1):
        acc = np.where(mask[:, k], delta[:, k] + gamma * lam * acc, 0.0)
        out[:, k] = acc
    return out


def _exclusive_cumsum(x: np.ndarray) -> np.ndarray:
    c = np.cumsum(x, axis=1)
    return np.concatenate([np.zeros_like(x[:, :1]), c[:, :-1]], axis=1)


def annotate(
    batch: Batch,
    advantage: str = "gae",
    lam: float = 0.95,
    recenter: bool = False,
) -> Batch:
    """Attach scores, cumulative scores, returns and advantages in place.

    advantage: ``"mc"`` (plain discounted return, no baseline), ``"mc_baseline"``
    (return minus fitted V) or ``"gae"``.
    """
    m = batch.mask[..., None]
    batch.scores1 = np.where(m, batch.fam1.score(batch.theta1, batch.feats1, batch.actions1), 0.0)
    batch.scores2 = np.where(m, batch.fam2.score(batch.theta2, batch.feats2, batch.actions2), 0.0)
    batch.cum1 = _exclusive_cumsum(batch.scores1)
    batch.cum2 = _exclusive_cumsum(batch.scores2)
    batch.returns = _batch_returns(batch.rewards, batch.mask, batch.gamma)
    if advantage == "mc":
        adv = batch.returns.copy()
    elif advantage in ("gae", "mc_baseline"):
        batch.value_model = fit_value_baseline(batch)
        values = batch.value_model(batch.value_feats)
        if advantage == "gae":
            adv = _batch_gae(batch.rewards, values, batch.mask, batch.gamma, lam)
        else:
            adv = np.where(batch.mask, batch.returns - values, 0.0)
    else:
        raise DomainError(f"unknown advantage estimator {advantage!r}")
    if recenter:
        valid = adv[batch.mask]
        adv = np.where(batch.mask, adv - valid.mean(), 0.0)
    batch.advantages = adv
    return batch


# ------------------------------------------------------------- gradients


def _weighted_sum(w: np.ndarray, x: np.ndarray, n: int) -> np.ndarray:
    return np.einsum("nt,ntd->d", w, x) / n


def grad_eta(batch: Batch, player: int) -> np.ndarray:
    s = _scores(batch, player)
    return _weighted_sum(batch.step_weights(), s, batch.n_traj)


def surrogate_grad(batch: Batch, player: int) -> np.ndarray:
    # identical per-sample form; the surrogate only differs in its bilinear term
    return grad_eta(batch, player)


def _scores(batch: Batch, player: int) -> np.ndarray:
    if player == 1:
        return batch.scores1
    if player == 2:
        return batch.scores2
    raise DomainError("player must be 1 or 2")


def _check_dim(v: np.ndarray, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (d,):
        raise DimensionMismatchError(f"vector of shape {v.shape}, expected ({d},)")
    return v


def bilinear_matvec(batch: Batch, direction: int, v) -> np.ndarray:
    """Matrix-free product with the estimated mixed derivative.

    direction 12 maps a player-2 vector to player-1 space; 21 is its exact
    transpose built from the same per-sample scalars.
    """
    w = batch.step_weights()
    s1, s2, c1, c2 = batch.scores1, batch.scores2, batch.cum1, batch.cum2
    n = batch.n_traj
    if direction == 12:
        v = _check_dim(v, s2.shape[-1])
        a = np.einsum("ntd,d->nt", s2, v)
        b = np.einsum("ntd,d->nt", c2, v)
        return _weighted_sum(w * a, s1 + c1, n) + _weighted_sum(w * b, s1, n)
    if direction == 21:
        v = _check_dim(v, s1.shape[-1])
        a = np.einsum("ntd,d->nt", s1 + c1, v)
        b = np.einsum("ntd,d->nt", s1, v)
        return _weighted_sum(w * a, s2, n) + _weighted_sum(w * b, c2, n)
    raise DomainError("direction must be 12 or 21")


def surrogate_bilinear_matvec(batch: Batch, direction: int, v) -> np.ndarray:
    w = batch.step_weights()
    s1, s2 = batch.scores1, batch.scores2
    if direction == 12:
        v = _check_dim(v, s2.shape[-1])
        return _weighted_sum(w * np.einsum("ntd,d->nt", s2, v), s1, batch.n_traj)
    if direction == 21:
        v = _check_dim(v, s1.shape[-1])
        return _weighted_sum(w * np.einsum("ntd,d->nt", s1, v), s2, batch.n_traj)
    raise DomainError("direction must be 12 or 21")


def bilinear_dense(batch: Batch, surrogate: bool = False) -> np.ndarray:
    """Explicit (d1, d2) estimate of the mixed derivative."""
    w = batch.step_weights()
    s1, s2, c1, c2 = batch.scores1, batch.scores2, batch.cum1, batch.cum2
    n = batch.n_traj
    if surrogate:
        return np.einsum("nt,nti,ntj->ij", w, s1, s2) / n
    return (np.einsum("nt,nti,ntj->ij", w, s1 + c1, s2) + np.einsum("nt,nti,ntj->ij", w, s1, c2)) / n


def kl_hessian_matvec(batch: Batch, player: int, v) -> np.ndarray:
    """Product with the KL Hessian block of ``player`` (per-step Fisher, summed)."""
    fam, theta, feats = _player(batch, player)
    v = _check_dim(v, fam.param_dim)
    fv = fam.fisher_matvec(theta, feats, v)
    return np.einsum("nt,ntd->d", batch.mask.astype(np.float64), fv) / batch.n_traj


def kl_hessian_dense(batch: Batch, player: int) -> np.ndarray:
    fam = _player(batch, player)[0]
    cols = [kl_hessian_matvec(batch, player, e) for e in np.eye(fam.param_dim)]
    H = np.stack(cols, axis=1)
    return 0.5 * (H + H.T)


def _player(batch: Batch, player: int):
    if player == 1:
        return batch.fam1, batch.theta1, batch.feats1
    if player == 2:
        return batch.fam2, batch.theta2, batch.feats2
    raise DomainError("player must be 1 or 2")


def quadratic_kl(batch: Batch, d1: np.ndarray, d2: np.ndarray) -> float:
    """d1' A11 d1 + d2' A22 d2 (twice the quadratic KL model)."""
    return float(d1 @ kl_hessian_matvec(batch, 1, d1) + d2 @ kl_hessian_matvec(batch, 2, d2))


def batch_kl(batch: Batch, theta1_new, theta2_new) -> float:
    """Exact KL between old and new joint policies, averaged over visited states."""
    k1 = batch.fam1.kl(batch.theta1, theta1_new, batch.feats1)
    k2 = batch.fam2.kl(batch.theta2, theta2_new, batch.feats2)
    return float(np.einsum("nt,nt->", batch.mask.astype(np.float64), k1 + k2) / batch.n_traj)


def surrogate_value(batch: Batch, theta1_new, theta2_new) -> float:
    """Importance-weighted surrogate advantage at new parameters."""
    lp1 = batch.fam1.log_prob(theta1_new, batch.feats1, batch.actions1)
    lp2 = batch.fam2.log_prob(theta2_new, batch.feats2, batch.actions2)
    lp1_old = batch.fam1.log_prob(batch.theta1, batch.feats1, batch.actions1)
    lp2_old = batch.fam2.log_prob(batch.theta2, batch.feats2, batch.actions2)
    ratio = np.exp(np.where(batch.mask, lp1 + lp2 - lp1_old - lp2_old, 0.0))
    return float(np.einsum("nt,nt->", batch.step_weights(), ratio) / batch.n_traj)


# ------------------------------------------------------------ game terms


@dataclass
class GameTerms:
    """Gradients and mixed-derivative operators of a local bilinear game."""

    g1: np.ndarray
    g2: np.ndarray
    d12: Callable[[np.ndarray], np.ndarray]
    d21: Callable[[np.ndarray], np.ndarray]

    @property
    def dims(self) -> tuple[int, int]:
        return self.g1.shape[0], self.g2.shape[0]

    @classmethod
    def from_matrix(cls, g1, g2, D12) -> "GameTerms":
        g1 = np.atleast_1d(np.asarray(g1, dtype=np.float64))
        g2 = np.atleast_1d(np.asarray(g2, dtype=np.float64))
        D12 = np.asarray(D12, dtype=np.float64).reshape(g1.shape[0], g2.shape[0])
        return cls(g1, g2, lambda v: D12 @ v, lambda u: D12.T @ u)


def game_terms(batch: Batch, surrogate: bool = False) -> GameTerms:
    mv = surrogate_bilinear_matvec if surrogate else bilinear_matvec
    return GameTerms(
        grad_eta(batch, 1),
        grad_eta(batch, 2),
        lambda v: mv(batch, 12, v),
        lambda u: mv(batch, 21, u),
    )
