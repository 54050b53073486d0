"""Benchmark zero-sum games.

Every environment is a stateless transition function over numeric state
arrays. The batched methods (``reset_batch``/``step_batch``) are the primary
implementation; the scalar ``reset``/``step`` wrap them with a batch of one.
Rewards are player 1's; player 2 receives the negation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DomainError, EmptyRequestError, RngStream
from .estimators import Batch, Trajectory
from .policies import PolicyFamily, make_family


class UnsupportedError(DomainError):
    pass


@dataclass
class GameEnv:
    name: str = "game"
    state_dim: int = 1
    horizon: int = 1
    gamma: float = 1.0
    zero_sum: bool = field(default=True, init=False)

    feature_dim = 0
    value_feature_dim = 0

    # -- batched interface ---------------------------------------------
    def reset_batch(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.zeros((n, self.state_dim))

    def step_batch(self, states, a1, a2, rng):
        raise NotImplementedError

    def features_batch(self, states: np.ndarray, player: int) -> np.ndarray:
        return np.zeros(states.shape[:-1] + (0,))

    def value_features_batch(self, states: np.ndarray) -> np.ndarray:
        return np.zeros(states.shape[:-1] + (0,))

    # -- scalar interface ----------------------------------------------
    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return self.reset_batch(1, rng)[0]

    def step(self, state, a1, a2, rng: Optional[np.random.Generator] = None):
        s, r, d = self.step_batch(
            np.asarray(state, dtype=np.float64)[None],
            np.asarray(a1)[None],
            np.asarray(a2)[None],
            rng,
        )
        return s[0], float(r[0]), bool(d[0])

    def features(self, state, player: int) -> np.ndarray:
        return self.features_batch(np.asarray(state, dtype=np.float64)[None], player)[0]

    # -- policies and equilibria ---------------------------------------
    def families(self) -> tuple[PolicyFamily, PolicyFamily]:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        f1, f2 = self.families()
        return rng.standard_normal(f1.param_dim), rng.standard_normal(f2.param_dim)

    @property
    def has_equilibrium(self) -> bool:
        return False

    def nash_distance(self, theta1, theta2) -> float:
        raise UnsupportedError(f"{self.name} has no known equilibrium")


# -------------------------------------------------------------- matrix games


@dataclass
class MatrixGame(GameEnv):
    payoff: np.ndarray = None  # player 1's payoff, rows = player 1 actions
    target: np.ndarray = None  # equilibrium mixed strategy (same for both)
    init_scale: float = 0.5  # std of the random initial logits

    def __post_init__(self):
        self.payoff = np.asarray(self.payoff, dtype=np.float64)

    @property
    def n_actions(self) -> int:
        return self.payoff.shape[0]

    def step_batch(self, states, a1, a2, rng=None):
        a1 = np.asarray(a1)
        a2 = np.asarray(a2)
        k = self.n_actions
        if a1.min() < 0 or a1.max() >= k or a2.min() < 0 or a2.max() >= k:
            raise DomainError(f"{self.name}: action index out of range")
        r = self.payoff[a1.astype(np.intp), a2.astype(np.intp)]
        return states.copy(), r, np.ones(states.shape[0], dtype=bool)

    def families(self):
        fam = make_family("categorical", self.n_actions)
        return fam, fam

    def init_params(self, rng):
        k = self.n_actions
        return self.init_scale * rng.standard_normal(k), self.init_scale * rng.standard_normal(k)

    @property
    def has_equilibrium(self) -> bool:
        return True

    def expected_reward(self, p, q) -> float:
        return float(np.asarray(p) @ self.payoff @ np.asarray(q))

    def nash_distance(self, theta1, theta2) -> float:
        f1, f2 = self.families()
        p = f1.probs(np.asarray(theta1, float), np.zeros(0))
        q = f2.probs(np.asarray(theta2, float), np.zeros(0))
        return float(max(np.max(np.abs(p - self.target)), np.max(np.abs(q - self.target))))


def matching_pennies() -> MatrixGame:
    # rows/cols: Head, Tail
    return MatrixGame(name="matching_pennies", payoff=[[1, -1], [-1, 1]], target=np.array([0.5, 0.5]))


def rock_paper_scissors() -> MatrixGame:
    # rows/cols: Rock, Paper, Scissors
    return MatrixGame(
        name="rock_paper_scissors",
        payoff=[[0, -1, 1], [1, 0, -1], [-1, 1, 0]],
        target=np.full(3, 1.0 / 3.0),
    )


# ------------------------------------------------------------ bilinear game


@dataclass
class BilinearGame(GameEnv):
    name: str = "bilinear"
    init_scale: float = 0.5  # std of the random initial means

    def step_batch(self, states, a1, a2, rng=None):
        a1 = np.asarray(a1, dtype=np.float64).reshape(states.shape[0], -1)
        a2 = np.asarray(a2, dtype=np.float64).reshape(states.shape[0], -1)
        r = np.sum(a1 * a2, axis=-1)
        return states.copy(), r, np.ones(states.shape[0], dtype=bool)

    def families(self):
        fam = make_family("gaussian_const", 1)
        return fam, fam

    def init_params(self, rng):
        mu = self.init_scale * rng.standard_normal(2)
        return np.array([mu[0], 0.0]), np.array([mu[1], 0.0])

    @property
    def has_equilibrium(self) -> bool:
        return True

    def nash_distance(self, theta1, theta2) -> float:
        return float(max(abs(theta1[0]), abs(theta2[0])))


# ------------------------------------------------------------------ LQ game


@dataclass
class LQGame(GameEnv):
    """Scalar zero-sum linear-quadratic game.

    State ``[s, k]`` (k = step index). Player 1 receives
    ``Q s^2 - R11 a1^2 + R22 a2^2`` and maximises; player 2 minimises.
    Policies are linear Gaussians; the gain is ``K = -w`` for mean ``w s + b``.
    """

    name: str = "lq"
    state_dim: int = 2
    horizon: int = 5
    gamma: float = 0.99
    A: float = 0.9
    B1: float = 0.8
    B2: float = 1.5
    Q: float = 1.0
    R11: float = 1.0
    R22: float = 1.0
    init_gains: tuple = (-0.1, 0.1)
    init_log_std: float = 0.1

    feature_dim = 1
    value_feature_dim = 2

    def reset_batch(self, n, rng):
        return np.stack([rng.standard_normal(n), np.zeros(n)], axis=1)

    def step_batch(self, states, a1, a2, rng=None):
        s, k = states[:, 0], states[:, 1]
        a1 = np.asarray(a1, dtype=np.float64).reshape(-1)
        a2 = np.asarray(a2, dtype=np.float64).reshape(-1)
        r = self.Q * s * s - self.R11 * a1 * a1 + self.R22 * a2 * a2
        nxt = np.stack([self.A * s + self.B1 * a1 + self.B2 * a2, k + 1], axis=1)
        return nxt, r, nxt[:, 1] >= self.horizon

    def features_batch(self, states, player):
        return states[..., :1].copy()

    def value_features_batch(self, states):
        s = states[..., 0]
        return np.stack([s * s, s], axis=-1)

    def families(self):
        fam = make_family("gaussian_linear", 1, 1)
        return fam, fam

    def init_params(self, rng=None):
        # [weight, bias, log_std]; mean = weight * s + bias
        k1, k2 = self.init_gains
        return (
            np.array([-k1, 0.0, self.init_log_std]),
            np.array([-k2, 0.0, self.init_log_std]),
        )

    @staticmethod
    def gains(theta1, theta2) -> np.ndarray:
        return np.array([-theta1[0], -theta2[0]])

    def equilibrium_gains(self) -> np.ndarray:
        from .riccati import riccati_oracle

        return np.array(riccati_oracle(self.A, self.B1, self.B2, self.Q, self.R11, self.R22, gamma=1.0))

    @property
    def has_equilibrium(self) -> bool:
        return True

    def nash_distance(self, theta1, theta2) -> float:
        if not (np.all(np.isfinite(theta1)) and np.all(np.isfinite(theta2))):
            return float("inf")
        if not hasattr(self, "_k_star"):
            self._k_star = self.equilibrium_gains()
        return float(np.max(np.abs(self.gains(theta1, theta2) - self._k_star)))


# --------------------------------------------------------------- soccer


UP, DOWN, LEFT, RIGHT, STAND = range(5)
_MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1], [0, 0]])
_MIRROR = np.array([UP, DOWN, RIGHT, LEFT, STAND])


@dataclass
class SoccerGame(GameEnv):
    """4x5 grid soccer with simultaneous moves.

    State ``[rowA, colA, rowB, colB, holder, steps]`` (holder 0 = A, 1 = B).
    A's goal lies left of column 0 on the two middle rows, B's goal mirrors it
    on the right. Player B observes and acts in a left-right mirrored frame,
    so one policy can play either side; ``step`` takes actions in each
    player's own frame.
    """

    name: str = "soccer"
    state_dim: int = 6
    horizon: int = 1000
    gamma: float = 0.99
    rows: int = 4
    cols: int = 5
    goal_rows: tuple = (1, 2)
    # gate features by possession so a linear policy can attack and defend differently
    possession_split: bool = True

    @property
    def feature_dim(self) -> int:
        return 24 if self.possession_split else 12

    @property
    def value_feature_dim(self) -> int:
        return self.feature_dim + 1

    def reset_batch(self, n, rng):
        cells = self.rows * self.cols
        a = rng.integers(0, cells, size=n)
        b = rng.integers(0, cells - 1, size=n)
        b = b + (b >= a)
        ball = rng.integers(0, cells, size=n)
        coin = rng.integers(0, 2, size=n)
        ra, ca = np.divmod(a, self.cols)
        rb, cb = np.divmod(b, self.cols)
        rball, cball = np.divmod(ball, self.cols)
        da = np.abs(ra - rball) + np.abs(ca - cball)
        db = np.abs(rb - rball) + np.abs(cb - cball)
        holder = np.where(da < db, 0, np.where(db < da, 1, coin))
        return np.stack([ra, ca, rb, cb, holder, np.zeros(n)], axis=1).astype(np.float64)

    def step_batch(self, states, a1, a2, rng=None):
        a1 = np.asarray(a1).astype(np.intp).reshape(-1)
        a2 = np.asarray(a2).astype(np.intp).reshape(-1)
        if a1.min() < 0 or a1.max() > 4 or a2.min() < 0 or a2.max() > 4:
            raise DomainError("soccer: action index out of range")
        st = states.astype(np.intp)
        pa, pb = st[:, 0:2], st[:, 2:4]
        holder, steps = st[:, 4], st[:, 5] + 1
        na = pa + _MOVES[a1]
        nb = pb + _MOVES[_MIRROR[a2]]
        lo, hi = self.goal_rows
        in_goal_rows_a = (pa[:, 0] >= lo) & (pa[:, 0] <= hi)
        in_goal_rows_b = (pb[:, 0] >= lo) & (pb[:, 0] <= hi)
        a_scores = (holder == 0) & (na[:, 1] == self.cols) & in_goal_rows_a
        b_scores = (holder == 1) & (nb[:, 1] == -1) & in_goal_rows_b
        na = np.where(self._inside(na)[:, None], na, pa)
        nb = np.where(self._inside(nb)[:, None], nb, pb)
        clash = np.all(na == nb, axis=1)
        holder = np.where(clash, 1 - holder, holder)
        na = np.where(clash[:, None], pa, na)
        nb = np.where(clash[:, None], pb, nb)
        reward = a_scores.astype(np.float64) - b_scores.astype(np.float64)
        done = a_scores | b_scores | (steps >= self.horizon)
        out = np.concatenate([na, nb, holder[:, None], steps[:, None]], axis=1).astype(np.float64)
        return out, reward, done

    def _inside(self, p):
        return (p[:, 0] >= 0) & (p[:, 0] < self.rows) & (p[:, 1] >= 0) & (p[:, 1] < self.cols)

    def _perspective(self, me_r, me_c, opp_r, opp_c, ball_r, ball_c, sign):
        goal_r = 0.5 * (self.goal_rows[0] + self.goal_rows[1])
        # own target goal is one column beyond the far edge in this frame
        goal_c = self.cols if sign > 0 else -1
        return [
            sign * (goal_c - me_c), goal_r - me_r,
            sign * (ball_c - me_c), ball_r - me_r,
            sign * (opp_c - me_c), opp_r - me_r,
        ]

    def features_batch(self, states, player):
        ra, ca, rb, cb, holder = (states[..., i] for i in range(5))
        ball_r = np.where(holder == 0, ra, rb)
        ball_c = np.where(holder == 0, ca, cb)
        vec_a = self._perspective(ra, ca, rb, cb, ball_r, ball_c, +1)
        vec_b = self._perspective(rb, cb, ra, ca, ball_r, ball_c, -1)
        if player == 1:
            own, other = vec_a, vec_b
        elif player == 2:
            own, other = vec_b, vec_a
        else:
            raise DomainError("player must be 1 or 2")
        # the opponent's vector is in its own mirrored frame; flip x offsets back
        other = [-x if i % 2 == 0 else x for i, x in enumerate(other)]
        x = np.stack(own + other, axis=-1) / self.cols
        if not self.possession_split:
            return x
        mine = (holder == (0 if player == 1 else 1))[..., None]
        return np.concatenate([np.where(mine, x, 0.0), np.where(mine, 0.0, x)], axis=-1)

    def value_features_batch(self, states):
        holder_a = (states[..., 4] == 0).astype(np.float64)
        return np.concatenate([self.features_batch(states, 1), holder_a[..., None]], axis=-1)

    def families(self):
        fam = make_family("linear_softmax", 5, self.feature_dim)
        return fam, fam

    def init_params(self, rng):
        f1, f2 = self.families()
        return 0.01 * rng.standard_normal(f1.param_dim), 0.01 * rng.standard_normal(f2.param_dim)


GAMES = {
    "matching_pennies": matching_pennies,
    "mp": matching_pennies,
    "rock_paper_scissors": rock_paper_scissors,
    "rps": rock_paper_scissors,
    "bilinear": BilinearGame,
    "lq": LQGame,
    "soccer": SoccerGame,
}


def make_env(name: str) -> GameEnv:
    try:
        return GAMES[name]()
    except KeyError:
        raise DomainError(f"unknown game {name!r}; choose from {sorted(GAMES)}") from None


# --------------------------------------------------------------- rollouts


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def collect_batch(
    env: GameEnv,
    fams: tuple[PolicyFamily, PolicyFamily],
    thetas: tuple[np.ndarray, np.ndarray],
    n_traj: int,
    rng,
) -> Batch:
    """Roll out ``n_traj`` independent episodes, vectorised across episodes.

    ``rng`` is an :class:`RngStream` or a numpy ``Generator``; the batch is a
    deterministic function of it.
    """
    if n_traj < 1:
        raise EmptyRequestError("n_traj must be >= 1")
    gen = _generator(rng)
    fam1, fam2 = fams
    theta1 = fam1.check(thetas[0])
    theta2 = fam2.check(thetas[1])
    states = env.reset_batch(n_traj, gen)
    alive = np.ones(n_traj, dtype=bool)
    S, F1, F2, A1, A2, R, M = [states], [], [], [], [], [], []
    for _ in range(env.horizon):
        f1 = env.features_batch(states, 1)
        f2 = env.features_batch(states, 2)
        a1, _ = fam1.sample(theta1, f1, gen)
        a2, _ = fam2.sample(theta2, f2, gen)
        nxt, r, done = env.step_batch(states, a1, a2, gen)
        F1.append(f1)
        F2.append(f2)
        A1.append(a1)
        A2.append(a2)
        R.append(np.where(alive, r, 0.0))
        M.append(alive.copy())
        states = np.where(alive[:, None], nxt, states)
        S.append(states)
        alive = alive & ~done
        if not alive.any():
            break
    states_all = np.stack(S, axis=1)
    return Batch(
        fam1=fam1,
        fam2=fam2,
        theta1=theta1,
        theta2=theta2,
        states=states_all,
        feats1=np.stack(F1, axis=1),
        feats2=np.stack(F2, axis=1),
        actions1=np.stack(A1, axis=1),
        actions2=np.stack(A2, axis=1),
        rewards=np.stack(R, axis=1),
        mask=np.stack(M, axis=1),
        value_feats=env.value_features_batch(states_all[:, :-1]),
        gamma=env.gamma,
    )


def rollout(env: GameEnv, fam1, theta1, fam2, theta2, rng) -> Trajectory:
    return collect_batch(env, (fam1, fam2), (theta1, theta2), 1, rng).trajectory(0)
