"""Head-to-head soccer tournaments with possession statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, RngStream
from .envs import GameEnv, SoccerGame, make_env


@dataclass(frozen=True)
class TournamentStats:
    n_games: int
    win_rate_A: float
    win_rate_B: float
    draws: int
    seize_chain_histogram: dict  # "A1", "B1", "A2", ..., "N" -> count
    mean_episode_length: float

    @property
    def draw_rate(self) -> float:
        return self.draws / self.n_games


@dataclass
class Outcomes:
    winner: np.ndarray  # +1 player 1 scored, -1 player 2 scored, 0 no goal
    lengths: np.ndarray
    changes: np.ndarray  # possession changes during the episode


def play_games(env: GameEnv, fams, thetas, n: int, rng) -> Outcomes:
    """Play ``n`` episodes in lock-step without storing trajectories."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    fam1, fam2 = fams
    theta1, theta2 = fam1.check(thetas[0]), fam2.check(thetas[1])
    states = env.reset_batch(n, gen)
    alive = np.ones(n, dtype=bool)
    winner = np.zeros(n)
    lengths = np.zeros(n, dtype=int)
    changes = np.zeros(n, dtype=int)
    for _ in range(env.horizon):
        a1, _ = fam1.sample(theta1, env.features_batch(states, 1), gen)
        a2, _ = fam2.sample(theta2, env.features_batch(states, 2), gen)
        nxt, r, done = env.step_batch(states, a1, a2, gen)
        lengths += alive
        changes += alive & (nxt[:, 4] != states[:, 4])
        winner = np.where(alive, np.sign(r), winner)
        states = np.where(alive[:, None], nxt, states)
        alive = alive & ~done
        if not alive.any():
            break
    return Outcomes(winner, lengths, changes)


def _categories(winner_agent: np.ndarray, changes: np.ndarray) -> list[str]:
    return [f"{w}{c + 1}" if w != "N" else "N" for w, c in zip(winner_agent, changes)]


def _histogram(labels: list[str]) -> dict:
    counts: dict = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    depth = max([int(k[1:]) for k in counts if k != "N"], default=0)
    ordered = {}
    for d in range(1, depth + 1):
        for side in "AB":
            ordered[f"{side}{d}"] = counts.get(f"{side}{d}", 0)
    ordered["N"] = counts.get("N", 0)
    return ordered


def tournament(game, fam_A, theta_A, fam_B, theta_B, n_games: int, seed: int = 0) -> TournamentStats:
    """Agent A plays side 1 for the first half, side 2 for the second.

    Both halves replay the same random stream, so swapping the agent labels
    swaps the win rates exactly.
    """
    if n_games < 2 or n_games % 2:
        raise DomainError("n_games must be even and >= 2")
    env = make_env(game) if isinstance(game, str) else game
    if not isinstance(env, SoccerGame):
        raise DomainError("tournaments are defined for soccer only")
    half = n_games // 2
    first = play_games(env, (fam_A, fam_B), (theta_A, theta_B), half, RngStream(seed, 1))
    second = play_games(env, (fam_B, fam_A), (theta_B, theta_A), half, RngStream(seed, 1))
    agent = np.concatenate(
        [
            np.select([first.winner > 0, first.winner < 0], ["A", "B"], "N"),
            np.select([second.winner > 0, second.winner < 0], ["B", "A"], "N"),
        ]
    )
    changes = np.concatenate([first.changes, second.changes])
    lengths = np.concatenate([first.lengths, second.lengths])
    wins_a = int(np.sum(agent == "A"))
    wins_b = int(np.sum(agent == "B"))
    draws = n_games - wins_a - wins_b
    return TournamentStats(
        n_games=n_games,
        win_rate_A=wins_a / n_games,
        win_rate_B=wins_b / n_games,
        draws=draws,
        seize_chain_histogram=_histogram(_categories(agent, changes)),
        mean_episode_length=float(lengths.mean()),
    )
