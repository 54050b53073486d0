"""Training loop, run logs and parameter files."""
from __future__ import annotations

import io
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .core import CopoError, RngStream
from .envs import GameEnv, collect_batch, make_env
from .estimators import annotate
from .optim import CgConfig, OptimizerState, adaptive_scale, copg_step, gda_step, selfplay_copg_parts, truncated_step
from .trustregion import TrustRegionConfig, trcopo_step, trgda_step

LOG_VERSION = "copo-runlog v1"
COLUMNS = (
    "epoch",
    "eta_hat",
    "grad_norm_1",
    "grad_norm_2",
    "nash_distance",
    "cg_iters",
    "lambda",
    "constraint_value",
    "wall_ms",
)
PARAMS_VERSION = "copo-params v1"


class RunFailure(CopoError):
    pass


def evaluate_nash_distance(game, theta1, theta2) -> float:
    """L-infinity distance of the current policies from the known equilibrium."""
    env = make_env(game) if isinstance(game, str) else game
    return env.nash_distance(np.asarray(theta1, float), np.asarray(theta2, float))


def default_threshold(game: str) -> float:
    return 0.02 if game == "lq" else 0.05


@dataclass
class RunResult:
    config: RunConfig
    rows: list
    theta1: np.ndarray
    theta2: np.ndarray
    status: str = "ok"  # "ok" or "failed"
    error: Optional[str] = None
    log_path: Optional[Path] = None
    params_path: Optional[Path] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def final_nash_distance(self) -> float:
        return self.rows[-1]["nash_distance"] if self.rows else float("nan")

    def epochs_to_threshold(self, threshold: Optional[float] = None) -> Optional[int]:
        thr = threshold if threshold is not None else (self.config.threshold or default_threshold(self.config.game))
        return epochs_to_threshold(self.rows, thr)


def epochs_to_threshold(rows, threshold: float) -> Optional[int]:
    for row in rows:
        d = row["nash_distance"]
        if np.isfinite(d) and d < threshold:
            return int(row["epoch"])
    return None


def _format(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))


def write_runlog(rows, path) -> None:
    buf = io.StringIO()
    buf.write(f"# {LOG_VERSION}\n")
    buf.write(",".join(COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(_format(row[c]) for c in COLUMNS) + "\n")
    Path(path).write_text(buf.getvalue())


def write_params(theta1, theta2, path) -> None:
    theta1, theta2 = np.asarray(theta1, float), np.asarray(theta2, float)
    lines = [f"# {PARAMS_VERSION}", f"# dims {theta1.size} {theta2.size}"]
    lines += [repr(float(x)) for x in np.concatenate([theta1, theta2])]
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path) -> tuple[np.ndarray, np.ndarray]:
    text = Path(path).read_text().splitlines()
    dims = next((l for l in text if l.startswith("# dims")), None)
    if dims is None:
        raise CopoError(f"{path}: missing dimension header")
    d1, d2 = (int(x) for x in dims.split()[2:4])
    values = np.array([float(l) for l in text if l.strip() and not l.startswith("#")])
    if values.size != d1 + d2:
        raise CopoError(f"{path}: header says {d1}+{d2} values, found {values.size}")
    return values[:d1], values[d1:]


def _env_for(cfg: RunConfig) -> GameEnv:
    env = make_env(cfg.game)
    if cfg.gamma is not None:
        env.gamma = cfg.gamma
    return env


def _advantage_kind(cfg: RunConfig, env: GameEnv) -> str:
    if cfg.advantage is not None:
        return cfg.advantage
    return "mc" if env.horizon == 1 else "gae"


def _step(cfg: RunConfig, batch, state: OptimizerState):
    cg = CgConfig(tol=cfg.cg_tol, max_iter=cfg.cg_max_iter, warm_start=cfg.cg_warm_start)
    opt = cfg.optimizer
    if opt == "gda":
        return gda_step(batch.grad(1), batch.grad(2), cfg.alpha)
    if opt == "lola":
        return truncated_step(batch, cfg.alpha, 1)
    if opt == "neumann_n":
        return truncated_step(batch, cfg.alpha, cfg.N)
    if opt == "copg":
        return copg_step(batch, cfg.alpha, cg, x0=state.cg_x0)
    if opt == "copg_selfplay":
        return selfplay_copg_parts(batch, cfg.alpha, cg)
    tr = TrustRegionConfig(
        delta=cfg.delta,
        lambda0="auto" if cfg.tr_lambda0 is None else cfg.tr_lambda0,
        max_doublings=cfg.tr_max_doublings,
        cg=CgConfig(tol=min(cfg.cg_tol, 1e-12), max_iter=cfg.cg_max_iter or 1000, warm_start=False),
        require_mutual_gain=cfg.require_mutual_gain,
    )
    return trcopo_step(batch, tr) if opt == "trcopo" else trgda_step(batch, tr)


def train(cfg: RunConfig, theta1=None, theta2=None, env: Optional[GameEnv] = None) -> RunResult:
    """Run the epoch loop in memory; nothing is written to disk."""
    cfg.validate()
    env = env or _env_for(cfg)
    fams = env.families()
    if theta1 is None or theta2 is None:
        theta1, theta2 = env.init_params(RngStream(cfg.seed, 0).generator())
    if cfg.optimizer == "copg_selfplay":
        theta2 = theta1
    state = OptimizerState(np.array(theta1, float), np.array(theta2, float))
    adv = _advantage_kind(cfg, env)
    has_eq = env.has_equilibrium
    threshold = cfg.threshold if cfg.threshold is not None else default_threshold(cfg.game)
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            with np.errstate(all="ignore"):
                batch = collect_batch(env, fams, (state.theta1, state.theta2), cfg.batch_size, RngStream(cfg.seed, epoch))
                if not np.all(np.isfinite(batch.rewards)):
                    raise RunFailure("non-finite rewards in rollout")
                annotate(batch, adv, cfg.gae_lambda, cfg.recenter)
                update = _step(cfg, batch, state)
                if cfg.adaptive:
                    update = adaptive_scale(state, update, cfg.adaptive_beta, cfg.adaptive_eps)
            if cfg.optimizer == "copg_selfplay":
                shared = state.theta1 + update.delta.p1 + update.delta.p2
                state.theta1, state.theta2 = shared, shared.copy()
            else:
                state.apply(update)
            if not (np.all(np.isfinite(state.theta1)) and np.all(np.isfinite(state.theta2))):
                raise RunFailure("non-finite parameters after update")
        except (CopoError, ArithmeticError, ValueError) as exc:
            return RunResult(cfg, rows, state.theta1, state.theta2, "failed", f"epoch {epoch}: {exc}")
        g1, g2 = update.info["grads"]
        rows.append(
            {
                "epoch": epoch,
                "eta_hat": float(batch.returns[:, 0].mean()),
                "grad_norm_1": float(np.linalg.norm(g1)),
                "grad_norm_2": float(np.linalg.norm(g2)),
                "nash_distance": env.nash_distance(state.theta1, state.theta2) if has_eq else float("nan"),
                "cg_iters": int(update.solver_iters),
                "lambda": update.lam if update.lam is not None else float("nan"),
                "constraint_value": update.constraint_value if update.constraint_value is not None else float("nan"),
                "wall_ms": (time.perf_counter() - t0) * 1e3 if cfg.log_timing else 0.0,
            }
        )
        if cfg.stop_at_threshold and rows[-1]["nash_distance"] < threshold:
            break
    return RunResult(cfg, rows, state.theta1, state.theta2)


def run_training(cfg: RunConfig, theta1=None, theta2=None) -> RunResult:
    """Train and write ``run.csv``, ``params.txt`` and ``config.txt`` to ``cfg.out_dir``.

    The log is written even when the run fails part-way.
    """
    result = train(cfg, theta1, theta2)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.log_path = out / "run.csv"
    result.params_path = out / "params.txt"
    write_runlog(result.rows, result.log_path)
    write_params(result.theta1, result.theta2, result.params_path)
    (out / "config.txt").write_text(cfg.to_text())
    return result
