"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config
from .core import CopoError, NumericalFailure
from .envs import SoccerGame, make_env
from .report import emit_report
from .riccati import riccati_oracle
from .tournament import tournament
from .training import evaluate_nash_distance, read_params, run_training

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="copo", description="Competitive policy optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one training configuration")
    t.add_argument("config", help="key = value config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    e = sub.add_parser("eval", help="distance of saved parameters from the known equilibrium")
    e.add_argument("--game", required=True)
    e.add_argument("--params", required=True, help="parameter file written by train")

    m = sub.add_parser("tournament", help="play two saved soccer agents against each other")
    m.add_argument("--a", required=True, help="parameter file of agent A")
    m.add_argument("--b", required=True, help="parameter file of agent B")
    m.add_argument("--a-player", type=int, choices=(1, 2), default=1, help="which trained player A uses")
    m.add_argument("--b-player", type=int, choices=(1, 2), default=1)
    m.add_argument("--games", type=int, default=2000)
    m.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("riccati", help="saddle-point gains of the scalar LQ game")
    for name, default in (("A", 0.9), ("B1", 0.8), ("B2", 1.5), ("Q", 1.0), ("R11", 1.0), ("R22", 1.0), ("gamma", 1.0)):
        r.add_argument(f"--{name}", type=float, default=default)
    r.add_argument("--tol", type=float, default=1e-12)

    s = sub.add_parser("report", help="summarize run logs")
    s.add_argument("inputs", nargs="+", help="run.csv files or directories containing them")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--svg", action="store_true", help="also write an SVG line chart")
    return p


def _train(args) -> int:
    cfg = load_config(args.config, args.set)
    result = run_training(cfg)
    last = result.rows[-1] if result.rows else {}
    print(f"log: {result.log_path}")
    print(f"params: {result.params_path}")
    if last:
        print(f"epochs: {last['epoch']}  final nash_distance: {last['nash_distance']:.6g}")
        ett = result.epochs_to_threshold()
        print(f"epochs to threshold: {ett if ett is not None else 'not reached'}")
    if not result.ok:
        print(f"run failed: {result.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _eval(args) -> int:
    t1, t2 = read_params(args.params)
    print(f"{evaluate_nash_distance(args.game, t1, t2):.10g}")
    return EXIT_OK


def _tournament(args) -> int:
    env = SoccerGame()
    fam = env.families()[0]
    a = read_params(args.a)[args.a_player - 1]
    b = read_params(args.b)[args.b_player - 1]
    stats = tournament(env, fam, a, fam, b, args.games, args.seed)
    print(
        json.dumps(
            {
                "n_games": stats.n_games,
                "win_rate_A": stats.win_rate_A,
                "win_rate_B": stats.win_rate_B,
                "draws": stats.draws,
                "mean_episode_length": stats.mean_episode_length,
                "seize_chain_histogram": stats.seize_chain_histogram,
            },
            indent=2,
        )
    )
    return EXIT_OK


def _riccati(args) -> int:
    k1, k2 = riccati_oracle(args.A, args.B1, args.B2, args.Q, args.R11, args.R22, args.gamma, args.tol)
    print(f"K1 {k1:.10g}")
    print(f"K2 {k2:.10g}")
    return EXIT_OK


def _report(args) -> int:
    res = emit_report(args.inputs, args.out, args.threshold, args.svg)
    print(f"summary: {res.summary_path}")
    if res.svg_path:
        print(f"chart: {res.svg_path}")
    for row in res.summary:
        print(f"  {row['run']}: final {row['final_nash_distance']:.4g}, epochs to threshold {row['epochs_to_threshold']}")
    return EXIT_OK


COMMANDS = {"train": _train, "eval": _eval, "tournament": _tournament, "riccati": _riccati, "report": _report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CopoError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
