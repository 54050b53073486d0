"""Summaries and static SVG charts from run logs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import parse_config
from .core import CopoError, EmptyRequestError
from .training import COLUMNS, LOG_VERSION, default_threshold, epochs_to_threshold

SUMMARY_COLUMNS = ("run", "epochs", "final_nash_distance", "epochs_to_threshold", "threshold", "final_eta_hat")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


class ReportParseError(CopoError):
    pass


@dataclass
class RunLogData:
    name: str
    rows: list
    threshold: float


def read_runlog(path) -> list:
    """Parse a run log CSV into row dicts; errors name the offending line."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != f"# {LOG_VERSION}":
        raise ReportParseError(f"{path}: line 1: expected header comment '# {LOG_VERSION}'")
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise ReportParseError(f"{path}: line 2: missing column header") from None
    if tuple(header) != COLUMNS:
        raise ReportParseError(f"{path}: line 2: unexpected columns {header}")
    rows = []
    for lineno, rec in enumerate(reader, start=3):
        if len(rec) != len(COLUMNS):
            raise ReportParseError(f"{path}: line {lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
        try:
            row = {c: float(v) for c, v in zip(COLUMNS, rec)}
        except ValueError as exc:
            raise ReportParseError(f"{path}: line {lineno}: {exc}") from None
        row["epoch"] = int(row["epoch"])
        row["cg_iters"] = int(row["cg_iters"])
        if rows and row["epoch"] <= rows[-1]["epoch"]:
            raise ReportParseError(f"{path}: line {lineno}: epoch index not increasing")
        rows.append(row)
    return rows


def _collect(inputs) -> list[Path]:
    if isinstance(inputs, (str, Path)):
        inputs = [inputs]
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.rglob("run.csv")))
        else:
            paths.append(p)
    if not paths:
        raise EmptyRequestError("no run logs found")
    return paths


def _run_name(path: Path) -> str:
    return path.parent.name if path.name == "run.csv" else path.stem


def _threshold_for(path: Path, override: Optional[float]) -> float:
    if override is not None:
        return override
    cfg_path = path.parent / "config.txt"
    if cfg_path.exists():
        cfg = parse_config(cfg_path.read_text())
        return cfg.threshold if cfg.threshold is not None else default_threshold(cfg.game)
    return default_threshold("")


def load_runs(inputs, threshold: Optional[float] = None) -> list[RunLogData]:
    return [RunLogData(_run_name(p), read_runlog(p), _threshold_for(p, threshold)) for p in _collect(inputs)]


def summarize(runs: list[RunLogData]) -> list[dict]:
    out = []
    for run in runs:
        last = run.rows[-1] if run.rows else None
        out.append(
            {
                "run": run.name,
                "epochs": len(run.rows),
                "final_nash_distance": last["nash_distance"] if last else float("nan"),
                "epochs_to_threshold": epochs_to_threshold(run.rows, run.threshold),
                "threshold": run.threshold,
                "final_eta_hat": last["eta_hat"] if last else float("nan"),
            }
        )
    return out


def write_summary(summary: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in summary:
            w.writerow(["" if row[c] is None else row[c] for c in SUMMARY_COLUMNS])


def svg_line_chart(series: dict, title: str = "", ylabel: str = "", log_y: bool = True, width=640, height=400) -> str:
    """Render ``{label: (xs, ys)}`` as a standalone SVG document."""
    margin = dict(left=70, right=150, top=40, bottom=50)
    pw = width - margin["left"] - margin["right"]
    ph = height - margin["top"] - margin["bottom"]

    def ty(v):
        return math.log10(v) if log_y else v

    pts = [(x, ty(y)) for xs, ys in series.values() for x, y in zip(xs, ys) if math.isfinite(y) and (y > 0 or not log_y)]
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return margin["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return margin["top"] + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<rect x="{margin["left"]}" y="{margin["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        label = f"{10 ** yv:.3g}" if log_y else f"{yv:.3g}"
        out.append(f'<text x="{margin["left"] - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{label}</text>')
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{height - margin["bottom"] + 18}" text-anchor="middle">{xv:.0f}</text>')
    out.append(f'<text x="{margin["left"] + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">epoch</text>')
    out.append(
        f'<text x="16" y="{margin["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {margin["top"] + ph / 2:.1f})">{_esc(ylabel)}</text>'
    )
    for k, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = [
            f"{sx(x):.1f},{sy(ty(y)):.1f}" for x, y in zip(xs, ys) if math.isfinite(y) and (y > 0 or not log_y)
        ]
        if coords:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(coords)}"/>')
        ly = margin["top"] + 16 * (k + 1)
        lx = width - margin["right"] + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


@dataclass
class ReportResult:
    summary: list
    summary_path: Path
    svg_path: Optional[Path] = None


def emit_report(inputs, out_dir, threshold: Optional[float] = None, svg: bool = False) -> ReportResult:
    """Write ``summary.csv`` (and optionally ``nash_distance.svg``) for the given logs."""
    runs = load_runs(inputs, threshold)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(runs)
    result = ReportResult(summary, out / "summary.csv")
    write_summary(summary, result.summary_path)
    if svg:
        series = {r.name: ([row["epoch"] for row in r.rows], [row["nash_distance"] for row in r.rows]) for r in runs}
        result.svg_path = out / "nash_distance.svg"
        result.svg_path.write_text(svg_line_chart(series, "Distance to equilibrium", "nash distance"))
    return result
