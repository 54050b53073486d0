"""Run configuration: flat ``key = value`` files plus ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

from .core import DomainError

STEP_OPTIMIZERS = ("gda", "lola", "neumann_n", "copg", "copg_selfplay")
TR_OPTIMIZERS = ("trgda", "trcopo")
OPTIMIZERS = STEP_OPTIMIZERS + TR_OPTIMIZERS


class ConfigError(DomainError):
    pass


@dataclass
class RunConfig:
    game: str = "matching_pennies"
    optimizer: str = "copg"
    alpha: Optional[float] = None
    delta: Optional[float] = None
    N: int = 2
    batch_size: int = 1000
    epochs: int = 100
    gamma: Optional[float] = None  # None -> game default
    gae_lambda: float = 0.95
    advantage: Optional[str] = None  # None -> "mc" for one-step games, else "gae"
    recenter: bool = False
    seed: int = 0
    cg_tol: float = 1e-10
    cg_max_iter: Optional[int] = None
    cg_warm_start: bool = True
    tr_lambda0: Optional[float] = None  # None -> closed-form initial guess
    tr_max_doublings: int = 40
    require_mutual_gain: bool = False
    adaptive: bool = False
    adaptive_beta: float = 0.9
    adaptive_eps: float = 1e-8
    threshold: Optional[float] = None  # None -> 0.02 for LQ gains, else 0.05
    stop_at_threshold: bool = False  # end the run once nash_distance < threshold
    log_timing: bool = False
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; choose from {', '.join(OPTIMIZERS)}")
        if self.optimizer in STEP_OPTIMIZERS:
            if self.alpha is None or self.delta is not None:
                raise ConfigError(f"{self.optimizer} needs alpha (and no delta)")
            if not self.alpha > 0:
                raise ConfigError("alpha must be positive")
        else:
            if self.delta is None or self.alpha is not None:
                raise ConfigError(f"{self.optimizer} needs delta (and no alpha)")
            if not self.delta > 0:
                raise ConfigError("delta must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer == "neumann_n" and self.N < 0:
            raise ConfigError("N must be >= 0")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        return self

    def with_overrides(self, pairs) -> "RunConfig":
        cfg = dataclasses.replace(self)
        for pair in pairs:
            key, value = _split(pair)
            _assign(cfg, key, value)
        return cfg

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def _split(pair: str):
    if "=" not in pair:
        raise ConfigError(f"expected key=value, got {pair!r}")
    key, value = pair.split("=", 1)
    return key.strip(), value.strip()


def _field_type(name: str):
    for f in fields(RunConfig):
        if f.name == name:
            return f.type
    raise ConfigError(f"unknown config key {name!r}")


_TYPES = {"str": str, "int": int, "float": float, "bool": bool}


def _parse(text: str, type_name: str):
    optional = type_name.startswith("Optional[")
    base = type_name[len("Optional[") : -1] if optional else type_name
    if optional and text.lower() in ("none", "null", ""):
        return None
    kind = _TYPES[base]
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {base}") from None


def _assign(cfg: RunConfig, key: str, value: str) -> None:
    setattr(cfg, key, _parse(value, str(_field_type(key))))


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = _split(line)
            _assign(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path: Union[str, Path], overrides=()) -> RunConfig:
    cfg = parse_config(Path(path).read_text())
    return cfg.with_overrides(overrides).validate()
