"""Shared numeric types, RNG streams and joint-parameter packing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class CopoError(Exception):
    """Base class for library errors."""


class NumericInputError(CopoError, ValueError):
    pass


class DomainError(CopoError, ValueError):
    pass


class DimensionMismatchError(CopoError, ValueError):
    pass


class EmptyRequestError(CopoError, ValueError):
    pass


class NumericalFailure(CopoError, ArithmeticError):
    """Optimizer-level numerical failure (maps to CLI exit code 2)."""


def as_param(values, dim: Optional[int] = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 parameter vector."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatchError(f"expected dim {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise NumericInputError("parameter vector has non-finite entries")
    return arr


@dataclass(frozen=True)
class RngStream:
    """Named, reproducible source of random draws.

    Every call to :meth:`generator` returns a fresh generator positioned at the
    start of the same sequence.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def _child_id(parent_id: int, index: int) -> int:
    words = np.random.SeedSequence([int(parent_id) & (2**63 - 1), index, 0x5EED]).generate_state(2, np.uint32)
    return (int(words[0]) << 31) ^ int(words[1])


def split_rng(parent: RngStream, n: int) -> list[RngStream]:
    if n < 1:
        raise EmptyRequestError("split_rng needs n >= 1")
    return [RngStream(parent.seed, _child_id(parent.stream_id, i)) for i in range(n)]


@dataclass(frozen=True, eq=False)
class JointVec:
    """Concatenated (player 1, player 2) parameter vector."""

    values: np.ndarray
    dim1: int

    @property
    def p1(self) -> np.ndarray:
        return self.values[: self.dim1]

    @property
    def p2(self) -> np.ndarray:
        return self.values[self.dim1 :]

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, JointVec)
            and self.dim1 == other.dim1
            and np.array_equal(self.values, other.values)
        )


def pack(p1, p2) -> JointVec:
    p1 = np.asarray(p1, dtype=np.float64).reshape(-1)
    p2 = np.asarray(p2, dtype=np.float64).reshape(-1)
    return JointVec(np.concatenate([p1, p2]), p1.shape[0])


def unpack(j: JointVec, dims: Optional[Sequence[int]] = None) -> tuple[np.ndarray, np.ndarray]:
    if dims is not None:
        d1, d2 = dims
        if j.dim1 != d1 or j.dim - j.dim1 != d2:
            raise DimensionMismatchError(
                f"joint vector splits as ({j.dim1}, {j.dim - j.dim1}), expected ({d1}, {d2})"
            )
    return j.p1.copy(), j.p2.copy()


@dataclass(frozen=True)
class JointUpdate:
    delta: JointVec
    solver_iters: int = 0
    lam: Optional[float] = None
    constraint_value: Optional[float] = None
    info: dict = field(default_factory=dict, compare=False)

    @property
    def step_norm_1(self) -> float:
        return float(np.linalg.norm(self.delta.p1))

    @property
    def step_norm_2(self) -> float:
        return float(np.linalg.norm(self.delta.p2))

    @classmethod
    def from_parts(cls, d1, d2, **kw) -> "JointUpdate":
        return cls(pack(d1, d2), **kw)
