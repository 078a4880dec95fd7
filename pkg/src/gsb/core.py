"""Shared domain types: group partitions, regression problems, signals.

Indices are 0-based everywhere inside the package. The JSON form of a
:class:`GroupStructure` uses 1-based indices and is converted on load/dump.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GroupStructure",
    "Problem",
    "GroundTruth",
    "SolveResult",
    "recovery_error",
    "group_norms",
    "validate_structure",
]


def _readonly(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def validate_structure(p: int, groups: Iterable[Iterable[int]]) -> str | None:
    """Check that ``groups`` partition ``range(p)``.

    Returns ``None`` when the partition is valid, otherwise a description of
    the first violation found. Indices in messages are 1-based.
    """
    if p <= 0:
        return f"ambient dimension must be positive, got p={p}"
    owner = np.full(p, -1, dtype=np.int64)
    n_groups = 0
    for j, grp in enumerate(groups):
        n_groups += 1
        grp = list(grp)
        if not grp:
            return f"group {j + 1} is empty"
        for i in grp:
            if not 0 <= i < p:
                return f"index {i + 1} out of range 1..{p}"
            if owner[i] >= 0:
                return f"index {i + 1} in two groups"
            owner[i] = j
    if n_groups == 0:
        return "no groups given"
    missing = np.flatnonzero(owner < 0)
    if missing.size:
        return f"index {missing[0] + 1} uncovered"
    return None


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """A partition of ``{0, ..., p-1}`` into ``m`` disjoint nonempty groups."""

    p: int
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        problem = validate_structure(self.p, groups)
        if problem is not None:
            raise ValueError(f"invalid group structure: {problem}")

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> GroupStructure:
        """Contiguous groups with the given sizes, in order."""
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        groups = [tuple(range(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]
        return cls(int(bounds[-1]), tuple(groups))

    @classmethod
    def even(cls, p: int, k0: int) -> GroupStructure:
        if k0 <= 0 or p % k0:
            raise ValueError(f"p={p} is not a multiple of group size {k0}")
        return cls.from_sizes([k0] * (p // k0))

    @classmethod
    def singletons(cls, p: int) -> GroupStructure:
        return cls.from_sizes([1] * p)

    @property
    def m(self) -> int:
        return len(self.groups)

    @cached_property
    def sizes(self) -> np.ndarray:
        return _readonly([len(g) for g in self.groups], dtype=np.int64)

    @property
    def k0(self) -> int:
        return int(self.sizes.max())

    @cached_property
    def group_of(self) -> np.ndarray:
        """Group index of every coordinate."""
        owner = np.empty(self.p, dtype=np.int64)
        for j, g in enumerate(self.groups):
            owner[list(g)] = j
        owner.setflags(write=False)
        return owner

    @cached_property
    def index_arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(np.asarray(g, dtype=np.int64) for g in self.groups)

    def union(self, groups: Iterable[int]) -> np.ndarray:
        """Sorted coordinate indices of ``G_S`` for a set ``S`` of groups."""
        groups = list(groups)
        if not groups:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([self.index_arrays[j] for j in groups]))

    def covered_size(self, groups: Iterable[int]) -> int:
        return int(sum(self.sizes[j] for j in groups))

    def expand(self, per_group) -> np.ndarray:
        """Broadcast a length-``m`` array to a length-``p`` array."""
        return np.asarray(per_group)[self.group_of]

    def to_dict(self) -> dict:
        return {"p": self.p, "groups": [[i + 1 for i in g] for g in self.groups]}

    @classmethod
    def from_dict(cls, d: dict) -> GroupStructure:
        try:
            p = int(d["p"])
            groups = [[int(i) - 1 for i in g] for g in d["groups"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed group structure: {exc!r}") from exc
        return cls(p, tuple(tuple(g) for g in groups))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> GroupStructure:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def __eq__(self, other):
        if not isinstance(other, GroupStructure):
            return NotImplemented
        return self.p == other.p and self.groups == other.groups

    def __hash__(self):
        return hash((self.p, self.groups))

    def __repr__(self):
        return f"GroupStructure(p={self.p}, m={self.m}, k0={self.k0})"


@dataclass(frozen=True, eq=False)
class Problem:
    """Design matrix ``X`` (n x p), observations ``y`` and the group structure."""

    X: np.ndarray
    y: np.ndarray
    structure: GroupStructure

    def __post_init__(self):
        X = _readonly(self.X)
        y = _readonly(self.y)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("X and y must be finite")
        if self.structure.p != X.shape[1]:
            raise ValueError(
                f"structure has p={self.structure.p} but X has {X.shape[1]} columns"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> Problem:
        return Problem(self.X[rows], self.y[rows], self.structure)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """A realized ``(g, k)`` strongly group-sparse coefficient vector."""

    beta_bar: np.ndarray
    active_groups: tuple[int, ...]
    g: int
    k: int

    def __post_init__(self):
        object.__setattr__(self, "beta_bar", _readonly(self.beta_bar))
        object.__setattr__(self, "active_groups", tuple(sorted(int(j) for j in self.active_groups)))

    @classmethod
    def from_beta(cls, beta, structure: GroupStructure, active_groups=None) -> GroundTruth:
        """Build from a coefficient vector; the cover defaults to the groups it touches."""
        beta = np.asarray(beta, dtype=float)
        if active_groups is None:
            active_groups = np.flatnonzero(group_norms(beta, structure) > 0)
        active_groups = tuple(sorted(set(int(j) for j in active_groups)))
        truth = cls(beta, active_groups, len(active_groups), structure.covered_size(active_groups))
        problem = truth.violation(structure)
        if problem:
            raise ValueError(problem)
        return truth

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.beta_bar))

    def violation(self, structure: GroupStructure) -> str | None:
        """Return a description of the first broken invariant, or ``None``."""
        if self.beta_bar.shape != (structure.p,):
            return f"beta_bar has length {self.beta_bar.size}, structure has p={structure.p}"
        if any(not 0 <= j < structure.m for j in self.active_groups):
            return "active group index out of range"
        if self.g != len(self.active_groups):
            return f"g={self.g} but {len(self.active_groups)} active groups"
        if self.k != structure.covered_size(self.active_groups):
            return f"k={self.k} does not match |G_S|"
        cover = np.zeros(structure.p, dtype=bool)
        cover[structure.union(self.active_groups)] = True
        outside = np.flatnonzero((self.beta_bar != 0) & ~cover)
        if outside.size:
            return f"coefficient {outside[0] + 1} is nonzero outside the active groups"
        return None


@dataclass
class SolveResult:
    beta_hat: np.ndarray
    objective_trace: list[float] = field(repr=False)
    iterations: int
    converged: bool
    kkt_residual: float

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "kkt_residual": self.kkt_residual,
        }


def recovery_error(beta_est, beta_bar) -> float:
    """Relative 2-norm error ``||beta_est - beta_bar|| / ||beta_bar||``."""
    beta_est = np.asarray(beta_est, dtype=float)
    beta_bar = np.asarray(beta_bar, dtype=float)
    if beta_est.shape != beta_bar.shape:
        raise ValueError(f"shape mismatch: {beta_est.shape} vs {beta_bar.shape}")
    denom = np.linalg.norm(beta_bar)
    if denom == 0:
        raise ValueError("recovery error is undefined for a zero ground truth")
    return float(np.linalg.norm(beta_est - beta_bar) / denom)


def group_norms(beta, structure: GroupStructure) -> np.ndarray:
    """Euclidean norm of ``beta`` restricted to each group."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (structure.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({structure.p},)")
    sq = np.bincount(structure.group_of, weights=beta * beta, minlength=structure.m)
    return np.sqrt(sq)
