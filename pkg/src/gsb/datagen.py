"""Synthetic instances: row-normalized Gaussian designs, +/-1 group-sparse signals, Gaussian noise.

Random streams
--------------
Every draw comes from :func:`stream`, which maps ``(seed, tag, *indices)`` to an
independent ``numpy.random.Generator`` (PCG64 seeded through
``SeedSequence(seed, spawn_key=(crc32(tag), *indices))``). Design, signal,
noise and CV folds therefore use separate streams, and a replication's draws
do not depend on which other replications ran. Stream version:
``STREAM_VERSION``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .core import GroundTruth, GroupStructure

STREAM_VERSION = "pcg64-seedseq-crc32/1"

PLACEMENTS = ("full-groups", "partial-groups", "single-element-groups", "large-groups", "mixed-half")


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def gen_design(n: int, p: int, seed: int, normalize_rows: bool = True) -> np.ndarray:
    """``n x p`` iid N(0, 1) matrix, each row rescaled to unit norm by default."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    X = stream(seed, "design").standard_normal((n, p))
    if normalize_rows:
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X


def uneven_random_structure(p: int, m: int, seed: int) -> GroupStructure:
    """Contiguous groups whose sizes are a uniform random composition of ``p`` into ``m`` parts.

    ``m - 1`` distinct cut points are drawn uniformly from ``1..p-1``.
    """
    if not 1 <= m <= p:
        raise ValueError(f"need 1 <= m <= p, got m={m}, p={p}")
    cuts = np.sort(stream(seed, "group-sizes").choice(np.arange(1, p), size=m - 1, replace=False))
    sizes = np.diff(np.concatenate([[0], cuts, [p]]))
    return GroupStructure.from_sizes(sizes.tolist())


def halfmixed_structure(p: int, n_single: int, n_large: int) -> GroupStructure:
    """``n_single`` singleton groups followed by ``n_large`` groups splitting the rest evenly."""
    rest = p - n_single
    if n_large < 1 or rest < 2 * n_large:
        raise ValueError("not enough coordinates for the large groups")
    base, extra = divmod(rest, n_large)
    large = [base + 1] * extra + [base] * (n_large - extra)
    return GroupStructure.from_sizes([1] * n_single + large)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.01
    kind: str = "iid-gaussian"

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and nonnegative")
        if self.kind != "iid-gaussian":
            raise ValueError(f"unsupported noise kind {self.kind!r}")


@dataclass(frozen=True)
class SignalSpec:
    """How to draw a strongly group-sparse +/-1 signal.

    ``structure`` is the partition assumed by the estimator. ``true_support_size``
    is only used by ``partial-groups`` placement; other placements fill the
    chosen groups completely.
    """

    structure: GroupStructure
    g: int
    placement: str = "full-groups"
    true_support_size: int | None = None
    value_pattern: str = "plus-minus-one"
    seed: int = 0

    @property
    def p(self) -> int:
        return self.structure.p

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.value_pattern != "plus-minus-one":
            raise ValueError(f"unsupported value pattern {self.value_pattern!r}")
        if self.g < 1:
            raise ValueError("g must be at least 1 (a zero signal has undefined recovery error)")
        if self.g > self.structure.m:
            raise ValueError(f"g={self.g} exceeds the number of groups m={self.structure.m}")


def _pick(rng, pool, count, what):
    if count > pool.size:
        raise ValueError(f"placement needs {count} {what} groups, only {pool.size} exist")
    return rng.choice(pool, size=count, replace=False)


def gen_signal(spec: SignalSpec) -> GroundTruth:
    st = spec.structure
    rng = stream(spec.seed, "signal")
    sizes = st.sizes
    every = np.arange(st.m)
    single = np.flatnonzero(sizes == 1)
    large = np.flatnonzero(sizes > 1)

    if spec.placement in ("full-groups", "partial-groups"):
        active = _pick(rng, every, spec.g, "")
    elif spec.placement == "single-element-groups":
        active = _pick(rng, single, spec.g, "single-element")
    elif spec.placement == "large-groups":
        active = _pick(rng, large, spec.g, "large")
    else:
        half = spec.g // 2
        active = np.concatenate([
            _pick(rng, single, half, "single-element"),
            _pick(rng, large, spec.g - half, "large"),
        ])
    active = np.sort(active)

    beta = np.zeros(st.p)
    if spec.placement == "partial-groups":
        s0 = spec.true_support_size
        if s0 is None:
            raise ValueError("partial-groups placement needs true_support_size")
        per, extra = divmod(s0, spec.g)
        counts = np.full(spec.g, per)
        counts[rng.choice(spec.g, size=extra, replace=False)] += 1
        if (counts > sizes[active]).any():
            raise ValueError("true_support_size does not fit in the chosen groups")
        for j, c in zip(active, counts):
            idx = rng.choice(st.index_arrays[j], size=c, replace=False)
            beta[idx] = rng.choice([-1.0, 1.0], size=c)
    else:
        idx = st.union(active)
        beta[idx] = rng.choice([-1.0, 1.0], size=idx.size)
    return GroundTruth.from_beta(beta, st, active)


def gen_observation(X, truth: GroundTruth, noise: NoiseSpec, seed: int) -> np.ndarray:
    """``y = X beta_bar + eps`` with ``eps`` iid N(0, sigma^2)."""
    X = np.asarray(X, dtype=float)
    y = X @ truth.beta_bar
    if noise.sigma > 0:
        y = y + noise.sigma * stream(seed, "noise").standard_normal(X.shape[0])
    return y
