"""Group-restricted spectral quantities and the checks built on them.

Everything here is exact: extreme eigenvalues over unions of whole groups are
found by enumerating group subsets. Because the smallest eigenvalue of a
principal submatrix can only drop (and the largest only grow) when the
index set grows, it is enough to evaluate the subsets that are maximal under
the size constraint. The number of admissible subsets is still counted first
and the call is refused above ``cap``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import GroundTruth, GroupStructure, Problem, group_norms
from .datagen import stream

__all__ = [
    "EnumerationCapError",
    "RankDeficientGroupError",
    "SpectralSummary",
    "TheoremConditions",
    "rho_bounds_on_set",
    "group_rho",
    "spectral_summary",
    "g_ell",
    "lambda_minus_sq",
    "noise_projection_norm",
    "verify_noise_bound_monte_carlo",
    "group_rip_certify",
    "group_rip_sample_bound",
    "theorem1_check",
    "corollary_cs_check",
    "corollary_even_check",
    "lemma_a2_gap",
    "cone_condition_check",
]

DEFAULT_CAP = 10**6


class EnumerationCapError(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(
            f"{count} admissible group subsets exceed the enumeration cap of {cap}; "
            "use a smaller instance"
        )
        self.count = count
        self.cap = cap


class RankDeficientGroupError(ValueError):
    def __init__(self, group: int):
        super().__init__(f"group {group + 1} has a rank-deficient design block")
        self.group = group


def _gram(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X.T @ X / X.shape[0]


def _extremes(gram, idx):
    w = np.linalg.eigvalsh(gram[np.ix_(idx, idx)])
    return max(float(w[0]), 0.0), float(w[-1])


def rho_bounds_on_set(X, F) -> tuple[float, float]:
    """Smallest and largest eigenvalue of ``X_F^T X_F / n``."""
    X = np.asarray(X, dtype=float)
    F = np.asarray(sorted(set(int(i) for i in F)), dtype=np.int64)
    if F.size == 0:
        raise ValueError("index set is empty")
    if F[0] < 0 or F[-1] >= X.shape[1]:
        raise ValueError("index set out of range")
    Xf = X[:, F]
    return _extremes(Xf.T @ Xf / X.shape[0], np.arange(F.size))


def _count_subsets(sizes, max_size, max_groups=None) -> int:
    """Number of nonempty group subsets with total size <= max_size (and at most max_groups groups)."""
    gmax = len(sizes) if max_groups is None else max_groups
    # table[c][t]: subsets with c groups covering t coordinates
    table = [[0] * (max_size + 1) for _ in range(gmax + 1)]
    table[0][0] = 1
    for sz in sizes:
        for c in range(gmax, 0, -1):
            prev, cur = table[c - 1], table[c]
            for t in range(max_size, sz - 1, -1):
                if prev[t - sz]:
                    cur[t] += prev[t - sz]
    return sum(sum(row) for row in table[1:])


def _maximal_subsets(sizes, max_size, max_groups=None) -> Iterator[list[int]]:
    """Group subsets that satisfy the limits and cannot be extended by another group."""
    m = len(sizes)
    gmax = m if max_groups is None else max_groups
    chosen: list[int] = []

    def rec(i, used, count, min_skipped):
        if i == m:
            if not chosen:
                return
            if count < gmax and min_skipped <= max_size - used:
                return
            yield list(chosen)
            return
        sz = sizes[i]
        if used + sz <= max_size and count < gmax:
            chosen.append(i)
            yield from rec(i + 1, used + sz, count + 1, min_skipped)
            chosen.pop()
        yield from rec(i + 1, used, count, min(min_skipped, sz))

    yield from rec(0, 0, 0, math.inf)


def group_rho(X, structure: GroupStructure, s: int, cap: int = DEFAULT_CAP) -> tuple[float, float]:
    """``(rho_-(s), rho_+(s))`` over all unions of whole groups with at most ``s`` coordinates."""
    if not 1 <= s <= structure.p:
        raise ValueError(f"s={s} outside 1..{structure.p}")
    sizes = [int(v) for v in structure.sizes]
    if min(sizes) > s:
        raise ValueError(f"no group fits in s={s}")
    count = _count_subsets(sizes, s)
    if count > cap:
        raise EnumerationCapError(count, cap)
    gram = _gram(X)
    lo, hi = math.inf, 0.0
    for S in _maximal_subsets(sizes, s):
        a, b = _extremes(gram, structure.union(S))
        lo, hi = min(lo, a), max(hi, b)
    return lo, hi


@dataclass
class SpectralSummary:
    rho_minus_by_s: dict[int, float]
    rho_plus_by_s: dict[int, float]
    enumerated_subset_count: int

    def to_dict(self) -> dict:
        return {
            "rho_minus_by_s": {str(s): v for s, v in self.rho_minus_by_s.items()},
            "rho_plus_by_s": {str(s): v for s, v in self.rho_plus_by_s.items()},
            "enumerated_subset_count": self.enumerated_subset_count,
        }


def spectral_summary(X, structure: GroupStructure, s_values, cap: int = DEFAULT_CAP) -> SpectralSummary:
    lo, hi, total = {}, {}, 0
    sizes = [int(v) for v in structure.sizes]
    for s in sorted(set(int(v) for v in s_values)):
        total += _count_subsets(sizes, s)
        lo[s], hi[s] = group_rho(X, structure, s, cap)
    return SpectralSummary(lo, hi, total)


def g_ell(structure: GroupStructure, ell: int) -> int:
    """Fewest groups whose sizes add up to at least ``ell``."""
    if ell <= 0:
        return 0
    if ell > structure.p:
        raise ValueError(f"ell={ell} exceeds p={structure.p}")
    covered = np.cumsum(np.sort(structure.sizes)[::-1])
    return int(np.searchsorted(covered, ell) + 1)


def lambda_minus_sq(structure: GroupStructure, lambda_weights, ell: int, cap: int = 10**8) -> float:
    """``min sum_{j in S'} lambda_j^2`` over group sets covering at least ``ell`` coordinates.

    Knapsack-style dynamic program over (group, covered size capped at ell).
    """
    lam = np.asarray(lambda_weights, dtype=float)
    if lam.shape != (structure.m,):
        raise ValueError("need one weight per group")
    if ell <= 0:
        return 0.0
    if ell > structure.p:
        raise ValueError(f"ell={ell} exceeds p={structure.p}")
    if structure.m * ell > cap:
        raise EnumerationCapError(structure.m * ell, cap)
    best = np.full(ell + 1, np.inf)
    best[0] = 0.0
    reach = np.arange(ell + 1)
    for size, w in zip(structure.sizes, lam * lam):
        nxt = best.copy()
        np.minimum.at(nxt, np.minimum(reach + size, ell), best + w)
        best = nxt
    return float(best[ell])


def _whitener(X, structure, j):
    """``W`` with ``||W^T v|| = ||(X_G^T X_G)^{-1/2} X_G^T v||`` for group ``j``."""
    Xg = np.asarray(X, dtype=float)[:, structure.index_arrays[j]]
    w, V = np.linalg.eigh(Xg.T @ Xg)
    if w[-1] <= 0 or w[0] < 1e-12 * w[-1]:
        raise RankDeficientGroupError(j)
    return Xg @ (V / np.sqrt(w))


def noise_projection_norm(X, structure: GroupStructure, j: int, eps) -> float:
    """``||(X_G^T X_G)^{-1/2} X_G^T eps||`` for group ``j``; ``eps`` should already be centred."""
    return float(np.linalg.norm(_whitener(X, structure, j).T @ np.asarray(eps, dtype=float)))


@dataclass
class NoiseCheckReport:
    sigma: float
    trials: int
    etas: list[float]
    group_sizes: list[int]
    # exceedance[size][eta] is the fraction of trials above the bound
    exceedance: dict[int, dict[float, float]]
    thresholds: dict[int, dict[float, float]]

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "trials": self.trials,
            "etas": self.etas,
            "group_sizes": self.group_sizes,
            "exceedance": {str(k): {repr(e): r for e, r in v.items()} for k, v in self.exceedance.items()},
            "thresholds": {str(k): {repr(e): r for e, r in v.items()} for k, v in self.thresholds.items()},
        }


def verify_noise_bound_monte_carlo(
    n: int, group_sizes, sigma: float, eta_grid, trials: int, seed: int, chunk: int = 20_000
) -> NoiseCheckReport:
    """Empirical rate at which the noise projection exceeds ``sigma sqrt(k_j) + sqrt(2) sigma sqrt(-ln eta)``.

    One Gaussian design with a group of each requested size is drawn; the
    noise is iid N(0, sigma^2) and redrawn in every trial.
    """
    sizes = [int(v) for v in group_sizes]
    etas = [float(e) for e in eta_grid]
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if any(not 0 < e <= 1 for e in etas):
        raise ValueError("eta values must lie in (0, 1]")
    if n < max(sizes):
        raise ValueError("n must be at least the largest group size")
    structure = GroupStructure.from_sizes(sizes)
    X = stream(seed, "noisecheck-design").standard_normal((n, structure.p))
    W = [_whitener(X, structure, j) for j in range(structure.m)]
    thr = {
        k: {e: sigma * math.sqrt(k) + math.sqrt(2.0) * sigma * math.sqrt(-math.log(e)) for e in etas}
        for k in sizes
    }
    hits = {j: np.zeros(len(etas), dtype=np.int64) for j in range(structure.m)}
    rng = stream(seed, "noisecheck-noise")
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        eps = sigma * rng.standard_normal((b, n))
        for j, Wj in enumerate(W):
            stat = np.linalg.norm(eps @ Wj, axis=1)
            limits = np.array([thr[sizes[j]][e] for e in etas])
            hits[j] += (stat[:, None] > limits[None, :]).sum(axis=0)
        done += b
    exceed = {sizes[j]: {e: float(h[i]) / trials for i, e in enumerate(etas)} for j, h in hits.items()}
    return NoiseCheckReport(sigma, trials, etas, sizes, exceed, thr)


@dataclass
class RipCertificate:
    holds: bool
    delta: float
    sigma_min: float
    sigma_max: float
    worst_subset: list[int] | None
    worst_violation: float
    subsets_checked: int

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if self.worst_subset is not None:
            d["worst_subset"] = [j + 1 for j in self.worst_subset]
        return d


def group_rip_certify(X, structure: GroupStructure, g: int, k: int, delta: float, cap: int = DEFAULT_CAP) -> RipCertificate:
    """Exact check of ``(1-delta) <= sigma(X_{G_S}) / sqrt(n) <= (1+delta)`` over all ``|S| <= g, |G_S| <= k``."""
    if not 0 < delta:
        raise ValueError("delta must be positive")
    sizes = [int(v) for v in structure.sizes]
    count = _count_subsets(sizes, k, g)
    if count > cap:
        raise EnumerationCapError(count, cap)
    gram = _gram(X)
    smin, smax = math.inf, 0.0
    worst, worst_amount, checked = None, -math.inf, 0
    for S in _maximal_subsets(sizes, k, g):
        checked += 1
        a, b = _extremes(gram, structure.union(S))
        lo, hi = math.sqrt(a), math.sqrt(b)
        smin, smax = min(smin, lo), max(smax, hi)
        amount = max((1 - delta) - lo, hi - (1 + delta))
        if amount > worst_amount:
            worst, worst_amount = S, amount
    holds = worst_amount <= 0
    return RipCertificate(holds, delta, smin, smax, worst, worst_amount, checked)


def group_rip_sample_bound_value(g: int, k: int, m: int, delta: float, t: float) -> float:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not t > 0:
        raise ValueError("t must be positive")
    if not 1 <= g <= m or g > k:
        raise ValueError("need 1 <= g <= m and g <= k")
    inner = math.log(3) + t + k * math.log(1 + 8 / delta) + g * math.log(math.e * m / g)
    return 8.0 / delta**2 * inner


def group_rip_sample_bound(g: int, k: int, m: int, delta: float, t: float) -> int:
    """Smallest sample size for which the group-RIP holds with probability at least ``1 - exp(-t)``."""
    return math.ceil(group_rip_sample_bound_value(g, k, m, delta, t))


@dataclass
class TheoremConditions:
    """Inputs, intermediate quantities and verdict of the recovery-bound check."""

    A: float
    B: float
    s: int
    ell: int
    g_ell: int | None
    lambda_minus_sq: float | None
    c_required: float
    c_observed: float
    c_used: float
    conditions_hold: bool
    bound_value: float
    rho_minus_s: float
    rho_plus_s: float
    rho_minus_2s: float
    max_rho_plus_group: float
    A_min: float
    B_min: float
    clamped: bool = False
    reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _noise_constants(sigma, a, b):
    if a is None or b is None:
        if sigma is None:
            raise ValueError("pass sigma or both noise constants a and b")
        a = sigma if a is None else a
        b = math.sqrt(2.0) * sigma if b is None else b
    return float(a), float(b)


def _clamped_rho(X, structure, s, cap):
    eff = min(s, structure.p)
    return group_rho(X, structure, eff, cap), eff != s


def theorem1_check(
    problem: Problem,
    truth: GroundTruth,
    A: float,
    B: float,
    s: int,
    *,
    sigma: float | None = None,
    a: float | None = None,
    b: float | None = None,
    delta_a: float = 0.0,
    delta_b: float = 0.0,
    eta: float = 0.05,
    c: float | None = None,
    cap: int = DEFAULT_CAP,
) -> TheoremConditions:
    """Evaluate every hypothesis of the group Lasso recovery bound and the bound itself.

    The noise constants ``a, b`` default to ``sigma, sqrt(2) sigma``. The bound
    is stated for an eigenvalue-ratio constant ``c`` that must dominate the
    observed ratio ``(rho_+(s) - rho_-(2s)) / rho_-(s)`` and satisfy
    ``c <= c_required``. When ``c`` is not given the largest admissible value,
    ``c_required``, is used since it yields the smallest valid bound.
    """
    X, st, n = problem.X, problem.structure, problem.n
    reasons = []
    a, b = _noise_constants(sigma, a, b)
    k, g, k0, m = truth.k, truth.g, st.k0, st.m

    rho_groups = max(rho_bounds_on_set(X, G)[1] for G in st.index_arrays)
    A_min = 4 * math.sqrt(rho_groups) * (a + delta_a * math.sqrt(n))
    B_min = 4 * math.sqrt(rho_groups) * (b * math.sqrt(math.log(m / eta)) + delta_b * math.sqrt(n))
    if A < A_min:
        reasons.append(f"A={A:g} below required {A_min:g}")
    if B < B_min:
        reasons.append(f"B={B:g} below required {B_min:g}")
    bad = truth.violation(st)
    if bad:
        reasons.append(f"target is not strongly group-sparse: {bad}")
    if s < k + k0:
        reasons.append(f"s={s} is smaller than k + k0 = {k + k0}")

    (rm_s, rp_s), clamp1 = _clamped_rho(X, st, s, cap)
    (rm_2s, _), clamp2 = _clamped_rho(X, st, 2 * s, cap)
    clamped = clamp1 or clamp2
    if clamped:
        reasons.append(f"2s={2 * s} exceeds p={st.p}; enumeration clamped to p")

    ell = s - (k - k0) + 1
    lam = (A * np.sqrt(st.sizes) + B) / math.sqrt(n)
    if 1 <= ell <= st.p:
        gl = g_ell(st, ell)
        lms = lambda_minus_sq(st, lam, ell)
    else:
        gl, lms = None, None
        reasons.append(f"ell={ell} is not coverable by the groups")

    denom = k * A * A + g * B * B
    c_required = math.sqrt((ell * A * A + gl * B * B) / (72 * denom)) if gl is not None and denom > 0 else 0.0
    if rm_s <= 0:
        reasons.append("degenerate minimum eigenvalue")
        c_observed = math.inf
    else:
        c_observed = (rp_s - rm_2s) / rm_s
    c_used = c_required if c is None else float(c)
    if c_used <= 0:
        reasons.append("eigenvalue-ratio constant c must be positive")
    if c_observed > c_used:
        reasons.append(f"observed ratio {c_observed:g} exceeds c={c_used:g}")
    if c_used > c_required:
        reasons.append(f"c={c_used:g} violates c <= {c_required:g}")

    hold = not [r for r in reasons if not r.startswith("2s=")]
    if rm_s > 0 and c_used > 0:
        bound = math.sqrt(4.5) / (rm_s * math.sqrt(n)) * (1 + 0.25 / c_used) * math.sqrt(A * A * k + g * B * B)
    else:
        bound = math.inf
    return TheoremConditions(
        A=A, B=B, s=s, ell=ell, g_ell=gl, lambda_minus_sq=lms,
        c_required=c_required, c_observed=c_observed, c_used=c_used,
        conditions_hold=hold, bound_value=bound,
        rho_minus_s=rm_s, rho_plus_s=rp_s, rho_minus_2s=rm_2s,
        max_rho_plus_group=rho_groups, A_min=A_min, B_min=B_min,
        clamped=clamped, reasons=reasons,
    )


@dataclass
class CorollaryCheck:
    holds: bool
    bound_value: float
    ratio: float
    threshold: float
    s: int
    ell: int
    rho_minus_s: float
    clamped: bool = False
    table: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def corollary_cs_check(X, structure: GroupStructure, truth: GroundTruth, delta_a: float, cap: int = DEFAULT_CAP) -> CorollaryCheck:
    """Noiseless case: ``ell = k``, ``s = 2k + k0 - 1`` and ratio at most ``1/sqrt(72)``."""
    k, k0 = truth.k, structure.k0
    s = 2 * k + k0 - 1
    (rm_s, rp_s), c1 = _clamped_rho(X, structure, s, cap)
    (rm_2s, _), c2 = _clamped_rho(X, structure, 2 * s, cap)
    threshold = 1 / math.sqrt(72)
    ratio = (rp_s - rm_2s) / rm_s if rm_s > 0 else math.inf
    holds = ratio <= threshold
    rho_groups = max(rho_bounds_on_set(X, G)[1] for G in structure.index_arrays)
    bound = (6 * math.sqrt(2) + 18) / rm_s * math.sqrt(rho_groups) * delta_a * math.sqrt(k) if rm_s > 0 else math.inf
    return CorollaryCheck(holds, bound, ratio, threshold, s, k, rm_s, c1 or c2)


def corollary_even_check(problem: Problem, truth: GroundTruth, A: float, B: float, cap: int = DEFAULT_CAP) -> CorollaryCheck:
    """Equal group sizes: scan ``ell`` over multiples of ``k0`` and keep the smallest valid bound.

    The condition is ``6 sqrt(2) (rho_+(k+ell) - rho_-(2k+2ell)) / rho_-(k+ell) < sqrt(ell/k)``.
    """
    X, st, n = problem.X, problem.structure, problem.n
    if len(set(st.sizes.tolist())) != 1:
        raise ValueError("corollary applies to equal group sizes only")
    k, k0 = truth.k, st.k0
    table, best = [], None
    clamped = False
    for ell in range(k0, st.p - k + 1, k0):
        (rm, rp), c1 = _clamped_rho(X, st, k + ell, cap)
        (rm2, _), c2 = _clamped_rho(X, st, 2 * (k + ell), cap)
        clamped = clamped or c1 or c2
        lhs = 6 * math.sqrt(2) * (rp - rm2) / rm if rm > 0 else math.inf
        rhs = math.sqrt(ell / k)
        bound = (math.sqrt(4.5) + 4.5 * ell / k) * math.sqrt(A * A + B * B / k0) * math.sqrt(k / n) / rm if rm > 0 else math.inf
        row = {"ell": ell, "lhs": lhs, "rhs": rhs, "holds": lhs < rhs, "bound": bound, "rho_minus": rm}
        table.append(row)
        if row["holds"] and (best is None or bound < best["bound"]):
            best = row
    if best is None:
        return CorollaryCheck(False, math.inf, math.nan, math.nan, 0, 0, math.nan, clamped, table)
    return CorollaryCheck(True, best["bound"], best["lhs"], best["rhs"], k + best["ell"], best["ell"], best["rho_minus"], clamped, table)


def lemma_a2_gap(X, I, J) -> tuple[float, float]:
    """Operator norm of the ``(I, J)`` block of ``X^T X / n`` and its eigenvalue-gap bound."""
    I = sorted(set(int(i) for i in I))
    J = sorted(set(int(j) for j in J))
    if not I or not J:
        raise ValueError("index sets must be nonempty")
    if set(I) & set(J):
        raise ValueError("index sets overlap")
    gram = _gram(X)
    lhs = float(np.linalg.norm(gram[np.ix_(I, J)], 2))
    _, rp_i = rho_bounds_on_set(X, I)
    _, rp_j = rho_bounds_on_set(X, J)
    rm_ij, _ = rho_bounds_on_set(X, I + J)
    rhs = math.sqrt(max(rp_i - rm_ij, 0.0) * max(rp_j - rm_ij, 0.0))
    return lhs, rhs


@dataclass
class ConeCheck:
    premise_holds: bool
    lhs: float
    rhs: float
    slack: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cone_condition_check(problem: Problem, truth: GroundTruth, beta_hat, lambda_weights, eps) -> ConeCheck:
    """Factor-3 cone inequality between off-support and on-support penalty mass.

    ``premise_holds`` says whether every ``lambda_j`` dominates
    ``4 rho_+(G_j)^{1/2} ||(X_G^T X_G)^{-1/2} X_G^T eps|| / sqrt(n)``.
    ``slack`` is ``lhs - 3 rhs`` (nonpositive when the inequality holds).
    """
    X, st, n = problem.X, problem.structure, problem.n
    lam = np.asarray(lambda_weights, dtype=float)
    eps = np.asarray(eps, dtype=float)
    premise = True
    for j, G in enumerate(st.index_arrays):
        need = 4 * math.sqrt(rho_bounds_on_set(X, G)[1]) * noise_projection_norm(X, st, j, eps) / math.sqrt(n)
        premise = premise and lam[j] >= need
    beta_hat = np.asarray(beta_hat, dtype=float)
    on = np.zeros(st.m, dtype=bool)
    on[list(truth.active_groups)] = True
    lhs = float(lam[~on] @ group_norms(beta_hat, st)[~on])
    rhs = float(lam[on] @ group_norms(truth.beta_bar - beta_hat, st)[on])
    return ConeCheck(bool(premise), lhs, rhs, lhs - 3 * rhs)
