"""Group-greedy surrogate targets for approximately sparse means.

Starting from a strongly group-sparse ``beta_bar`` whose fit ``X beta_bar``
misses the mean ``E y`` by ``Delta = ||X beta_bar - E y|| / sqrt(n)``, the
procedure repeatedly picks the group whose normalized residual projection

    ||(X_G^T X_G)^{-1/2} X_G^T r|| / sqrt(k_j a0^2 + b0^2)

is largest and refits that block by least squares. It stops once every
normalized projection is at most ``sqrt(n) Delta / sqrt(k a0^2 + b0^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GroundTruth, GroupStructure
from .spectra import RankDeficientGroupError

__all__ = ["GreedyStep", "GreedyTrace", "block_refit", "group_greedy_approximate", "greedy_postconditions"]


@dataclass
class GreedyStep:
    selected_group: int
    projection_sq: float
    residual_norm_sq: float
    k_current: int
    g_current: int
    repeat: bool


@dataclass
class GreedyTrace:
    beta_prime: np.ndarray
    k_prime: int
    g_prime: int
    cover: list[int]
    delta: float
    threshold: float
    initial_residual_norm_sq: float
    iterations: list[GreedyStep] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "beta_prime": self.beta_prime.tolist(),
            "k_prime": self.k_prime,
            "g_prime": self.g_prime,
            "cover": [j + 1 for j in self.cover],
            "delta": self.delta,
            "threshold": self.threshold,
            "initial_residual_norm_sq": self.initial_residual_norm_sq,
            "iterations": [
                {**s.__dict__, "selected_group": s.selected_group + 1} for s in self.iterations
            ],
        }


def _bases(X, structure):
    out = []
    for idx in structure.index_arrays:
        U, sv, Vt = np.linalg.svd(X[:, idx], full_matrices=False)
        keep = sv > 1e-6 * sv[0] if sv[0] > 0 else np.zeros(sv.size, dtype=bool)
        out.append((U[:, keep], sv, Vt, bool(keep.all())))
    return out


def block_refit(X, structure: GroupStructure, beta, target_mean, j: int) -> np.ndarray:
    """One greedy update: least-squares refit of group ``j`` against the current residual.

    ``beta_G <- beta_G - (X_G^T X_G)^{-1} X_G^T (X beta - E y)``.
    """
    X = np.asarray(X, dtype=float)
    idx = structure.index_arrays[j]
    Xg = X[:, idx]
    U, sv, Vt = np.linalg.svd(Xg, full_matrices=False)
    if sv[0] == 0 or sv[-1] <= 1e-6 * sv[0]:
        raise RankDeficientGroupError(j)
    out = np.array(beta, dtype=float)
    r = X @ out - np.asarray(target_mean, dtype=float)
    out[idx] -= Vt.T @ ((U.T @ r) / sv)
    return out


def group_greedy_approximate(X, structure: GroupStructure, truth: GroundTruth, target_mean, a0: float, b0: float) -> GreedyTrace:
    X = np.asarray(X, dtype=float)
    Ey = np.asarray(target_mean, dtype=float)
    n = X.shape[0]
    if a0 < 0 or b0 < 0 or a0 * a0 + b0 * b0 == 0:
        raise ValueError("need a0, b0 >= 0 with a0^2 + b0^2 > 0")
    if Ey.shape != (n,):
        raise ValueError("target mean must have one entry per row of X")

    beta = truth.beta_bar.copy()
    r = X @ beta - Ey
    r0 = float(r @ r)
    delta = math.sqrt(r0 / n)
    k, g = truth.k, truth.g
    budget_scale = math.sqrt(k * a0 * a0 + b0 * b0)
    threshold = math.sqrt(n) * delta / budget_scale
    weights = np.sqrt(structure.sizes * a0 * a0 + b0 * b0)
    bases = _bases(X, structure)
    cover = set(truth.active_groups)
    trace = GreedyTrace(beta, k, g, sorted(cover), delta, threshold, r0)

    # each step removes at least threshold^2 * min(weights)^2 of the squared residual
    cap = structure.m + g
    if delta > 0:
        cap = max(cap, math.ceil(budget_scale**2 / float(weights.min()) ** 2) + 1)
    while True:
        proj = np.array([np.linalg.norm(Q.T @ r) for Q, *_ in bases])
        scores = proj / weights
        j = int(np.argmax(scores))
        if scores[j] <= threshold:
            break
        if len(trace.iterations) >= cap:
            raise RuntimeError(f"greedy procedure did not stop within {cap} iterations")
        _, sv, Vt, full = bases[j]
        if not full:
            raise RankDeficientGroupError(j)
        idx = structure.index_arrays[j]
        Q = bases[j][0]
        beta[idx] -= Vt.T @ ((Q.T @ r) / sv)
        r = X @ beta - Ey
        repeat = j in cover
        if not repeat:
            cover.add(j)
            k += int(structure.sizes[j])
            g += 1
        trace.iterations.append(GreedyStep(j, float(proj[j] ** 2), float(r @ r), k, g, repeat))

    trace.beta_prime = beta
    trace.k_prime, trace.g_prime = k, g
    trace.cover = sorted(cover)
    return trace


def greedy_postconditions(trace: GreedyTrace, X, structure: GroupStructure, truth: GroundTruth, target_mean, a0, b0, rtol=1e-8) -> dict:
    """Evaluate the three guarantees on a finished trace.

    * sparsity budget ``k' a0^2 + g' b0^2 <= 2 (k a0^2 + g b0^2)``
    * no increase of ``||X beta - E y||``
    * every group's normalized residual projection below
      ``(a0 sqrt(k_j) + b0) Delta / sqrt(k a0^2 + b0^2)``
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    Ey = np.asarray(target_mean, dtype=float)
    budget_lhs = trace.k_prime * a0**2 + trace.g_prime * b0**2
    budget_rhs = 2 * (truth.k * a0**2 + truth.g * b0**2)
    res_before = float(np.linalg.norm(X @ truth.beta_bar - Ey))
    res_after = float(np.linalg.norm(X @ trace.beta_prime - Ey))
    r = X @ trace.beta_prime - Ey
    scale = trace.delta / math.sqrt(truth.k * a0**2 + b0**2)
    worst = -math.inf
    for j, idx in enumerate(structure.index_arrays):
        U, sv, _ = np.linalg.svd(X[:, idx], full_matrices=False)
        lhs = np.linalg.norm(U.T @ r) / math.sqrt(n)
        rhs = (a0 * math.sqrt(structure.sizes[j]) + b0) * scale
        worst = max(worst, lhs - rhs * (1 + rtol))
    support_ok = bool(np.all(np.isin(np.flatnonzero(truth.beta_bar),
                                     structure.union(trace.cover))))
    return {
        "budget": budget_lhs <= budget_rhs * (1 + rtol),
        "budget_lhs": budget_lhs,
        "budget_rhs": budget_rhs,
        "residual": res_after <= res_before * (1 + rtol) + 1e-12,
        "residual_before": res_before,
        "residual_after": res_after,
        "projection": worst <= 1e-12,
        "projection_worst_excess": worst,
        "support_covered": support_ok,
    }
