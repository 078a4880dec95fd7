"""Cross-validated Lasso vs group Lasso comparisons on synthetic data.

A replication draws a design, a signal and noise from streams derived from
its own seed, picks lambda for each method by K-fold cross-validation,
refits on all rows and records the relative recovery error.

Group Lasso weights are ``lambda_j = (lambda sqrt(k_j) + B) / sqrt(n)`` with
``n`` the size of the full sample (so one lambda means the same penalty in
every fold and in the refit); Lasso uses ``lambda`` on every coordinate.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import GroupStructure, Problem, recovery_error
from .datagen import (
    NoiseSpec,
    SignalSpec,
    gen_design,
    gen_observation,
    gen_signal,
    halfmixed_structure,
    stream,
    uneven_random_structure,
)
from .solver import SolverConfig, lipschitz_constant, solve_group_lasso, zero_threshold

log = logging.getLogger(__name__)

METHODS = ("lasso", "group-lasso")
SCENARIOS = (
    "even-correct",
    "even-incorrect",
    "g-sweep",
    "groupsize-sweep",
    "uneven-random",
    "uneven-halfmixed",
    "uneven-large",
    "uneven-single",
)
CSV_COLUMNS = (
    "scenario", "n", "method", "replication", "seed",
    "chosen_lambda", "recovery_error", "iterations", "converged",
)


@dataclass(frozen=True)
class CvSpec:
    """Cross-validation settings.

    With ``lambda_grid=None`` the grid is ``n_lambda`` log-spaced values in
    ``[min_ratio, 1] * lambda_max``, where ``lambda_max`` is the smallest value
    giving an all-zero fit on the full sample. An explicit grid must be
    strictly increasing and positive.
    """

    lambda_grid: tuple[float, ...] | None = None
    folds: int = 5
    n_lambda: int = 30
    min_ratio: float = 1e-4
    grid_scale: str = "log"
    tolerance: float = 1e-6
    max_iterations: int = 10_000

    def __post_init__(self):
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if not grid:
                raise ValueError("lambda grid is empty")
            if any(v <= 0 or not math.isfinite(v) for v in grid):
                raise ValueError("lambda grid values must be positive and finite")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("lambda grid must be strictly increasing (no duplicates)")
            object.__setattr__(self, "lambda_grid", grid)
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.grid_scale != "log":
            raise ValueError("only log grids are supported")
        if not 0 < self.min_ratio < 1 or self.n_lambda < 1:
            raise ValueError("bad default-grid parameters")


@dataclass
class CvResult:
    method: str
    lambdas: np.ndarray
    losses: np.ndarray
    chosen_lambda: float
    folds: list[np.ndarray] = field(repr=False)


def penalty_weights(structure: GroupStructure, method: str, lam: float, n: int, B: float = 0.0) -> np.ndarray:
    if method == "lasso":
        return np.full(structure.p, float(lam))
    if method == "group-lasso":
        return (lam * np.sqrt(structure.sizes) + B) / math.sqrt(n)
    raise ValueError(f"unknown method {method!r}")


def method_structure(structure: GroupStructure, method: str) -> GroupStructure:
    return GroupStructure.singletons(structure.p) if method == "lasso" else structure


def lambda_max(problem: Problem, method: str, B: float = 0.0) -> float:
    """Smallest lambda for which the all-zero vector is optimal."""
    st = method_structure(problem.structure, method)
    thr = zero_threshold(Problem(problem.X, problem.y, st))
    if method == "lasso":
        return float(thr.max())
    return float(np.max((thr * math.sqrt(problem.n) - B) / np.sqrt(st.sizes)))


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Contiguous blocks of a seeded permutation; depends on ``(seed, n, folds)`` only."""
    if folds > n:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    perm = stream(seed, "cv-folds", n, folds).permutation(n)
    return [np.sort(b) for b in np.array_split(perm, folds)]


def lambda_grid(problem: Problem, cv: CvSpec, method: str, B: float = 0.0) -> np.ndarray:
    if cv.lambda_grid is not None:
        return np.asarray(cv.lambda_grid)
    top = lambda_max(problem, method, B)
    if top <= 0:
        top = 1.0
    return top * np.logspace(math.log10(cv.min_ratio), 0.0, cv.n_lambda)


def solve_path(problem: Problem, method: str, lambdas_desc, config: SolverConfig, n_weights: int, B: float = 0.0):
    """Warm-started solves along a decreasing lambda sequence; yields one result per lambda."""
    st = method_structure(problem.structure, method)
    prob = Problem(problem.X, problem.y, st)
    L = lipschitz_constant(problem.X)
    beta = None
    for lam in lambdas_desc:
        cfg = config.with_weights(penalty_weights(problem.structure, method, lam, n_weights, B))
        res = solve_group_lasso(prob, cfg, warm_start=beta, lipschitz=L)
        beta = res.beta_hat
        yield res


def cross_validate(problem: Problem, cv: CvSpec, method: str, seed: int = 0, B: float = 0.0) -> CvResult:
    """Pick lambda by K-fold CV on held-out mean squared prediction error.

    Ties go to the smallest lambda.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    folds = fold_indices(problem.n, cv.folds, seed)
    if any(f.size < 1 for f in folds):
        raise ValueError("a fold has no rows")
    grid = lambda_grid(problem, cv, method, B)
    desc = grid[::-1]
    config = SolverConfig(np.zeros(1), max_iterations=cv.max_iterations, tolerance=cv.tolerance)
    losses = np.zeros(grid.size)
    for test in folds:
        train = np.setdiff1d(np.arange(problem.n), test)
        sub = problem.subset(train)
        Xt, yt = problem.X[test], problem.y[test]
        for i, res in enumerate(solve_path(sub, method, desc, config, problem.n, B)):
            r = Xt @ res.beta_hat - yt
            losses[grid.size - 1 - i] += float(r @ r) / test.size
    losses /= len(folds)
    best = int(np.flatnonzero(losses == losses.min())[0])
    return CvResult(method, grid, losses, float(grid[best]), folds)


def fit(problem: Problem, method: str, lam: float, cv: CvSpec, config: SolverConfig | None = None, B: float = 0.0):
    """Refit at ``lam`` on all rows, warm-starting along the grid down to ``lam``."""
    config = config or SolverConfig(np.zeros(1))
    grid = lambda_grid(problem, cv, method, B)
    path = [v for v in grid[::-1] if v > lam] + [lam]
    res = None
    for res in solve_path(problem, method, path, config, problem.n, B):
        pass
    return res


@dataclass(frozen=True)
class ExperimentSpec:
    """One simulation scenario.

    ``k0``/``m`` describe even structures; uneven scenarios use ``m`` groups
    (``uneven-random``) or ``n_single`` singleton plus ``m - n_single`` large
    groups (the other uneven scenarios). ``support_size`` is the number of
    nonzeros for the incorrect-structure scenarios.
    """

    scenario: str
    n_grid: tuple[int, ...]
    p: int = 512
    k0: int | None = 4
    m: int | None = None
    g: int = 16
    support_size: int | None = None
    n_single: int = 32
    sigma: float = 0.01
    replications: int = 100
    seed: int = 0
    cv: CvSpec = field(default_factory=CvSpec)
    B: float = 0.0
    fix_design: bool = False
    label: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))
        if not self.n_grid:
            raise ValueError("n_grid is empty")
        if min(self.n_grid) < self.cv.folds:
            raise ValueError("every n must be at least the number of CV folds")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        NoiseSpec(self.sigma)
        if self.scenario.startswith("uneven") and self.m is None:
            raise ValueError("uneven scenarios need m")
        if not self.scenario.startswith("uneven") and (self.k0 is None or self.p % self.k0):
            raise ValueError("even scenarios need k0 dividing p")

    @property
    def name(self) -> str:
        return f"{self.scenario}[{self.label}]" if self.label else self.scenario

    def placement(self) -> str:
        return {
            "even-correct": "full-groups",
            "g-sweep": "full-groups",
            "even-incorrect": "partial-groups",
            "groupsize-sweep": "partial-groups",
            "uneven-random": "full-groups",
            "uneven-halfmixed": "mixed-half",
            "uneven-large": "large-groups",
            "uneven-single": "single-element-groups",
        }[self.scenario]

    def structure(self, rep_seed: int) -> GroupStructure:
        if self.scenario == "uneven-random":
            return uneven_random_structure(self.p, self.m, rep_seed)
        if self.scenario.startswith("uneven"):
            return halfmixed_structure(self.p, self.n_single, self.m - self.n_single)
        return GroupStructure.even(self.p, self.k0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_grid"] = list(self.n_grid)
        d["cv"] = asdict(self.cv)
        if d["cv"]["lambda_grid"] is not None:
            d["cv"]["lambda_grid"] = list(d["cv"]["lambda_grid"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        d = dict(d)
        cv = d.pop("cv", None) or {}
        if cv.get("lambda_grid") is not None:
            cv["lambda_grid"] = tuple(cv["lambda_grid"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(cv=CvSpec(**cv), **d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def replication_seed(seed: int, n: int, rep: int) -> int:
    return int(stream(seed, "replication", n, rep).integers(2**63))


def run_replication(spec: ExperimentSpec, n: int, rep: int) -> list[dict]:
    """One (n, replication) cell: both methods on the same data and folds."""
    rseed = replication_seed(spec.seed, n, rep)
    structure = spec.structure(rseed)
    truth = gen_signal(SignalSpec(structure, spec.g, spec.placement(), spec.support_size, seed=rseed))
    design_seed = int(stream(spec.seed, "fixed-design", n).integers(2**63)) if spec.fix_design else rseed
    X = gen_design(n, spec.p, design_seed)
    y = gen_observation(X, truth, NoiseSpec(spec.sigma), rseed)
    problem = Problem(X, y, structure)
    rows = []
    for method in METHODS:
        cv = cross_validate(problem, spec.cv, method, seed=rseed, B=spec.B)
        res = fit(problem, method, cv.chosen_lambda, spec.cv, B=spec.B)
        rows.append({
            "scenario": spec.name,
            "n": n,
            "method": method,
            "replication": rep,
            "seed": rseed,
            "chosen_lambda": cv.chosen_lambda,
            "recovery_error": recovery_error(res.beta_hat, truth.beta_bar),
            "iterations": res.iterations,
            "converged": res.converged,
            "g": truth.g,
            "k": truth.k,
            "support_size": truth.support_size,
        })
    return rows


def _run_cell(args):
    return run_replication(*args)


def default_threads() -> int:
    return int(os.environ.get("GSB_THREADS", "1"))


@dataclass
class ExperimentReport:
    """Per-replication rows plus per-(scenario, n, method) summaries."""

    specs: list[ExperimentSpec]
    rows: list[dict]

    def cells(self) -> dict[tuple[str, int, str], dict]:
        groups: dict[tuple[str, int, str], list[dict]] = {}
        for r in self.rows:
            groups.setdefault((r["scenario"], r["n"], r["method"]), []).append(r)
        out = {}
        for key, rs in groups.items():
            errs = np.array([r["recovery_error"] for r in rs])
            out[key] = {
                "count": len(rs),
                "mean": float(errs.mean()),
                "median": float(np.median(errs)),
                "std": float(errs.std(ddof=1)) if len(rs) > 1 else 0.0,
                "nonconverged": sum(not r["converged"] for r in rs),
                "mean_iterations": float(np.mean([r["iterations"] for r in rs])),
                "k_over_support": float(np.mean([r["k"] / r["support_size"] for r in rs])),
            }
        return out

    def errors(self, scenario: str, n: int, method: str) -> np.ndarray:
        rows = sorted(
            (r for r in self.rows if (r["scenario"], r["n"], r["method"]) == (scenario, n, method)),
            key=lambda r: r["replication"],
        )
        return np.array([r["recovery_error"] for r in rows])

    @property
    def nonconvergence_flag(self) -> bool:
        return sum(not r["converged"] for r in self.rows) > 0.05 * max(len(self.rows), 1)

    def aggregate(self) -> dict:
        return {
            "cells": {f"{s}/n={n}/{m}": v for (s, n, m), v in sorted(self.cells().items())},
            "nonconvergence_flag": self.nonconvergence_flag,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([
                    r["scenario"], r["n"], r["method"], r["replication"], r["seed"],
                    repr(float(r["chosen_lambda"])), repr(float(r["recovery_error"])),
                    r["iterations"], "true" if r["converged"] else "false",
                ])

    def write_json(self, path) -> None:
        doc = {"specs": [s.to_dict() for s in self.specs], **self.aggregate()}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiments(specs, threads: int | None = None) -> ExperimentReport:
    """Run every (spec, n, replication) cell; output order is canonical regardless of ``threads``."""
    specs = list(specs)
    jobs = [(s, n, r) for s in specs for n in s.n_grid for r in range(s.replications)]
    threads = default_threads() if threads is None else threads
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, jobs, chunksize=1))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_run_cell(job))
            log.info("%s n=%d rep=%d done (%d/%d)", job[0].name, job[1], job[2], i + 1, len(jobs))
    rows = [row for cell in results for row in cell]
    return ExperimentReport(specs, rows)


def run_experiment(spec: ExperimentSpec, threads: int | None = None) -> ExperimentReport:
    return run_experiments([spec], threads)


def g_sweep_specs(base: ExperimentSpec, g_values, k: int = 64) -> list[ExperimentSpec]:
    """Even structures with ``k0 = k / g`` so that ``g`` full groups cover ``k`` coordinates."""
    out = []
    for g in g_values:
        if k % g:
            raise ValueError(f"g={g} does not divide k={k}")
        out.append(replace(base, scenario="g-sweep", g=g, k0=k // g, support_size=None, label=f"g={g}"))
    return out


def sweep_g(base: ExperimentSpec, g_values=(4, 8, 16, 32, 64), k: int = 64, threads=None) -> ExperimentReport:
    return run_experiments(g_sweep_specs(base, g_values, k), threads)


def group_size_sweep_specs(base: ExperimentSpec, k0_values=(1, 2, 4, 8, 16, 32, 64), support_size: int = 64, g: int = 16):
    """Fixed ``support_size`` nonzeros spread over ``max(g, support_size/k0)`` groups of size ``k0``.

    The number of active groups is capped at ``m = p / k0``.
    """
    out = []
    for k0 in k0_values:
        m = base.p // k0
        gg = min(m, max(g, -(-support_size // k0)))
        out.append(replace(
            base, scenario="groupsize-sweep", k0=k0, g=gg,
            support_size=support_size, label=f"k0={k0}",
        ))
    return out


def sweep_group_size(base: ExperimentSpec, k0_values=(1, 2, 4, 8, 16, 32, 64), support_size=64, g=16, threads=None):
    return run_experiments(group_size_sweep_specs(base, k0_values, support_size, g), threads)


# Named scenarios. n grids for sample-size curves are multiples of 64 = ||beta_bar||_0.
RATIO_GRID = (96, 128, 160, 192, 224, 256)
UNEVEN_GRID = (32, 64, 96, 128, 160, 192)


def preset(name: str, replications: int | None = None, seed: int = 0) -> list[ExperimentSpec]:
    """Experiment specs for a named figure reproduction."""
    even_correct = ExperimentSpec("even-correct", (192,), k0=4, g=16, seed=seed)
    even_incorrect = ExperimentSpec("even-incorrect", (192,), k0=16, g=16, support_size=64, seed=seed)
    uneven = dict(k0=None, m=64, g=4, seed=seed)
    table = {
        "fig1": [even_correct],
        "fig2a": [replace(even_correct, n_grid=RATIO_GRID)],
        "fig2b": g_sweep_specs(replace(even_correct, n_grid=(160,)), (4, 8, 16, 32, 64)),
        "fig3": [even_incorrect],
        "fig4a": [replace(even_incorrect, n_grid=RATIO_GRID)],
        "fig4b": group_size_sweep_specs(replace(even_incorrect, n_grid=(192,))),
        "fig5a": [ExperimentSpec("uneven-random", UNEVEN_GRID, **uneven)],
        "fig5b": [ExperimentSpec("uneven-halfmixed", UNEVEN_GRID, **uneven)],
        "fig5c": [ExperimentSpec("uneven-large", UNEVEN_GRID, **uneven)],
        "fig5d": [ExperimentSpec("uneven-single", UNEVEN_GRID, **uneven)],
        "smoke": [replace(even_correct, replications=2)],
    }
    table["fig2"] = table["fig2a"] + table["fig2b"]
    table["fig4"] = table["fig4a"] + table["fig4b"]
    table["fig5"] = table["fig5a"] + table["fig5b"] + table["fig5c"] + table["fig5d"]
    if name not in table:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(table)}")
    specs = table[name]
    if replications is not None:
        specs = [replace(s, replications=replications) for s in specs]
    return specs


PRESET_NAMES = (
    "fig1", "fig2", "fig2a", "fig2b", "fig3", "fig4", "fig4a", "fig4b",
    "fig5", "fig5a", "fig5b", "fig5c", "fig5d", "smoke",
)
