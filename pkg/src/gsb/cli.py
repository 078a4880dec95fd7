"""``gsb`` command line interface.

Exit codes: 0 success, 1 input error, 2 solver did not converge, 3 enumeration cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io as _io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .approx import group_greedy_approximate
from .core import GroundTruth, GroupStructure, Problem
from .datagen import STREAM_VERSION
from .experiments import (
    PRESET_NAMES,
    CvSpec,
    ExperimentSpec,
    cross_validate,
    preset,
    run_experiments,
)
from .io import read_matrix, read_vector
from .solver import SolverConfig, solve_group_lasso
from .spectra import (
    EnumerationCapError,
    group_rip_certify,
    spectral_summary,
    verify_noise_bound_monte_carlo,
)

log = logging.getLogger("gsb")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_CAP = 0, 1, 2, 3


class InputError(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _emit(doc, out, fmt="json", csv_rows=None):
    if fmt == "csv" and csv_rows is not None:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in csv_rows:
            w.writerow(row)
        text = buf.getvalue()
    else:
        text = json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_config(path):
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8")), path.parent
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _need(cfg, key):
    if key not in cfg or cfg[key] is None:
        raise InputError(f"missing required field '{key}'")
    return cfg[key]


def _path(base, value):
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise InputError(f"file not found: {p}")
    return p


def _matrix(cfg, key, base):
    value = _need(cfg, key)
    try:
        if isinstance(value, str):
            return read_matrix(_path(base, value))
        return np.atleast_2d(np.asarray(value, dtype=float))
    except ValueError as exc:
        raise InputError(f"field '{key}': {exc}") from None


def _vector(cfg, key, base):
    value = _need(cfg, key)
    try:
        if isinstance(value, str):
            return read_vector(_path(base, value))
        return np.asarray(value, dtype=float).reshape(-1)
    except ValueError as exc:
        raise InputError(f"field '{key}': {exc}") from None


def _structure(cfg, base):
    value = _need(cfg, "structure")
    try:
        if isinstance(value, str):
            return GroupStructure.load(_path(base, value))
        return GroupStructure.from_dict(value)
    except (ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"field 'structure': {exc}") from None


def _problem(cfg, base):
    X = _matrix(cfg, "X", base)
    y = _vector(cfg, "y", base)
    st = _structure(cfg, base)
    try:
        return Problem(X, y, st)
    except ValueError as exc:
        raise InputError(f"problem: {exc}") from None


def _overrides(args, cfg, keys):
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def cmd_solve(args) -> int:
    cfg, base = _load_config(args.config)
    cfg = _overrides(args, cfg, ["X", "y", "structure", "lam", "A", "B"])
    if "lambda" in cfg and "lam" not in cfg:
        cfg["lam"] = cfg["lambda"]
    problem = _problem(cfg, base)
    kw = {k: cfg[k] for k in ("max_iterations", "tolerance", "step_rule") if k in cfg}
    try:
        if cfg.get("lam") is not None:
            lam = cfg["lam"]
            weights = np.full(problem.structure.m, lam) if np.isscalar(lam) else np.asarray(lam, dtype=float)
            config = SolverConfig(weights, **kw)
        elif cfg.get("A") is not None:
            config = SolverConfig.theorem_weights(
                problem.structure, float(cfg["A"]), float(cfg.get("B") or 0.0), problem.n, **kw)
        else:
            raise InputError("give 'lambda' or 'A' (and optionally 'B')")
        res = solve_group_lasso(problem, config)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    doc = res.to_dict()
    _emit(doc, args.out, args.format, [[repr(float(v))] for v in res.beta_hat])
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _experiment_specs(args):
    if args.preset:
        try:
            specs = preset(args.preset, args.replications)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        cfg, _ = _load_config(args.config)
        if not cfg:
            raise InputError("give --preset or --config")
        items = cfg.get("experiments", [cfg]) if isinstance(cfg, dict) else cfg
        try:
            specs = [ExperimentSpec.from_dict(d) for d in items]
        except (TypeError, ValueError) as exc:
            raise InputError(f"experiment spec: {exc}") from None
        if args.replications is not None:
            specs = [replace(s, replications=args.replications) for s in specs]
    if args.seed is not None:
        specs = [replace(s, seed=args.seed) for s in specs]
    return specs


def cmd_simulate(args) -> int:
    specs = _experiment_specs(args)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiments(specs, threads=args.threads)
    report.write_csv(out / "results.csv")
    report.write_json(out / "aggregate.json")
    digest = hashlib.sha256("".join(s.digest() for s in specs).encode()).hexdigest()
    manifest = {
        "spec_hash": digest,
        "seeds": [s.seed for s in specs],
        "version": __version__,
        "stream_version": STREAM_VERSION,
        "scenarios": [s.name for s in specs],
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for (scen, n, method), cell in sorted(report.cells().items()):
        log.info("%s n=%d %s mean=%.4f median=%.4f", scen, n, method, cell["mean"], cell["median"])
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg, base = _load_config(args.config)
    problem = _problem(cfg, base)
    method = cfg.get("method", "group-lasso")
    try:
        cv_cfg = dict(cfg.get("cv", {}))
        if cv_cfg.get("lambda_grid") is not None:
            cv_cfg["lambda_grid"] = tuple(cv_cfg["lambda_grid"])
        cv = CvSpec(**cv_cfg)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        res = cross_validate(problem, cv, method, seed=seed, B=float(cfg.get("B", 0.0)))
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    doc = {"method": method, "chosen_lambda": res.chosen_lambda,
           "lambdas": res.lambdas, "losses": res.losses}
    rows = [["lambda", "cv_loss"]] + [[repr(float(a)), repr(float(b))] for a, b in zip(res.lambdas, res.losses)]
    _emit(doc, args.out, args.format, rows)
    return EXIT_OK


def cmd_spectra(args) -> int:
    cfg, base = _load_config(args.config)
    X = _matrix(cfg, "X", base)
    st = _structure(cfg, base)
    s_values = cfg.get("s_values") or list(range(1, st.p + 1))
    try:
        summary = spectral_summary(X, st, s_values, cap=int(cfg.get("cap", 10**6)))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rows = [["s", "rho_minus", "rho_plus"]] + [
        [s, repr(summary.rho_minus_by_s[s]), repr(summary.rho_plus_by_s[s])] for s in summary.rho_minus_by_s
    ]
    _emit(summary.to_dict(), args.out, args.format, rows)
    return EXIT_OK


def cmd_ripcheck(args) -> int:
    cfg, base = _load_config(args.config)
    X = _matrix(cfg, "X", base)
    st = _structure(cfg, base)
    try:
        cert = group_rip_certify(X, st, int(_need(cfg, "g")), int(_need(cfg, "k")),
                                 float(_need(cfg, "delta")), cap=int(cfg.get("cap", 10**6)))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(cert.to_dict(), args.out)
    return EXIT_OK


def cmd_approx(args) -> int:
    cfg, base = _load_config(args.config)
    X = _matrix(cfg, "X", base)
    st = _structure(cfg, base)
    beta = _vector(cfg, "beta_bar", base)
    Ey = _vector(cfg, "target_mean", base)
    try:
        active = cfg.get("active_groups")
        active = None if active is None else [int(j) - 1 for j in active]
        truth = GroundTruth.from_beta(beta, st, active)
        trace = group_greedy_approximate(X, st, truth, Ey, float(_need(cfg, "a0")), float(_need(cfg, "b0")))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(trace.to_dict(), args.out)
    return EXIT_OK


def cmd_noisecheck(args) -> int:
    cfg, _ = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    try:
        rep = verify_noise_bound_monte_carlo(
            int(_need(cfg, "n")), _need(cfg, "group_sizes"), float(_need(cfg, "sigma")),
            cfg.get("etas", [0.5, 0.1, 0.01]), int(cfg.get("trials", 10_000)), seed,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rows = [["group_size", "eta", "threshold", "exceedance"]] + [
        [k, repr(e), repr(rep.thresholds[k][e]), repr(rep.exceedance[k][e])]
        for k in rep.group_sizes for e in rep.etas
    ]
    _emit(rep.to_dict(), args.out, args.format, rows)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "cv": cmd_cv,
    "spectra": cmd_spectra,
    "ripcheck": cmd_ripcheck,
    "approx": cmd_approx,
    "noisecheck": cmd_noisecheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsb", description="Group Lasso vs Lasso under strong group sparsity.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output file (directory for simulate); stdout by default")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--format", choices=("csv", "json"), default="json")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    p = common(sub.add_parser("solve", help="fit group Lasso on one problem"))
    p.add_argument("--X", help="design matrix file")
    p.add_argument("--y", help="observation vector file")
    p.add_argument("--structure", help="group structure JSON")
    p.add_argument("--lambda", dest="lam", type=float, help="common lambda for every group")
    p.add_argument("--A", type=float, help="lambda_j = (A sqrt(k_j) + B) / sqrt(n)")
    p.add_argument("--B", type=float)

    p = common(sub.add_parser("simulate", help="run simulation experiments"))
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--threads", type=int, help="worker processes (env GSB_THREADS)")
    p.add_argument("--replications", type=int)

    common(sub.add_parser("cv", help="cross-validate lambda on one problem"))
    common(sub.add_parser("spectra", help="group-restricted sparse eigenvalues"))
    common(sub.add_parser("ripcheck", help="exact group-RIP check"))
    common(sub.add_parser("approx", help="group-greedy surrogate target"))
    common(sub.add_parser("noisecheck", help="Monte Carlo check of the Gaussian noise bound"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"gsb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EnumerationCapError as exc:
        print(f"gsb {args.command}: error: {exc} (count={exc.count}, cap={exc.cap})", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
