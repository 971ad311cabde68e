"""Command-line entry point.

Exit codes: 0 on success, 1 on usage errors (bad flags, unreadable or
invalid config), 2 on numerical failures (solver did not converge,
infeasible profile or sparsity level, degenerate draws).

The default seed is the constant 42. The worker count comes from
``--threads`` or the ``WL1_THREADS`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import MeasurementSet, WeightVector, build_operator
from .errors import WL1Error
from .harness import ExperimentConfig, run_experiment
from .recovery import RecoveryProblem, SolverConfig, certify, solve
from .serialize import load_matrix, load_profile, load_support, load_vector, save_vector, write_json
from .statdim import ConeSpec, confidence_t, error_bound, estimate_statdim, measurement_bound
from .weights import solve_weights, weights_from_profile

DEFAULT_SEED = 42
THREADS_ENV = "WL1_THREADS"
log = logging.getLogger("wl1analysis")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _threads(value) -> int:
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    if str(value).lower() == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"--threads must be a positive integer or 'auto', got {value!r}")
    if n < 1:
        raise UsageError(f"--threads must be a positive integer or 'auto', got {value!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--threads", default=None, help=f"worker count or 'auto' (env {THREADS_ENV}, default 1)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="wl1analysis", description="Weighted l1-analysis recovery toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("weights", parents=[common], help="optimal block weights from accuracies")
    p.add_argument("--alpha", type=_floats, required=True, help="comma-separated block accuracies in [0, 1]")
    p.add_argument("--tol", type=float, default=1e-12)

    p = sub.add_parser("statdim", parents=[common], help="Monte Carlo statistical dimension and bounds")
    p.add_argument("--p", type=int, help="analysis dimension (with --s, unweighted cone)")
    p.add_argument("--s", type=int, help="support size (with --p)")
    p.add_argument("--support", type=Path, help="CSV of index[,sign] rows")
    p.add_argument("--weights", type=Path, help="weight vector CSV (length p; default all ones)")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--kappa", type=float, default=None, help="operator condition number for the bound")
    p.add_argument("--confidence", type=float, default=None, help="probability level for t (default t = 0)")
    p.add_argument("--m", type=int, default=None, help="measurements, for the error bound")
    p.add_argument("--eta", type=float, default=None, help="noise level, for the error bound")

    p = sub.add_parser("recover", parents=[common], help="solve one weighted l1-analysis program")
    p.add_argument("--operator", type=Path, required=True, help="analysis operator CSV (p x n)")
    p.add_argument("--A", dest="A", type=Path, required=True, help="measurement matrix CSV (m x n)")
    p.add_argument("--y", type=Path, required=True, help="measurement vector CSV")
    p.add_argument("--eta", type=float, default=0.0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", type=Path, help="weight vector CSV")
    g.add_argument("--profile", type=Path, help="prior profile JSON; weights solved from its accuracies")
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--truth", type=Path, default=None, help="optional true signal CSV for NMSE reporting")

    for name, kind in (("phase", "phase_heatmap"), ("success", "success_curve"), ("nmse", "nmse_curve"), ("image", "image")):
        p = sub.add_parser(name, parents=[common], help=f"run the {kind} experiment")
        p.add_argument("--config", type=Path, required=True, help="JSON config (or meta.json of a previous run)")
        p.add_argument("--trials", type=int, default=None, help="override trials per cell")
        p.set_defaults(kind=kind)
    return parser


def _cmd_weights(args) -> int:
    sol = solve_weights(args.alpha, tol=args.tol)
    print("alpha,omega,residual")
    for a, w, r in zip(args.alpha, sol.block_weights, sol.residuals):
        print(f"{a!r},{float(w)!r},{float(r)!r}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "weights.json", {
            "alphas": list(args.alpha),
            "omegas": [float(w) for w in sol.block_weights],
            "residuals": [float(r) for r in sol.residuals],
            "capped": [bool(c) for c in sol.capped],
        })
    return 0


def _cmd_statdim(args) -> int:
    if args.support is not None:
        idx, signs = load_support(args.support)
        p = args.p
        w = load_vector(args.weights) if args.weights is not None else None
        if p is None:
            if w is None:
                raise UsageError("statdim: --support needs --p or --weights to fix the dimension")
            p = w.size
        cone = ConeSpec(p, idx, signs, np.ones(p) if w is None else w)
    elif args.p is not None and args.s is not None:
        if args.weights is not None:
            w = load_vector(args.weights)
            cone = ConeSpec(args.p, np.arange(args.s), np.ones(args.s), w)
        else:
            cone = ConeSpec.unweighted(args.p, args.s)
    else:
        raise UsageError("statdim: give --p and --s, or --support")
    seed = DEFAULT_SEED if args.seed is None else args.seed
    est = estimate_statdim(cone, args.trials, seed=seed, workers=_threads(args.threads))
    out = est.as_dict()
    t = confidence_t(args.confidence) if args.confidence is not None else 0.0
    if args.kappa is not None:
        out["t"] = t
        out["measurement_bound"] = measurement_bound(args.kappa, est.mean, t)
        if args.m is not None and args.eta is not None:
            out["error_bound"] = error_bound(args.kappa, est.mean, args.m, t, args.eta)
    for k in sorted(out):
        print(f"{k},{out[k]!r}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "statdim.json", out)
    return 0


def _cmd_recover(args) -> int:
    op = build_operator(load_matrix(args.operator))
    A = load_matrix(args.A)
    y = load_vector(args.y)
    if args.weights is not None:
        w = load_vector(args.weights)
    elif args.profile is not None:
        w = weights_from_profile(load_profile(args.profile)).w
    else:
        w = WeightVector.uniform(op.p).w
    problem = RecoveryProblem(MeasurementSet(A, y, args.eta), op, w)
    res = solve(problem, SolverConfig(max_iters=args.max_iters, strict=True))
    cert = certify(problem, res.xhat)
    report = {
        "iterations": res.iterations,
        "objective": res.objective,
        "primal_residual": res.primal_residual,
        "gap": res.gap,
        "converged": bool(res.converged),
        "kkt_subgradient_residual": cert.subgradient_residual,
    }
    if args.truth is not None:
        x = load_vector(args.truth)
        report["nmse"] = float(np.linalg.norm(res.xhat - x) / max(np.linalg.norm(x), 1e-300))
    for k in sorted(report):
        print(f"{k},{report[k]!r}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        save_vector(args.out / "xhat.csv", res.xhat)
        write_json(args.out / "report.json", report)
    return 0


def _cmd_experiment(args) -> int:
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    try:
        cfg = ExperimentConfig.from_json(args.config)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise UsageError(f"{args.command}: cannot read config {args.config}: {exc}")
    if cfg.kind != args.kind:
        raise UsageError(f"{args.command}: config kind is {cfg.kind!r}, expected {args.kind!r}")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.threads is not None or THREADS_ENV in os.environ:
        overrides["workers"] = _threads(args.threads)
    cfg = replace(cfg, **overrides)
    cfg.validate()
    cells, _ = run_experiment(cfg, args.out)
    for c in cells:
        log.info("%s %s s=%d m=%d %s=%r", c.experiment, c.method, c.s, c.m, c.metric, c.value)
    print(f"wrote {len(cells)} cells to {args.out}")
    return 0


COMMANDS = {"weights": _cmd_weights, "statdim": _cmd_statdim, "recover": _cmd_recover}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(message)s")
        fn = COMMANDS.get(args.command, _cmd_experiment)
        return fn(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except WL1Error as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
