"""Experiment drivers: phase diagrams, success curves, NMSE curves and the image test.

Every random draw comes from a substream keyed by the master seed and the
grid coordinates of the trial (never by loop position), so any cell can be
recomputed on its own and re-runs are bit-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy
from scipy.ndimage import gaussian_filter

from . import __version__
from .core import (
    AnalysisOperator,
    MeasurementSet,
    build_operator,
    best_k_term_support,
    compute_accuracies,
    controlled_kappa_operator,
    cosine_frame,
    gaussian_measurements,
    gen_analysis_sparse_signal,
    nmse,
    psnr,
    signal_on_support,
)
from .errors import InfeasibleProfile, WL1Error
from .imaging import haar_frame, phantom, write_pgm
from .recovery import RecoveryProblem, SolverConfig, solve
from .statdim import ConeSpec, confidence_t, error_bound, estimate_statdim, measurement_bound
from .weights import solve_weights, weights_from_profile

KINDS = ("phase_heatmap", "success_curve", "nmse_curve", "image", "error_bound")
SUCCESS_TOL = 1e-4

# substream tags
_OPERATOR, _TRIAL, _IMAGE = 1, 2, 3

CELL_COLUMNS = ("experiment", "method", "s", "m", "metric", "value", "successes", "trials", "nonconverged", "seed", "status")
BOUND_COLUMNS = ("experiment", "method", "s", "kappa", "delta", "delta_se", "bound_t0", "bound_t95")


@dataclass
class ExperimentConfig:
    kind: str
    n: int = 55
    p: int = 60
    m_grid: list = field(default_factory=list)
    s: int = 10
    s_grid: list | None = None
    bound_offsets: list | None = None
    operator: str = "ramp"
    kappa: float = 1.1
    block_sizes: list | None = None
    alphas: list | None = None
    trials: int = 50
    snr_db: float | None = None
    seed: int = 42
    success_tol: float = SUCCESS_TOL
    statdim_trials: int = 100_000
    max_iters: int = 20000
    image_size: int = 64
    levels: int = 2
    m_ratio: float = 0.4
    top_fraction: float = 0.1
    scale_groups: list = field(default_factory=lambda: [0.05, 0.15, 0.3, 0.5])
    prior_blur: float = 1.0
    image_statdim_trials: int = 200
    confidence: float = 0.95
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        d = json.loads(Path(path).read_text())
        if "config" in d and isinstance(d["config"], dict):
            d = d["config"]  # a meta.json from an earlier run
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.kind == "phase_heatmap":
            if not (self.s_grid or []):
                raise ValueError("phase_heatmap needs a nonempty s_grid")
            if not self.m_grid and not self.bound_offsets:
                raise ValueError("phase_heatmap needs m_grid or bound_offsets")
        if self.kind in ("success_curve", "nmse_curve"):
            if not self.m_grid:
                raise ValueError(f"{self.kind} needs a nonempty m_grid")
            if not self.block_sizes or not self.alphas:
                raise ValueError(f"{self.kind} needs block_sizes and alphas")
            block_counts(self.p, self.block_sizes, self.alphas, self.s)
        if self.kind == "error_bound" and (self.snr_db is None or not self.m_grid):
            raise ValueError("error_bound needs snr_db and m_grid")


@dataclass
class CellResult:
    experiment: str
    method: str
    s: int
    m: int
    metric: str
    value: float
    successes: int | None
    trials: int
    nonconverged: int
    seed: int
    status: str = "ok"

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CELL_COLUMNS}


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def make_operator(cfg: ExperimentConfig) -> AnalysisOperator:
    if cfg.operator == "ramp":
        return controlled_kappa_operator(cfg.p, cfg.n, cfg.kappa, substream(cfg.seed, _OPERATOR))
    if cfg.operator == "cosine":
        return cosine_frame(cfg.p, cfg.n)
    raise ValueError(f"unknown operator kind {cfg.operator!r}")


def block_counts(p: int, block_sizes, alphas, support_size: int) -> np.ndarray:
    """Support elements per block; raises unless every alpha_i |P_i| is an integer summing to s."""
    sizes = np.asarray(block_sizes, dtype=int)
    alphas = np.asarray(alphas, dtype=float)
    if sizes.shape != alphas.shape:
        raise InfeasibleProfile("one accuracy per block required")
    if sizes.sum() != p or np.any(sizes <= 0):
        raise InfeasibleProfile(f"block sizes {sizes.tolist()} do not sum to p={p}")
    if np.any(alphas < 0) or np.any(alphas > 1):
        raise InfeasibleProfile("accuracies must lie in [0, 1]")
    raw = alphas * sizes
    counts = np.rint(raw).astype(int)
    if np.any(np.abs(raw - counts) > 1e-9 * np.maximum(1.0, raw)):
        raise InfeasibleProfile(f"alpha_i * |P_i| = {raw.tolist()} are not integers")
    if counts.sum() != support_size:
        raise InfeasibleProfile(f"block counts {counts.tolist()} sum to {counts.sum()}, not s={support_size}")
    return counts


def realize_profile(p: int, block_sizes, target_alphas, support_size: int, seed=None):
    """Random partition with the given block sizes and a support hitting each block exactly.

    Returns ``(support, profile)``.
    """
    counts = block_counts(p, block_sizes, target_alphas, support_size)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(p)
    edges = np.concatenate([[0], np.cumsum(block_sizes)])
    blocks = [np.sort(perm[a:b]) for a, b in zip(edges[:-1], edges[1:])]
    support = np.sort(np.concatenate([rng.choice(b, size=k, replace=False) for b, k in zip(blocks, counts)]).astype(int))
    return support, compute_accuracies(blocks, support, p)


def block_cone(block_sizes, counts, omegas) -> ConeSpec:
    """Cone for a block-constant weighting; only per-block counts matter, not positions."""
    sizes = np.asarray(block_sizes, dtype=int)
    p = int(sizes.sum())
    w = np.repeat(np.asarray(omegas, dtype=float), sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    support = np.concatenate([st + np.arange(k) for st, k in zip(starts, counts)]).astype(int)
    return ConeSpec(p, support, np.ones(support.size), w)


def is_success(xhat, x, tol: float = SUCCESS_TOL) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.linalg.norm(np.asarray(xhat) - x) <= tol * max(np.linalg.norm(x), 1.0))


def _solve(A, y, eta, op, w, max_iters):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve(RecoveryProblem(MeasurementSet(A, y, eta), op, w), SolverConfig(max_iters=max_iters))


def _run_jobs(fn, jobs, workers: int):
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


# -- per-trial jobs (module level so they pickle) -------------------------------------------


def _phase_trial(job):
    op, s, m, trial, seed, tol, max_iters = job
    rng = substream(seed, _TRIAL, s, m, trial)
    try:
        sig = gen_analysis_sparse_signal(op, s, rng)
    except WL1Error as exc:
        return ("error", f"{type(exc).__name__}: {exc}")
    A = rng.standard_normal((m, op.n))
    res = _solve(A, A @ sig.x, 0.0, op, np.ones(op.p), max_iters)
    return ("ok", is_success(res.xhat, sig.x, tol), res.converged)


def _paired_trial(job):
    op, cfg, m, trial = job
    rng = substream(cfg.seed, _TRIAL, m, trial)
    support, profile = realize_profile(cfg.p, cfg.block_sizes, cfg.alphas, cfg.s, rng)
    sig = signal_on_support(op, support, rng)
    if cfg.snr_db is None:
        A = rng.standard_normal((m, op.n))
        meas = MeasurementSet(A, A @ sig.x, 0.0)
    else:
        meas, _ = gaussian_measurements(sig.x, m, rng, snr_db=cfg.snr_db)
    wv = weights_from_profile(profile)
    out = {}
    for method, w in (("unweighted", np.ones(op.p)), ("weighted", wv.w)):
        res = _solve(meas.A, meas.y, meas.eta, op, w, cfg.max_iters)
        out[method] = (nmse(res.xhat, sig.x), res.converged)
    return out


# -- drivers ---------------------------------------------------------------------------------


def phase_bounds(cfg: ExperimentConfig, op: AnalysisOperator) -> list[dict]:
    t95 = confidence_t(cfg.confidence)
    rows = []
    for s in cfg.s_grid:
        est = estimate_statdim(ConeSpec.unweighted(cfg.p, s), cfg.statdim_trials, cfg.seed)
        rows.append({
            "experiment": cfg.kind, "method": "unweighted", "s": s, "kappa": op.kappa,
            "delta": est.mean, "delta_se": est.std_error,
            "bound_t0": measurement_bound(op, est.mean, 0.0),
            "bound_t95": measurement_bound(op, est.mean, t95),
        })
    return rows


def run_phase_heatmap(cfg: ExperimentConfig):
    """Success rate of unweighted recovery over an (s, m) grid plus the bound curve.

    With ``bound_offsets`` set, the m values for each s are
    ``ceil(bound_t0(s)) + offset`` instead of the shared ``m_grid``.
    Returns ``(cells, bound_rows)``.
    """
    cfg.validate()
    op = make_operator(cfg)
    bounds = phase_bounds(cfg, op)
    grid = []
    for b in bounds:
        s = b["s"]
        if cfg.bound_offsets:
            ms = sorted({max(1, math.ceil(b["bound_t0"]) + int(o)) for o in cfg.bound_offsets})
        else:
            ms = list(cfg.m_grid)
        grid.extend((s, m) for m in ms)
    jobs = [(op, s, m, t, cfg.seed, cfg.success_tol, cfg.max_iters) for s, m in grid for t in range(cfg.trials)]
    outs = _run_jobs(_phase_trial, jobs, cfg.workers)
    cells = []
    for c, (s, m) in enumerate(grid):
        chunk = outs[c * cfg.trials:(c + 1) * cfg.trials]
        errors = [o[1] for o in chunk if o[0] == "error"]
        if errors:
            cells.append(CellResult(cfg.kind, "unweighted", s, m, "success_rate", float("nan"), 0,
                                    cfg.trials, 0, cfg.seed, "failed: " + errors[0]))
            continue
        succ = sum(o[1] for o in chunk)
        nonconv = sum(not o[2] for o in chunk)
        cells.append(CellResult(cfg.kind, "unweighted", s, m, "success_rate", succ / cfg.trials, succ,
                                cfg.trials, nonconv, cfg.seed))
    return cells, bounds


def _profile_bounds(cfg: ExperimentConfig, op: AnalysisOperator) -> list[dict]:
    counts = block_counts(cfg.p, cfg.block_sizes, cfg.alphas, cfg.s)
    omegas = solve_weights(cfg.alphas).block_weights
    t95 = confidence_t(cfg.confidence)
    rows = []
    for method, om in (("unweighted", np.ones(len(counts))), ("weighted", omegas)):
        est = estimate_statdim(block_cone(cfg.block_sizes, counts, om), cfg.statdim_trials, cfg.seed)
        rows.append({
            "experiment": cfg.kind, "method": method, "s": cfg.s, "kappa": op.kappa,
            "delta": est.mean, "delta_se": est.std_error,
            "bound_t0": measurement_bound(op, est.mean, 0.0),
            "bound_t95": measurement_bound(op, est.mean, t95),
        })
    return rows


def _paired_runs(cfg: ExperimentConfig, op: AnalysisOperator):
    jobs = [(op, cfg, m, t) for m in cfg.m_grid for t in range(cfg.trials)]
    outs = _run_jobs(_paired_trial, jobs, cfg.workers)
    return [(m, outs[i * cfg.trials:(i + 1) * cfg.trials]) for i, m in enumerate(cfg.m_grid)]


def run_success_curve(cfg: ExperimentConfig):
    """Paired success rates of unweighted and weighted recovery per m.

    Both methods see the same profile, signal and measurement matrix in
    every trial. Returns ``(cells, bound_rows)``.
    """
    cfg.validate()
    op = make_operator(cfg)
    cells = []
    for m, chunk in _paired_runs(cfg, op):
        for method in ("unweighted", "weighted"):
            succ = sum(o[method][0] <= cfg.success_tol for o in chunk)
            nonconv = sum(not o[method][1] for o in chunk)
            cells.append(CellResult(cfg.kind, method, cfg.s, m, "success_rate", succ / cfg.trials, succ,
                                    cfg.trials, nonconv, cfg.seed))
    return cells, _profile_bounds(cfg, op)


def run_nmse_curve(cfg: ExperimentConfig):
    """Mean NMSE of unweighted and weighted recovery per m.

    Noise is scaled to ``snr_db`` against the measurement power and the
    solver gets the oracle radius eta = ||noise||; ``snr_db=None`` runs
    noiseless with eta = 0.
    """
    cfg.validate()
    op = make_operator(cfg)
    cells = []
    for m, chunk in _paired_runs(cfg, op):
        for method in ("unweighted", "weighted"):
            vals = [o[method][0] for o in chunk]
            nonconv = sum(not o[method][1] for o in chunk)
            cells.append(CellResult(cfg.kind, method, cfg.s, m, "nmse_mean", math.fsum(vals) / len(vals), None,
                                    cfg.trials, nonconv, cfg.seed))
    return cells, _profile_bounds(cfg, op)


def image_blocks(coeffs_prior, scale, groups) -> list[np.ndarray]:
    """Approximation band as one block; each detail scale split by prior magnitude rank.

    ``groups`` are the cumulative rank fractions at which each scale is cut,
    e.g. [0.05, 0.15, 0.3, 0.5] gives five groups per scale.
    """
    blocks = [np.flatnonzero(scale == 0)]
    cuts = np.concatenate([[0.0], np.asarray(groups, dtype=float), [1.0]])
    for j in sorted(set(scale[scale > 0].tolist()), reverse=True):
        idx = np.flatnonzero(scale == j)
        order = idx[np.argsort(-np.abs(coeffs_prior[idx]), kind="stable")]
        pos = np.rint(cuts * idx.size).astype(int)
        blocks.extend(np.sort(order[a:b]) for a, b in zip(pos[:-1], pos[1:]) if b > a)
    return blocks


def run_image_experiment(cfg: ExperimentConfig, out_dir=None):
    """Phantom recovery from noisy Gaussian measurements, unweighted vs weighted.

    The analysis operator is the undecimated Haar frame; the true support is
    the top ``top_fraction`` of analysis coefficients. Support estimators are
    formed from a blurred copy of the phantom (a stand-in for an earlier,
    lower-quality scan) and their accuracies are measured against the truth.
    Returns ``(cells, bound_rows, images)``.
    """
    cfg.validate()
    N = cfg.image_size
    X = phantom(N)
    x = X.ravel()
    M, scale = haar_frame(N, cfg.levels)
    op = build_operator(M)
    coeffs = op.apply(x)
    s_tilde = int(round(cfg.top_fraction * op.p))
    support = np.sort(best_k_term_support(coeffs, s_tilde))
    prior = op.apply(gaussian_filter(X, cfg.prior_blur, mode="wrap").ravel())
    blocks = image_blocks(prior, scale, cfg.scale_groups)
    profile = compute_accuracies(blocks, support, op.p)
    wv = weights_from_profile(profile)

    m = int(round(cfg.m_ratio * op.n)) if not cfg.m_grid else int(cfg.m_grid[0])
    rng = substream(cfg.seed, _IMAGE, m)
    meas, _ = gaussian_measurements(x, m, rng, snr_db=cfg.snr_db)

    cells, images = [], {"truth": X}
    for method, w in (("unweighted", np.ones(op.p)), ("weighted", wv.w)):
        res = _solve(meas.A, meas.y, meas.eta, op, w, cfg.max_iters)
        Xhat = res.xhat.reshape(N, N)
        images[method] = Xhat
        cells.append(CellResult(cfg.kind, method, s_tilde, m, "psnr", psnr(Xhat, X), None, 1,
                                int(not res.converged), cfg.seed))
    cells.append(CellResult(cfg.kind, "truth", s_tilde, m, "psnr", psnr(X, X), None, 1, 0, cfg.seed))

    t95 = confidence_t(cfg.confidence)
    bounds = []
    counts = [int(np.isin(b, support).sum()) for b in profile.blocks]
    sizes = [b.size for b in profile.blocks]
    for method, om in (("unweighted", np.ones(len(sizes))), ("weighted", wv.block_weights)):
        est = estimate_statdim(block_cone(sizes, counts, om), cfg.image_statdim_trials, cfg.seed)
        bounds.append({
            "experiment": cfg.kind, "method": method, "s": s_tilde, "kappa": op.kappa,
            "delta": est.mean, "delta_se": est.std_error,
            "bound_t0": measurement_bound(op, est.mean, 0.0),
            "bound_t95": measurement_bound(op, est.mean, t95),
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lo, hi = float(X.min()), float(X.max())
        for name, img in images.items():
            write_pgm(out / f"{name}.pgm", img, lo, hi)
    return cells, bounds, images


def _error_bound_trial(job):
    op, cfg, m, trial, delta = job
    rng = substream(cfg.seed, _TRIAL, m, trial)
    sig = gen_analysis_sparse_signal(op, cfg.s, rng)
    meas, _ = gaussian_measurements(sig.x, m, rng, snr_db=cfg.snr_db)
    res = _solve(meas.A, meas.y, meas.eta, op, np.ones(op.p), cfg.max_iters)
    t = confidence_t(cfg.confidence)
    bound = error_bound(op, delta, m, t, meas.eta)
    err = float(np.linalg.norm(res.xhat - sig.x))
    return err, bound, res.converged


def run_error_bound(cfg: ExperimentConfig):
    """Fraction of noisy trials whose error respects the robust recovery bound.

    Uses unweighted recovery of exactly s-sparse signals, so the best
    s-term approximation is the signal itself.
    """
    cfg.validate()
    op = make_operator(cfg)
    est = estimate_statdim(ConeSpec.unweighted(cfg.p, cfg.s), cfg.statdim_trials, cfg.seed)
    cells = []
    for m in cfg.m_grid:
        outs = _run_jobs(_error_bound_trial, [(op, cfg, m, t, est.mean) for t in range(cfg.trials)], cfg.workers)
        held = sum(err <= bnd for err, bnd, _ in outs)
        nonconv = sum(not c for _, _, c in outs)
        cells.append(CellResult(cfg.kind, "unweighted", cfg.s, m, "bound_hold_rate", held / cfg.trials, held,
                                cfg.trials, nonconv, cfg.seed))
    t95 = confidence_t(cfg.confidence)
    bounds = [{
        "experiment": cfg.kind, "method": "unweighted", "s": cfg.s, "kappa": op.kappa,
        "delta": est.mean, "delta_se": est.std_error,
        "bound_t0": measurement_bound(op, est.mean, 0.0),
        "bound_t95": measurement_bound(op, est.mean, t95),
    }]
    return cells, bounds


# -- output ----------------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _write_csv(path, columns, rows) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for r in rows:
        wr.writerow([_fmt(r[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def environment_versions() -> dict:
    return {"wl1analysis": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def write_outputs(out_dir, cfg: ExperimentConfig, cells, bounds) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "cells.csv", CELL_COLUMNS, [c.row() for c in cells])
    _write_csv(out / "bound.csv", BOUND_COLUMNS, bounds)
    meta = {
        "config": cfg.to_dict(),
        "versions": environment_versions(),
        "success_definition": f"NMSE <= {cfg.success_tol!r} (noiseless recovery)",
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Dispatch on ``cfg.kind`` and optionally write cells.csv, bound.csv and meta.json."""
    cfg.validate()
    if cfg.kind == "phase_heatmap":
        cells, bounds = run_phase_heatmap(cfg)
    elif cfg.kind == "success_curve":
        cells, bounds = run_success_curve(cfg)
    elif cfg.kind == "nmse_curve":
        cells, bounds = run_nmse_curve(cfg)
    elif cfg.kind == "image":
        cells, bounds, _ = run_image_experiment(cfg, out_dir)
    else:
        cells, bounds = run_error_bound(cfg)
    if out_dir is not None:
        write_outputs(out_dir, cfg, cells, bounds)
    return cells, bounds


def smallest_m(cells, method: str, level: float = 0.5):
    """Smallest m whose success rate reaches ``level`` for ``method`` (None if never)."""
    ms = sorted(c.m for c in cells if c.method == method and c.status == "ok" and c.value >= level)
    return ms[0] if ms else None
