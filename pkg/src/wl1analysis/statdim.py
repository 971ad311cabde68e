"""Monte Carlo statistical dimension of weighted l1 descent cones.

For a support S with signs and weights w, the polar of the descent cone is
the conic hull of ``w * subdiff ||.||_1``, so for a Gaussian sample g

    dist^2(g, polar) = min_{t >= 0} f(t),
    f(t) = sum_{i in S} (g_i - t w_i sign_i)^2 + sum_{i not in S} (|g_i| - t w_i)_+^2.

f is convex and piecewise quadratic in t with breakpoints |g_i| / w_i off
the support, so the minimiser is found exactly by locating the segment
where f' changes sign.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import AnalysisOperator, WeightVector, analysis_support

DEFAULT_TRIALS = 100_000
CHUNK = 2048


@dataclass(frozen=True)
class ConeSpec:
    p: int
    support: np.ndarray
    signs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int).ravel()
        signs = np.asarray(self.signs, dtype=float).ravel()
        w = self.weights.w if isinstance(self.weights, WeightVector) else self.weights
        w = np.asarray(w, dtype=float).ravel()
        if signs.shape != support.shape:
            raise ValueError("one sign per support index required")
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +1 or -1")
        if w.shape != (self.p,):
            raise ValueError(f"weights must have length {self.p}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if support.size and (support.min() < 0 or support.max() >= self.p or np.unique(support).size != support.size):
            raise ValueError("support must hold distinct indices in [0, p)")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_coefficients(cls, coeffs, weights=None) -> "ConeSpec":
        """Cone at the analysis coefficients ``coeffs`` (support and signs read off)."""
        coeffs = np.asarray(coeffs, dtype=float)
        supp = analysis_support(coeffs)
        if weights is None:
            weights = np.ones(coeffs.size)
        return cls(coeffs.size, supp, np.sign(coeffs[supp]), weights)

    @classmethod
    def unweighted(cls, p: int, s: int) -> "ConeSpec":
        """Plain l1 cone at a vector supported on the first ``s`` indices (all signs +)."""
        return cls(p, np.arange(s), np.ones(s), np.ones(p))


@dataclass(frozen=True)
class StatDimEstimate:
    mean: float
    std_error: float
    trials: int
    seed: int

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "trials": self.trials, "seed": self.seed}


def _dist2_batch(G: np.ndarray, cone: ConeSpec) -> np.ndarray:
    """Row-wise ``min_t f(t)`` for a (trials, p) array of samples."""
    w = cone.weights
    on = np.zeros(cone.p, dtype=bool)
    on[cone.support] = True
    off = np.flatnonzero(~on)

    a = G[:, cone.support] * cone.signs
    wS = w[cone.support]
    C = a @ wS
    D = float(wS @ wS)

    absg = np.abs(G[:, off])
    woff = w[off]
    live = woff > 0
    gl, wl = absg[:, live], woff[live]
    T, q = gl.shape

    if q:
        b = gl / wl
        order = np.argsort(b, axis=1, kind="stable")
        b = np.take_along_axis(b, order, axis=1)
        ws = wl[order]
        gs = np.take_along_axis(gl, order, axis=1)
        # suffix sums over breakpoints still active on each segment
        W = np.zeros((T, q + 1))
        V = np.zeros((T, q + 1))
        W[:, :q] = np.cumsum((ws * ws)[:, ::-1], axis=1)[:, ::-1]
        V[:, :q] = np.cumsum((ws * gs)[:, ::-1], axis=1)[:, ::-1]
        left = np.zeros((T, q + 1))
        left[:, 1:] = b
    else:
        W = np.zeros((T, 1))
        V = np.zeros((T, 1))
        left = np.zeros((T, 1))

    # half the slope of f at the left end of each segment; nondecreasing in k
    slope = left * (D + W) - (C[:, None] + V)
    neg = slope < 0
    k0 = neg.sum(axis=1) - 1
    rows = np.arange(T)
    has_root = k0 >= 0
    kk = np.where(has_root, k0, 0)
    num = C + V[rows, kk]
    den = D + W[rows, kk]
    t = np.where(has_root & (den > 0), num / np.where(den > 0, den, 1.0), 0.0)
    t = np.maximum(t, 0.0)

    tt = t[:, None]
    val = np.sum((a - tt * wS) ** 2, axis=1)
    val += np.sum(np.maximum(absg - tt * woff, 0.0) ** 2, axis=1)
    return val


def dist2_to_cone(g, cone: ConeSpec) -> float:
    """Squared distance from ``g`` to the polar of the weighted l1 descent cone."""
    g = np.asarray(g, dtype=float).reshape(1, -1)
    if g.shape[1] != cone.p:
        raise ValueError(f"g must have length {cone.p}")
    return float(_dist2_batch(g, cone)[0])


def _chunk_values(cone: ConeSpec, seed: int, index: int, size: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    G = np.random.default_rng(ss).standard_normal((size, cone.p))
    return _dist2_batch(G, cone)


def estimate_statdim(cone: ConeSpec, trials: int = DEFAULT_TRIALS, seed: int = 42, workers: int = 1) -> StatDimEstimate:
    """Mean of ``dist2_to_cone`` over standard Gaussian samples.

    Samples are drawn in fixed-size chunks, each from its own substream
    keyed by ``(seed, chunk index)``, so the result does not depend on
    ``workers``. The reduction uses exactly rounded summation.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    nchunks = -(-trials // CHUNK)
    sizes = [min(CHUNK, trials - i * CHUNK) for i in range(nchunks)]
    jobs = [(cone, seed, i, sz) for i, sz in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda j: _chunk_values(*j), jobs))
    else:
        parts = [_chunk_values(*j) for j in jobs]
    vals = np.concatenate(parts)
    mean = math.fsum(vals) / trials
    if trials > 1:
        var = math.fsum((vals - mean) ** 2) / (trials - 1)
        se = math.sqrt(var / trials)
    else:
        se = float("nan")
    return StatDimEstimate(mean, se, trials, seed)


def _kappa(op) -> float:
    return float(op.kappa) if isinstance(op, AnalysisOperator) else float(op)


def confidence_t(prob: float) -> float:
    """The t for which 1 - exp(-t^2/2) equals ``prob``."""
    if not 0 <= prob < 1:
        raise ValueError("prob must lie in [0, 1)")
    return math.sqrt(-2.0 * math.log1p(-prob))


def measurement_bound(op, delta: float, t: float = 0.0) -> float:
    """Measurement threshold (kappa sqrt(delta) + t)^2 + 1.

    ``op`` may be an :class:`AnalysisOperator` or a bare condition number.
    Recovery is guaranteed with probability 1 - exp(-t^2/2) for m strictly
    above the returned value.
    """
    if delta < 0 or t < 0:
        raise ValueError("delta and t must be nonnegative")
    return (_kappa(op) * math.sqrt(delta) + t) ** 2 + 1.0


def error_bound(op, delta_ap: float, m: int, t: float, eta: float) -> float:
    """Robust recovery error bound 2 eta / (sqrt(m-1) - kappa sqrt(delta_ap) - t)_+.

    Returns ``inf`` when the denominator is not positive.
    """
    if m < 2 or eta < 0 or delta_ap < 0 or t < 0:
        raise ValueError("need m >= 2 and nonnegative eta, delta_ap, t")
    den = math.sqrt(m - 1) - _kappa(op) * math.sqrt(delta_ap) - t
    if den <= 1e-12 * math.sqrt(m - 1):
        return math.inf
    return 2.0 * eta / den
