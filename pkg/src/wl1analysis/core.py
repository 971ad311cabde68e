"""Operators, analysis-sparse signals, prior profiles and recovery metrics.

Index sets are 0-based numpy integer arrays throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateDraw,
    InfeasibleSparsity,
    PartitionError,
    RankDeficient,
    ShapeError,
    ZeroReference,
)

RANK_TOL = 1e-10
ZERO_TOL = 1e-9


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class AnalysisOperator:
    """A p x n analysis operator with cached spectral data.

    ``matrix`` is either a dense array or a scipy sparse matrix; both are
    explicit representations of the same linear map.
    """

    matrix: np.ndarray | sp.spmatrix = field(repr=False)
    p: int
    n: int
    op_norm: float
    pinv_norm: float
    kappa: float

    def apply(self, x):
        return self.matrix @ x

    def adjoint(self, v):
        return self.matrix.T @ v

    def dense(self) -> np.ndarray:
        if sp.issparse(self.matrix):
            return self.matrix.toarray()
        return self.matrix

    def rows(self, idx) -> np.ndarray:
        """Dense submatrix of the rows in ``idx``."""
        sub = self.matrix[np.asarray(idx, dtype=int)]
        return sub.toarray() if sp.issparse(sub) else sub


def _singular_values(matrix) -> np.ndarray:
    if sp.issparse(matrix):
        gram = (matrix.T @ matrix).toarray()
        ev = np.linalg.eigvalsh(gram)
        return np.sqrt(np.clip(ev[::-1], 0.0, None))
    return np.linalg.svd(matrix, compute_uv=False)


def build_operator(matrix, rank_tol: float = RANK_TOL) -> AnalysisOperator:
    """Wrap ``matrix`` as an :class:`AnalysisOperator`.

    Raises
    ------
    ShapeError
        If the matrix is not two-dimensional or has fewer rows than columns.
    RankDeficient
        If the smallest singular value is below ``rank_tol`` times the largest.
    """
    if sp.issparse(matrix):
        matrix = sp.csr_matrix(matrix, dtype=float)
        finite = np.all(np.isfinite(matrix.data))
    else:
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ShapeError(f"operator must be 2-D, got shape {matrix.shape}")
        finite = np.all(np.isfinite(matrix))
    if not finite:
        raise ValueError("operator has non-finite entries")
    p, n = matrix.shape
    if p < n:
        raise ShapeError(f"analysis operator needs p >= n, got {p}x{n}")
    sv = _singular_values(matrix)
    smax, smin = float(sv[0]), float(sv[n - 1])
    if smax == 0.0 or smin <= rank_tol * smax:
        raise RankDeficient(f"sigma_min={smin:.3e} <= {rank_tol:g} * sigma_max={smax:.3e}")
    if not sp.issparse(matrix):
        matrix.setflags(write=False)
    return AnalysisOperator(matrix, p, n, smax, 1.0 / smin, smax / smin)


def controlled_kappa_operator(p: int, n: int, kappa: float, seed=None, sigma_max: float = 1.0) -> AnalysisOperator:
    """Random p x n operator whose singular values form a log-linear ramp.

    The singular vectors come from the SVD of a Gaussian matrix; the
    singular values run geometrically from ``sigma_max`` down to
    ``sigma_max / kappa``.
    """
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    rng = _as_rng(seed)
    G = rng.standard_normal((p, n))
    U, _, Vt = np.linalg.svd(G, full_matrices=False)
    sv = sigma_max * np.geomspace(1.0, 1.0 / kappa, n)
    return build_operator((U * sv) @ Vt)


def cosine_frame(p: int, n: int) -> AnalysisOperator:
    """Real redundant frame of ``p`` cosine atoms sampled on ``n`` points.

    Row k is cos(pi k (j + 1/2) / p), i.e. an oversampled DCT-II, with each
    row normalised to unit norm.
    """
    k = np.arange(p)[:, None]
    j = np.arange(n)[None, :]
    M = np.cos(np.pi * k * (j + 0.5) / p)
    M /= np.linalg.norm(M, axis=1, keepdims=True)
    return build_operator(M)


@dataclass(frozen=True)
class AnalysisSparseSignal:
    x: np.ndarray
    support: np.ndarray
    s: int


def analysis_support(coeffs, tol: float = ZERO_TOL) -> np.ndarray:
    """Indices where ``|coeffs|`` exceeds ``tol * max|coeffs|``."""
    c = np.abs(np.asarray(coeffs, dtype=float))
    cmax = c.max(initial=0.0)
    if cmax == 0.0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(c > tol * cmax)


def _cosparse_basis(op: AnalysisOperator, support) -> np.ndarray:
    """Orthonormal basis of the null space of the rows outside ``support``."""
    cosupport = np.setdiff1d(np.arange(op.p), support)
    if cosupport.size == 0:
        return np.eye(op.n)
    _, sv, Vt = np.linalg.svd(op.rows(cosupport), full_matrices=True)
    rank = int(np.sum(sv > RANK_TOL * sv[0])) if sv.size and sv[0] > 0 else 0
    return Vt[rank:].T


def signal_on_support(op: AnalysisOperator, support, seed=None, max_retries: int = 20) -> AnalysisSparseSignal:
    """Unit-norm x with analysis support exactly ``support``.

    x is a Gaussian combination of an orthonormal basis of the null space of
    the rows outside the support; draws that leave an extra zero on the
    support are redrawn.
    """
    support = np.unique(np.asarray(support, dtype=int))
    s = support.size
    rng = _as_rng(seed)
    basis = _cosparse_basis(op, support)
    if basis.shape[1] == 0:
        if s == 0:
            return AnalysisSparseSignal(np.zeros(op.n), support, 0)
        raise InfeasibleSparsity(
            f"rows outside a size-{s} support have trivial null space (p={op.p}, n={op.n})"
        )
    for _ in range(max_retries):
        x = basis @ rng.standard_normal(basis.shape[1])
        x /= np.linalg.norm(x)
        if np.array_equal(analysis_support(op.apply(x)), support):
            return AnalysisSparseSignal(x, support, s)
    raise DegenerateDraw(f"no draw with exactly {s} analysis nonzeros after {max_retries} tries")


def gen_analysis_sparse_signal(op: AnalysisOperator, s: int, seed=None, max_retries: int = 20) -> AnalysisSparseSignal:
    """Draw a unit-norm x whose analysis coefficients have exactly ``s`` nonzeros.

    The support is uniform among size-``s`` subsets of the analysis indices.
    """
    if not 0 <= s <= op.p:
        raise ValueError(f"s must lie in [0, {op.p}], got {s}")
    rng = _as_rng(seed)
    support = np.sort(rng.choice(op.p, size=s, replace=False))
    return signal_on_support(op, support, rng, max_retries)


@dataclass(frozen=True)
class PriorProfile:
    """Partition of the analysis indices with per-block accuracy and size."""

    blocks: tuple
    accuracies: np.ndarray
    sizes: np.ndarray

    @property
    def p(self) -> int:
        return int(sum(len(b) for b in self.blocks))

    @property
    def L(self) -> int:
        return len(self.blocks)


def check_partition(blocks: Sequence, p: int | None = None) -> tuple:
    blocks = tuple(np.asarray(b, dtype=int).ravel() for b in blocks)
    if not blocks:
        raise PartitionError("no blocks given")
    allidx = np.concatenate(blocks)
    if p is None:
        p = allidx.size
    if any(b.size == 0 for b in blocks):
        raise PartitionError("empty block")
    if allidx.size != p or not np.array_equal(np.sort(allidx), np.arange(p)):
        raise PartitionError(f"blocks do not partition {{0..{p - 1}}} exactly")
    return blocks


def compute_accuracies(blocks: Sequence, support, p: int | None = None) -> PriorProfile:
    """Accuracy |P_i & S| / |P_i| and normalised size |P_i| / p per block."""
    blocks = check_partition(blocks, p)
    p = sum(b.size for b in blocks)
    support = np.asarray(support, dtype=int)
    insupp = np.zeros(p, dtype=bool)
    insupp[support] = True
    counts = np.array([insupp[b].sum() for b in blocks], dtype=float)
    lens = np.array([b.size for b in blocks], dtype=float)
    return PriorProfile(blocks, counts / lens, lens / p)


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    block_weights: np.ndarray

    @classmethod
    def from_blocks(cls, blocks: Sequence, block_weights, p: int | None = None) -> "WeightVector":
        blocks = check_partition(blocks, p)
        omega = np.asarray(block_weights, dtype=float)
        if omega.shape != (len(blocks),):
            raise ShapeError("one weight per block required")
        if np.any(omega < 0) or not np.any(omega > 0):
            raise ValueError("weights must be nonnegative with at least one positive entry")
        w = np.empty(sum(b.size for b in blocks))
        for b, o in zip(blocks, omega):
            w[b] = o
        return cls(w, omega)

    @classmethod
    def uniform(cls, p: int, value: float = 1.0) -> "WeightVector":
        return cls(np.full(p, float(value)), np.array([float(value)]))


@dataclass(frozen=True)
class MeasurementSet:
    A: np.ndarray
    y: np.ndarray
    eta: float = 0.0


def gaussian_measurements(x, m: int, seed=None, snr_db: float | None = None) -> tuple[MeasurementSet, np.ndarray]:
    """Measure ``x`` with an m x n standard Gaussian matrix.

    With ``snr_db`` set, Gaussian noise is scaled so that
    ``||Ax||^2 / ||e||^2`` hits the target and ``eta`` is ``||e||``.
    Returns the measurement set and the noise vector.
    """
    rng = _as_rng(seed)
    x = np.asarray(x, dtype=float)
    A = rng.standard_normal((m, x.size))
    clean = A @ x
    noise = np.zeros(m)
    if snr_db is not None:
        e = rng.standard_normal(m)
        scale = np.linalg.norm(clean) / (np.linalg.norm(e) * 10 ** (snr_db / 20))
        noise = e * scale
    return MeasurementSet(A, clean + noise, float(np.linalg.norm(noise))), noise


def best_k_term_support(coeffs, k: int) -> np.ndarray:
    """Indices of the ``k`` largest-magnitude entries, lowest index first on ties.

    The result is ordered by decreasing magnitude.
    """
    c = np.abs(np.asarray(coeffs, dtype=float))
    if not 0 <= k <= c.size:
        raise ValueError(f"k must lie in [0, {c.size}], got {k}")
    order = np.argsort(-c, kind="stable")
    return order[:k]


def nmse(xhat, x) -> float:
    """Relative error ||xhat - x||_2 / ||x||_2."""
    x = np.asarray(x, dtype=float)
    ref = np.linalg.norm(x)
    if ref == 0:
        raise ZeroReference("reference signal has zero norm")
    return float(np.linalg.norm(np.asarray(xhat, dtype=float) - x) / ref)


def psnr(Xhat, X) -> float:
    """Peak SNR in dB; ``inf`` when the images coincide."""
    X = np.asarray(X, dtype=float)
    err = np.linalg.norm(X - np.asarray(Xhat, dtype=float))
    if err == 0:
        return float("inf")
    return float(20 * np.log10(np.abs(X).max() * np.sqrt(X.size) / err))
