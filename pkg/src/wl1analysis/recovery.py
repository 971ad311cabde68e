"""Primal-dual solver for weighted l1-analysis recovery.

Solves

    min_z  sum_i w_i |(Omega z)_i|   s.t.  ||y - A z||_2 <= eta

with a Chambolle-Pock iteration. The primal variable is whitened,
z = R v with R = (Omega^T Omega)^{-1/2}, so the operator seen by the
splitting, K = Omega R, has orthonormal columns and the iteration speed
does not degrade with the conditioning of Omega. The weighted l1 term is
handled in the dual (projection onto the box |q_i| <= w_i); the data-fit
constraint is the primal prox, an exact projection onto
{v : ||B v - y|| <= eta}, B = A R, computed from the SVD of B.
"""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear

from .core import AnalysisOperator, MeasurementSet, WeightVector
from .errors import NotConverged, ShapeError


@dataclass(frozen=True)
class RecoveryProblem:
    meas: MeasurementSet
    op: AnalysisOperator
    weights: WeightVector | np.ndarray
    eta: float | None = None

    def __post_init__(self):
        A = np.asarray(self.meas.A, dtype=float)
        y = np.asarray(self.meas.y, dtype=float)
        if A.ndim != 2 or y.shape != (A.shape[0],):
            raise ShapeError(f"A is {A.shape} but y is {y.shape}")
        if A.shape[1] != self.op.n:
            raise ShapeError(f"A has {A.shape[1]} columns, operator expects n={self.op.n}")
        if self.w.shape != (self.op.p,):
            raise ShapeError(f"weights must have length p={self.op.p}")
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative")
        if self.radius < 0:
            raise ValueError("eta must be nonnegative")

    @property
    def w(self) -> np.ndarray:
        w = self.weights.w if isinstance(self.weights, WeightVector) else self.weights
        return np.asarray(w, dtype=float)

    @property
    def radius(self) -> float:
        return float(self.meas.eta if self.eta is None else self.eta)

    def objective(self, z) -> float:
        return float(np.dot(self.w, np.abs(self.op.apply(z))))


@dataclass
class SolverConfig:
    max_iters: int = 20000
    tol_feas: float | None = None  # default 1e-6 * (1 + ||y||)
    tol_obj: float = 1e-8
    tol_gap: float = 1e-7
    window: int = 50
    step_ratio: float = 0.01  # tau / sigma balance; tau * sigma * ||K||^2 = 1
    record: bool = False
    strict: bool = False


@dataclass
class RecoveryResult:
    xhat: np.ndarray
    iterations: int
    primal_residual: float
    objective: float
    gap: float
    converged: bool
    history: list = field(default_factory=list, repr=False)


def weighted_soft_threshold(v, thresh):
    """sign(v) * max(|v| - thresh, 0), elementwise."""
    v = np.asarray(v, dtype=float)
    thresh = np.asarray(thresh, dtype=float)
    if np.any(thresh < 0):
        raise ValueError("thresholds must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def _whitener(op: AnalysisOperator) -> np.ndarray:
    M = op.matrix
    gram = (M.T @ M).toarray() if sp.issparse(M) else M.T @ M
    scale = np.trace(gram) / op.n
    if np.allclose(gram, scale * np.eye(op.n), rtol=0, atol=1e-12 * scale):
        return np.eye(op.n) / math.sqrt(scale)
    ev, V = np.linalg.eigh(gram)
    return (V / np.sqrt(ev)) @ V.T


class _BallProjector:
    """Euclidean projection onto {v : ||B v - y|| <= eta}."""

    def __init__(self, B, y, eta):
        U, s, Vt = np.linalg.svd(B, full_matrices=False)
        r = int(np.sum(s > 1e-12 * s[0])) if s.size and s[0] > 0 else 0
        self.U, self.s, self.Vt = U[:, :r], s[:r], Vt[:r]
        self.yt = self.U.T @ y
        self.perp2 = max(float(y @ y - self.yt @ self.yt), 0.0)
        self.eta = eta
        self.target = eta * eta - self.perp2

    def __call__(self, z):
        a0 = self.Vt @ z
        res = self.s * a0 - self.yt
        if self.target <= 0:
            a = self.yt / self.s
        else:
            nrm2 = float(res @ res)
            if nrm2 <= self.target:
                return z
            lam = self._multiplier(res)
            a = (a0 + lam * self.s * self.yt) / (1.0 + lam * self.s**2)
        return z + self.Vt.T @ (a - a0)

    def _multiplier(self, res):
        # Newton on 1/||res(lam)|| - 1/sqrt(target); monotone from lam = 0
        s2 = self.s**2
        c = math.sqrt(self.target)
        lam = 0.0
        for _ in range(100):
            d = 1.0 + lam * s2
            n2 = float(np.sum((res / d) ** 2))
            n = math.sqrt(n2)
            if abs(n - c) <= 1e-14 * c:
                break
            dn2 = -2.0 * float(np.sum(res**2 * s2 / d**3))
            psi = 1.0 / n - 1.0 / c
            dpsi = -0.5 * dn2 / (n2 * n)
            step = psi / dpsi
            lam -= step
            if abs(step) <= 1e-15 * max(lam, 1.0):
                break
        return max(lam, 0.0)


def solve(problem: RecoveryProblem, cfg: SolverConfig | None = None) -> RecoveryResult:
    """Approximately solve the weighted l1-analysis program.

    Stops once the iterate is feasible, the objective has changed by less
    than ``tol_obj`` (relative) over the last ``window`` iterations, and the
    normalised primal-dual residual is below ``tol_gap``. Otherwise returns
    the best iterate after ``max_iters`` with ``converged=False`` (or raises
    :class:`NotConverged` when ``cfg.strict``).
    """
    cfg = cfg or SolverConfig()
    op = problem.op
    A = np.asarray(problem.meas.A, dtype=float)
    y = np.asarray(problem.meas.y, dtype=float)
    w = problem.w
    eta = problem.radius
    tol_feas = cfg.tol_feas if cfg.tol_feas is not None else 1e-6 * (1.0 + np.linalg.norm(y))

    R = _whitener(op)
    Kd = op.matrix @ R
    K = sp.csr_matrix(Kd) if sp.issparse(op.matrix) else np.asarray(Kd)
    KT = K.T.tocsr() if sp.issparse(K) else K.T
    B = A @ R
    proj = _BallProjector(B, y, eta)

    # K = Omega R has orthonormal columns, so ||K|| = 1
    tau = cfg.step_ratio
    sigma = 1.0 / cfg.step_ratio

    v = proj(np.zeros(op.n))
    Kv = K @ v
    Kvb = Kv.copy()
    q = np.zeros(op.p)

    objs = deque(maxlen=cfg.window + 1)
    best_obj, best_v = math.inf, v.copy()
    history = []
    gap = math.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        u = q + sigma * Kvb
        q_new = u - weighted_soft_threshold(u, w)
        v_new = proj(v - tau * (KT @ q_new))
        Kv_new = K @ v_new

        dv, dq, dKv = v - v_new, q - q_new, Kv - Kv_new
        primal_res = np.linalg.norm(dv / tau - KT @ dq)
        dual_res = np.linalg.norm(dq / sigma - dKv)

        Kvb = 2.0 * Kv_new - Kv
        v, q, Kv = v_new, q_new, Kv_new

        obj = float(np.dot(w, np.abs(Kv)))
        objs.append(obj)
        if obj < best_obj:
            best_obj, best_v = obj, v.copy()
        if cfg.record:
            history.append(best_obj)

        scale = max(np.linalg.norm(w), 1e-300)
        gap = (primal_res + dual_res) / scale
        if len(objs) == objs.maxlen:
            change = abs(objs[-1] - objs[0]) / max(abs(objs[-1]), 1e-300)
            if change <= cfg.tol_obj and gap <= cfg.tol_gap:
                converged = True
                break

    vfinal = v if converged else best_v
    xhat = R @ vfinal
    feas = float(np.linalg.norm(y - A @ xhat) - eta)
    converged = converged and feas <= tol_feas
    result = RecoveryResult(
        xhat=xhat,
        iterations=it,
        primal_residual=feas,
        objective=problem.objective(xhat),
        gap=float(gap),
        converged=converged,
        history=history,
    )
    if not converged:
        if cfg.strict:
            raise NotConverged(f"no convergence after {it} iterations", result)
        warnings.warn(f"solver stopped after {it} iterations without converging", RuntimeWarning, stacklevel=2)
    return result


@dataclass(frozen=True)
class CertificateReport:
    feasibility: float
    subgradient_residual: float
    complementary_slackness: float
    multiplier: np.ndarray = field(repr=False)


def certify(problem: RecoveryProblem, xhat, support_tol: float = 1e-6) -> CertificateReport:
    """KKT residuals of a candidate solution.

    The subgradient residual is
    ``min ||Omega^T u + A^T lam||`` over ``u`` in ``w * subdiff ||.||_1(Omega xhat)``
    and admissible multipliers ``lam``: free when ``eta = 0``,
    ``mu * (A xhat - y)`` with ``mu >= 0`` on an active ball constraint, and
    zero on an inactive one. Solved as a bounded least-squares problem.
    """
    if isinstance(xhat, RecoveryResult):
        xhat = xhat.xhat
    xhat = np.asarray(xhat, dtype=float)
    A = np.asarray(problem.meas.A, dtype=float)
    y = np.asarray(problem.meas.y, dtype=float)
    Om = problem.op.dense()
    w = problem.w
    eta = problem.radius

    r = A @ xhat - y
    rn = float(np.linalg.norm(r))
    feas = max(rn - eta, 0.0)

    c = Om @ xhat
    cmax = np.abs(c).max(initial=0.0)
    on = np.abs(c) > support_tol * max(cmax, 1e-300)
    fixed = Om[on].T @ (w[on] * np.sign(c[on]))

    cols = [Om[~on].T]
    lb = [-w[~on]]
    ub = [w[~on]]
    slack_col = None
    if eta == 0.0:
        cols.append(A.T)
        lb.append(np.full(A.shape[0], -np.inf))
        ub.append(np.full(A.shape[0], np.inf))
    elif rn >= eta * (1 - 1e-6) and rn > 0:
        slack_col = (A.T @ r)[:, None]
        cols.append(slack_col)
        lb.append(np.zeros(1))
        ub.append(np.full(1, np.inf))
    M = np.hstack(cols)
    lb, ub = np.concatenate(lb), np.concatenate(ub)
    if M.shape[1]:
        sol = lsq_linear(M, -fixed, bounds=(lb, ub), method="bvls", tol=1e-14, lsmr_tol="auto")
        coef = sol.x
        resid = float(np.linalg.norm(M @ coef + fixed))
    else:
        coef = np.zeros(0)
        resid = float(np.linalg.norm(fixed))

    k = int((~on).sum())
    if eta == 0.0:
        lam = coef[k:]
        slack = 0.0
    elif slack_col is not None:
        mu = float(coef[k])
        lam = mu * r
        slack = mu * abs(rn - eta)
    else:
        lam = np.zeros(A.shape[0])
        slack = 0.0
    return CertificateReport(feas, resid, slack, lam)
