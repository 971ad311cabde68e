"""Per-block weights from support-estimate accuracies.

Each block weight solves the scalar equation

    alpha * omega = (1 - alpha) * J(omega),
    J(omega) = sqrt(2/pi) * int_omega^inf (u - omega) exp(-u^2/2) du,

whose left side increases and right side decreases in omega, so the root
on [0, inf) is unique.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx

from .core import PriorProfile, WeightVector

OMEGA_CAP = 20.0
DEFAULT_TOL = 1e-12

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def shrinkage_integral(omega):
    """Closed form of J(omega) = sqrt(2/pi) exp(-omega^2/2) - omega erfc(omega/sqrt 2).

    Written with the scaled complementary error function so the Gaussian
    factor is pulled out and the result stays accurate in the tail.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("omega must be nonnegative")
    out = np.exp(-0.5 * omega**2) * (_SQRT_2_OVER_PI - omega * erfcx(omega / _SQRT2))
    return float(out) if out.ndim == 0 else out


def weight_residual(omega: float, alpha: float) -> float:
    return alpha * omega - (1.0 - alpha) * shrinkage_integral(omega)


def solve_block_weight(alpha: float, tol: float = DEFAULT_TOL) -> float:
    """Root of ``alpha*omega = (1-alpha)*J(omega)`` by bracketed bisection.

    ``alpha = 1`` gives 0 and ``alpha = 0`` gives :data:`OMEGA_CAP`.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if alpha == 1.0:
        return 0.0
    if alpha == 0.0:
        return OMEGA_CAP

    lo, hi = 0.0, 1.0
    while weight_residual(hi, alpha) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        r = weight_residual(mid, alpha)
        if abs(r) <= tol or mid in (lo, hi):
            return mid
        if r < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class WeightSolution:
    block_weights: np.ndarray
    residuals: np.ndarray
    capped: np.ndarray


def solve_weights(accuracies, tol: float = DEFAULT_TOL) -> WeightSolution:
    alphas = np.asarray(accuracies, dtype=float).ravel()
    omegas = np.array([solve_block_weight(a, tol) for a in alphas])
    capped = alphas == 0.0
    res = np.array([0.0 if c else abs(weight_residual(o, a)) for o, a, c in zip(omegas, alphas, capped)])
    return WeightSolution(omegas, res, capped)


def weights_from_profile(profile: PriorProfile, tol: float = DEFAULT_TOL) -> WeightVector:
    sol = solve_weights(profile.accuracies, tol)
    return WeightVector.from_blocks(profile.blocks, sol.block_weights)
