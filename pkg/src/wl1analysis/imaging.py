"""Phantom images, an undecimated Haar frame and PGM output."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

# (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees)
_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def phantom(size: int = 64) -> np.ndarray:
    """Piecewise-constant ellipse phantom on a ``size`` x ``size`` grid in [-1, 1]^2."""
    c = (np.arange(size) + 0.5) / size * 2 - 1
    X, Y = np.meshgrid(c, -c)
    img = np.zeros((size, size))
    for amp, a, b, x0, y0, deg in _ELLIPSES:
        th = np.deg2rad(deg)
        xr = (X - x0) * np.cos(th) + (Y - y0) * np.sin(th)
        yr = -(X - x0) * np.sin(th) + (Y - y0) * np.cos(th)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    # overlapping +/- intensities can leave -1e-17 where they should cancel
    return np.clip(img, 0.0, None)


def _haar_pair(size: int, shift: int):
    I = sp.identity(size, format="csr")
    S = sp.csr_matrix((np.ones(size), (np.arange(size), (np.arange(size) + shift) % size)), shape=(size, size))
    return (I + S) * 0.5, (I - S) * 0.5


def haar_frame(size: int, levels: int = 2):
    """Undecimated periodic Haar frame for ``size`` x ``size`` images.

    Returns the sparse analysis matrix (rows ordered coarse approximation,
    then detail bands from the coarsest level to the finest) and an integer
    array giving each row's scale: 0 for the approximation band, ``j`` for
    the details at level ``j``. The frame is tight with bound 1 and has
    redundancy ``3 * levels + 1``.
    """
    n = size * size
    chain = sp.identity(size, format="csr")
    details, scales = [], []
    for j in range(1, levels + 1):
        lo, hi = _haar_pair(size, 2 ** (j - 1))
        L, H = (lo @ chain).tocsr(), (hi @ chain).tocsr()
        bands = [sp.kron(H, L), sp.kron(L, H), sp.kron(H, H)]
        details.append(sp.vstack(bands, format="csr"))
        scales.append(np.full(3 * n, j))
        chain = L
    approx = sp.kron(chain, chain, format="csr")
    M = sp.vstack([approx] + details[::-1], format="csr")
    scale = np.concatenate([np.zeros(n, dtype=int)] + scales[::-1])
    M.eliminate_zeros()
    return M, scale


def write_pgm(path, img, lo: float | None = None, hi: float | None = None) -> None:
    """Write a binary 8-bit portable graymap, linearly mapping [lo, hi] to [0, 255]."""
    img = np.asarray(img, dtype=float)
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    data = np.clip(np.rint((img - lo) / span * 255), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(Path(path), "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
