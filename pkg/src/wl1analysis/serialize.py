"""CSV/JSON containers for operators, signals, partitions and vectors.

Matrices and vectors are plain CSV (row-major, one matrix row per line,
``%.17g`` so values round-trip exactly). Metadata goes into a JSON sidecar
next to the CSV file, named ``<file>.json``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import AnalysisOperator, AnalysisSparseSignal, PriorProfile, build_operator, check_partition

FMT = "%.17g"


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def save_matrix(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    np.savetxt(path, M, delimiter=",", fmt=FMT)


def load_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float, ndmin=2))


def save_vector(path, v) -> None:
    np.savetxt(path, np.asarray(v, dtype=float).reshape(-1, 1), delimiter=",", fmt=FMT)


def load_vector(path) -> np.ndarray:
    """Read a vector stored either as one column or as one row."""
    return np.loadtxt(path, delimiter=",", dtype=float, ndmin=1).ravel()


def save_operator(path, op: AnalysisOperator) -> None:
    save_matrix(path, op.dense())
    write_json(_sidecar(path), {
        "kind": "analysis_operator",
        "p": op.p,
        "n": op.n,
        "op_norm": op.op_norm,
        "pinv_norm": op.pinv_norm,
        "kappa": op.kappa,
    })


def load_operator(path) -> AnalysisOperator:
    return build_operator(load_matrix(path))


def save_signal(path, sig: AnalysisSparseSignal) -> None:
    save_vector(path, sig.x)
    write_json(_sidecar(path), {"kind": "analysis_sparse_signal", "support": sig.support.tolist(), "s": sig.s})


def load_signal(path) -> AnalysisSparseSignal:
    x = load_vector(path)
    meta = read_json(_sidecar(path))
    return AnalysisSparseSignal(x, np.asarray(meta["support"], dtype=int), int(meta["s"]))


def save_profile(path, profile: PriorProfile) -> None:
    write_json(path, {
        "kind": "prior_profile",
        "blocks": [b.tolist() for b in profile.blocks],
        "accuracies": profile.accuracies.tolist(),
        "sizes": profile.sizes.tolist(),
    })


def load_profile(path) -> PriorProfile:
    meta = read_json(path)
    blocks = check_partition(meta["blocks"])
    return PriorProfile(blocks, np.asarray(meta["accuracies"], float), np.asarray(meta["sizes"], float))


def load_support(path) -> tuple[np.ndarray, np.ndarray]:
    """Support indices and signs from a CSV of ``index[,sign]`` rows.

    Missing signs default to +1. An empty file is an empty support.
    """
    text = Path(path).read_text().strip()
    if not text:
        return np.zeros(0, dtype=int), np.zeros(0)
    rows = [r.split(",") for r in text.splitlines() if r.strip() and not r.lstrip().startswith("#")]
    idx = np.array([int(float(r[0])) for r in rows], dtype=int)
    signs = np.array([float(r[1]) if len(r) > 1 else 1.0 for r in rows])
    return idx, signs
