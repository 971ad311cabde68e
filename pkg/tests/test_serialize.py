import numpy as np

from wl1analysis.core import compute_accuracies, controlled_kappa_operator, gen_analysis_sparse_signal
from wl1analysis.imaging import haar_frame, phantom, read_pgm, write_pgm
from wl1analysis.serialize import (
    load_operator,
    load_profile,
    load_signal,
    load_support,
    read_json,
    save_operator,
    save_profile,
    save_signal,
)


def test_operator_roundtrip(tmp_path):
    op = controlled_kappa_operator(12, 9, 3.0, seed=0)
    save_operator(tmp_path / "omega.csv", op)
    back = load_operator(tmp_path / "omega.csv")
    np.testing.assert_array_equal(back.dense(), op.dense())
    meta = read_json(tmp_path / "omega.csv.json")
    assert meta["p"] == 12 and meta["n"] == 9
    assert meta["kappa"] == op.kappa


def test_signal_roundtrip(tmp_path):
    op = controlled_kappa_operator(12, 9, 3.0, seed=0)
    sig = gen_analysis_sparse_signal(op, 5, seed=1)
    save_signal(tmp_path / "x.csv", sig)
    back = load_signal(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.x, sig.x)
    np.testing.assert_array_equal(back.support, sig.support)


def test_profile_roundtrip(tmp_path):
    prof = compute_accuracies([np.arange(4), np.arange(4, 10)], [0, 1, 7])
    save_profile(tmp_path / "prof.json", prof)
    back = load_profile(tmp_path / "prof.json")
    np.testing.assert_array_equal(back.accuracies, prof.accuracies)
    assert [b.tolist() for b in back.blocks] == [b.tolist() for b in prof.blocks]


def test_support_file(tmp_path):
    f = tmp_path / "S.csv"
    f.write_text("# index,sign\n3,-1\n7,1\n9\n")
    idx, signs = load_support(f)
    assert idx.tolist() == [3, 7, 9]
    assert signs.tolist() == [-1.0, 1.0, 1.0]
    (tmp_path / "empty.csv").write_text("")
    assert load_support(tmp_path / "empty.csv")[0].size == 0


def test_haar_frame_is_tight():
    M, scale = haar_frame(8, 2)
    assert M.shape == (7 * 64, 64)
    G = (M.T @ M).toarray()
    np.testing.assert_allclose(G, np.eye(64), atol=1e-12)
    assert np.bincount(scale).tolist() == [64, 192, 192]


def test_phantom_and_pgm(tmp_path):
    X = phantom(32)
    assert X.shape == (32, 32)
    assert 0 <= X.min() and X.max() <= 1
    write_pgm(tmp_path / "p.pgm", X)
    back = read_pgm(tmp_path / "p.pgm")
    assert back.shape == (32, 32)
    assert back.max() == 255
