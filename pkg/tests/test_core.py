import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wl1analysis.core import (
    MeasurementSet,
    WeightVector,
    analysis_support,
    best_k_term_support,
    build_operator,
    check_partition,
    compute_accuracies,
    controlled_kappa_operator,
    cosine_frame,
    gaussian_measurements,
    gen_analysis_sparse_signal,
    nmse,
    psnr,
    signal_on_support,
)
from wl1analysis.errors import (
    InfeasibleSparsity,
    PartitionError,
    RankDeficient,
    ShapeError,
    ZeroReference,
)


def test_identity_operator_kappa_one():
    op = build_operator(np.eye(5))
    assert op.kappa == pytest.approx(1.0)
    assert op.op_norm == pytest.approx(1.0)


def test_diagonal_operator_norms():
    op = build_operator(np.diag([2.0, 1.0]))
    assert op.op_norm == pytest.approx(2.0)
    assert op.pinv_norm == pytest.approx(1.0)
    assert op.kappa == pytest.approx(2.0)


@pytest.mark.parametrize("kappa", [1.1, 230.0])
def test_controlled_kappa(kappa):
    op = controlled_kappa_operator(60, 55, kappa, seed=0)
    assert (op.p, op.n) == (60, 55)
    assert op.kappa == pytest.approx(kappa, rel=1e-10)
    assert op.kappa == pytest.approx(op.op_norm * op.pinv_norm, rel=1e-12)


def test_operator_errors():
    with pytest.raises(ShapeError):
        build_operator(np.ones((2, 3)))
    with pytest.raises(RankDeficient):
        build_operator(np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]))


def test_orthonormal_columns_have_kappa_one():
    Q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((12, 7)))
    assert build_operator(Q).kappa == pytest.approx(1.0, abs=1e-12)


def test_cosine_frame_shape_and_conditioning():
    op = cosine_frame(55, 50)
    assert (op.p, op.n) == (55, 50)
    assert 1.0 <= op.kappa < 1.5
    np.testing.assert_allclose(np.linalg.norm(op.dense(), axis=1), 1.0)


def test_identity_signal_is_plain_sparse():
    op = build_operator(np.eye(5))
    sig = gen_analysis_sparse_signal(op, 2, seed=7)
    assert np.count_nonzero(np.abs(sig.x) > 1e-12) == 2
    assert sig.s == 2


def test_zero_sparsity_gives_zero_signal():
    sig = gen_analysis_sparse_signal(build_operator(np.eye(5)), 0, seed=1)
    assert np.all(sig.x == 0)
    assert sig.s == 0


@pytest.mark.parametrize("s", [6, 10, 14])
def test_frame_signal_support(s):
    op = controlled_kappa_operator(60, 55, 1.1, seed=1)
    sig = gen_analysis_sparse_signal(op, s, seed=s)
    assert sig.s == s
    np.testing.assert_array_equal(analysis_support(op.apply(sig.x)), sig.support)
    assert np.linalg.norm(sig.x) == pytest.approx(1.0)


def test_signal_deterministic():
    op = controlled_kappa_operator(60, 55, 1.1, seed=1)
    a = gen_analysis_sparse_signal(op, 10, seed=5)
    b = gen_analysis_sparse_signal(op, 10, seed=5)
    np.testing.assert_array_equal(a.x, b.x)


def test_infeasible_sparsity():
    # generic 60x55 operator: p - s rows must leave a null space, so s >= 6
    op = controlled_kappa_operator(60, 55, 1.1, seed=1)
    with pytest.raises(InfeasibleSparsity):
        gen_analysis_sparse_signal(op, 2, seed=0)


def test_signal_on_given_support():
    op = controlled_kappa_operator(20, 15, 2.0, seed=2)
    support = np.array([0, 3, 5, 7, 11, 12, 19])
    sig = signal_on_support(op, support, seed=0)
    np.testing.assert_array_equal(sig.support, support)


def test_accuracies_two_blocks():
    blocks = [np.arange(10), np.arange(10, 60)]
    support = np.r_[0:7, 10:13]
    prof = compute_accuracies(blocks, support)
    np.testing.assert_allclose(prof.accuracies, [7 / 10, 3 / 50])
    np.testing.assert_allclose(prof.sizes, [1 / 6, 5 / 6])


def test_accuracies_noisy_setup():
    prof = compute_accuracies([np.arange(10), np.arange(10, 55)], np.r_[0:8, 20, 30])
    np.testing.assert_allclose(prof.accuracies, [8 / 10, 2 / 45])


def test_single_block_accuracy():
    prof = compute_accuracies([np.arange(30)], [1, 4, 9])
    assert prof.accuracies[0] == pytest.approx(3 / 30)
    assert prof.sizes[0] == 1.0


def test_accuracy_count_identity():
    rng = np.random.default_rng(0)
    perm = rng.permutation(40)
    blocks = [perm[:7], perm[7:20], perm[20:]]
    support = rng.choice(40, 11, replace=False)
    prof = compute_accuracies(blocks, support)
    assert round(float(np.sum(prof.accuracies * [b.size for b in prof.blocks]))) == 11
    assert prof.sizes.sum() == pytest.approx(1.0)


def test_partition_errors():
    with pytest.raises(PartitionError):
        check_partition([[0, 1], [1, 2]], 3)
    with pytest.raises(PartitionError):
        check_partition([[0, 1]], 3)


def test_weight_vector_from_blocks():
    wv = WeightVector.from_blocks([[0, 2], [1, 3, 4]], [0.5, 2.0], 5)
    np.testing.assert_allclose(wv.w, [0.5, 2.0, 0.5, 2.0, 2.0])
    with pytest.raises(ValueError):
        WeightVector.from_blocks([[0, 1]], [0.0], 2)
    with pytest.raises(ValueError):
        WeightVector.from_blocks([[0, 1]], [-1.0], 2)


def test_best_k_term():
    np.testing.assert_array_equal(best_k_term_support([3, -5, 1], 2), [1, 0])
    assert best_k_term_support([3, -5, 1], 0).size == 0
    # ties go to the lowest index
    np.testing.assert_array_equal(best_k_term_support([1, -1, 1, 1], 2), [0, 1])


def test_best_k_term_l1_ratio():
    c = np.zeros(30)
    c[[2, 5, 11, 17, 23, 29]] = [1, -1, 1, 1, -1, 1]
    for k in range(7):
        T = best_k_term_support(c, k)
        assert np.abs(c[T]).sum() == pytest.approx(k / 6 * np.abs(c).sum())


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=25))
@settings(max_examples=60, deadline=None)
def test_best_k_term_nested(vals):
    c = np.array(vals)
    prev = set()
    for k in range(c.size + 1):
        cur = set(best_k_term_support(c, k).tolist())
        assert prev <= cur
        prev = cur
    assert prev == set(range(c.size))


def test_nmse_examples():
    x = np.array([0.0, 2.0, 0.0])
    assert nmse(x, x) == 0.0
    assert nmse(np.zeros(3), x) == 1.0
    assert nmse(x + np.array([1.0, 0, 0]), x) == pytest.approx(0.5)
    with pytest.raises(ZeroReference):
        nmse(x, np.zeros(3))


def test_psnr_examples():
    X = np.ones((2, 2))
    assert psnr(X, X) == float("inf")
    assert psnr(X + 1, X) == pytest.approx(0.0, abs=1e-12)


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(4)
    x, xh = rng.standard_normal(16), rng.standard_normal(16)
    perm = rng.permutation(16)
    assert nmse(xh[perm], x[perm]) == pytest.approx(nmse(xh, x))
    assert psnr(xh[perm].reshape(4, 4), x[perm].reshape(4, 4)) == pytest.approx(psnr(xh.reshape(4, 4), x.reshape(4, 4)))


def test_gaussian_measurements_snr():
    x = np.random.default_rng(0).standard_normal(20)
    meas, noise = gaussian_measurements(x, 15, seed=1, snr_db=30)
    clean = meas.A @ x
    assert 10 * np.log10(clean @ clean / (noise @ noise)) == pytest.approx(30.0)
    assert meas.eta == pytest.approx(np.linalg.norm(noise))
    assert np.linalg.norm(meas.y - clean) <= meas.eta * (1 + 1e-12)


def test_noiseless_measurements():
    x = np.ones(4)
    meas, noise = gaussian_measurements(x, 3, seed=2)
    assert isinstance(meas, MeasurementSet)
    assert meas.eta == 0.0
    np.testing.assert_allclose(meas.y, meas.A @ x)
