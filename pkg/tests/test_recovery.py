import warnings

import numpy as np
import pytest

from oracles import l1_analysis_lp
from wl1analysis.core import (
    MeasurementSet,
    WeightVector,
    build_operator,
    controlled_kappa_operator,
    gaussian_measurements,
    gen_analysis_sparse_signal,
    nmse,
    signal_on_support,
)
from wl1analysis.errors import NotConverged, ShapeError
from wl1analysis.harness import realize_profile
from wl1analysis.recovery import RecoveryProblem, SolverConfig, certify, solve, weighted_soft_threshold
from wl1analysis.weights import weights_from_profile


def _random_instance(rng):
    n = int(rng.integers(4, 16))
    p = int(rng.integers(n, 21))
    m = int(rng.integers(2, min(n, 12) + 1))
    op = build_operator(rng.standard_normal((p, n)))
    A = rng.standard_normal((m, n))
    y = A @ rng.standard_normal(n)
    w = rng.uniform(0.2, 2.0, p)
    return RecoveryProblem(MeasurementSet(A, y, 0.0), op, w)


def test_soft_threshold_examples():
    np.testing.assert_allclose(weighted_soft_threshold([3, -1], [1, 2]), [2, 0])
    v = np.array([1.5, -2.0, 0.3])
    np.testing.assert_array_equal(weighted_soft_threshold(v, np.zeros(3)), v)
    np.testing.assert_array_equal(weighted_soft_threshold(v, np.full(3, np.abs(v).max())), 0)
    with pytest.raises(ValueError):
        weighted_soft_threshold(v, [-1, 0, 0])


def test_square_identity_system():
    y = np.array([1.0, -2.0, 0.0, 3.5])
    prob = RecoveryProblem(MeasurementSet(np.eye(4), y, 0.0), build_operator(np.eye(4)), np.ones(4))
    res = solve(prob)
    assert res.converged
    np.testing.assert_allclose(res.xhat, y, atol=1e-6)
    rep = certify(prob, res)
    assert rep.feasibility <= 1e-6
    assert rep.subgradient_residual <= 1e-6
    assert rep.complementary_slackness <= 1e-6


def test_matches_lp_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        prob = _random_instance(rng)
        res = solve(prob)
        ref, _ = l1_analysis_lp(prob.meas.A, prob.meas.y, prob.op.dense(), prob.w)
        assert abs(res.objective - ref) <= 1e-5 * max(abs(ref), 1e-12)
        assert res.primal_residual <= 1e-6


def test_certificate_on_converged_solve():
    rng = np.random.default_rng(12)
    op = controlled_kappa_operator(20, 15, 2.0, seed=rng)
    sig = gen_analysis_sparse_signal(op, 8, seed=rng)
    meas, _ = gaussian_measurements(sig.x, 12, seed=rng, snr_db=25)
    prob = RecoveryProblem(meas, op, np.ones(20))
    res = solve(prob)
    rep = certify(prob, res)
    assert res.converged
    assert rep.feasibility <= 1e-4
    assert rep.subgradient_residual <= 1e-4
    assert rep.complementary_slackness <= 1e-4


def test_certificate_flags_infeasible_point():
    rng = np.random.default_rng(13)
    prob = _random_instance(rng)
    rep = certify(prob, rng.standard_normal(prob.op.n) * 10)
    assert rep.feasibility > 0


def test_noisy_feasibility():
    rng = np.random.default_rng(14)
    op = controlled_kappa_operator(30, 25, 1.5, seed=rng)
    sig = gen_analysis_sparse_signal(op, 10, seed=rng)
    meas, _ = gaussian_measurements(sig.x, 18, seed=rng, snr_db=20)
    res = solve(RecoveryProblem(meas, op, np.ones(30)))
    assert res.converged
    assert np.linalg.norm(meas.y - meas.A @ res.xhat) <= meas.eta + 1e-6 * (1 + np.linalg.norm(meas.y))


def test_scale_equivariance():
    rng = np.random.default_rng(15)
    op = controlled_kappa_operator(30, 25, 1.5, seed=rng)
    sig = gen_analysis_sparse_signal(op, 10, seed=rng)
    meas, _ = gaussian_measurements(sig.x, 20, seed=rng, snr_db=25)
    base = solve(RecoveryProblem(meas, op, np.ones(30))).xhat
    c = 3.0
    scaled = solve(RecoveryProblem(MeasurementSet(meas.A, c * meas.y, c * meas.eta), op, np.ones(30))).xhat
    np.testing.assert_allclose(scaled, c * base, atol=1e-5 * c * np.linalg.norm(base))


def test_weight_scale_invariance():
    rng = np.random.default_rng(16)
    op = controlled_kappa_operator(30, 25, 1.5, seed=rng)
    sig = gen_analysis_sparse_signal(op, 10, seed=rng)
    A = rng.standard_normal((18, 25))
    w = rng.uniform(0.5, 2, 30)
    a = solve(RecoveryProblem(MeasurementSet(A, A @ sig.x), op, w)).xhat
    b = solve(RecoveryProblem(MeasurementSet(A, A @ sig.x), op, 7.0 * w)).xhat
    np.testing.assert_allclose(a, b, atol=1e-5 * np.linalg.norm(a))


def test_best_objective_history_nonincreasing():
    rng = np.random.default_rng(17)
    prob = _random_instance(rng)
    res = solve(prob, SolverConfig(record=True))
    assert len(res.history) == res.iterations
    assert np.all(np.diff(res.history) <= 0)


def test_zero_weight_coordinates_allowed():
    rng = np.random.default_rng(18)
    op = controlled_kappa_operator(20, 15, 1.2, seed=rng)
    sig = gen_analysis_sparse_signal(op, 8, seed=rng)
    A = rng.standard_normal((12, 15))
    w = np.ones(20)
    w[:4] = 0.0
    res = solve(RecoveryProblem(MeasurementSet(A, A @ sig.x), op, WeightVector(w, np.array([0.0, 1.0]))))
    assert res.converged


def test_not_converged_strict_and_lenient():
    rng = np.random.default_rng(19)
    prob = _random_instance(rng)
    with pytest.raises(NotConverged) as exc:
        solve(prob, SolverConfig(max_iters=3, strict=True))
    assert exc.value.result is not None
    with pytest.warns(RuntimeWarning):
        res = solve(prob, SolverConfig(max_iters=3))
    assert not res.converged


def test_shape_checks():
    op = build_operator(np.eye(4))
    with pytest.raises(ShapeError):
        RecoveryProblem(MeasurementSet(np.ones((3, 5)), np.ones(3)), op, np.ones(4))
    with pytest.raises(ShapeError):
        RecoveryProblem(MeasurementSet(np.ones((3, 4)), np.ones(2)), op, np.ones(4))
    with pytest.raises(ShapeError):
        RecoveryProblem(MeasurementSet(np.ones((3, 4)), np.ones(3)), op, np.ones(5))


def _success_rate(op, m, weighted, trials=50):
    hits = 0
    for t in range(trials):
        rng = np.random.default_rng([7, m, t])
        support, prof = realize_profile(60, [10, 50], [0.7, 0.06], 10, rng)
        sig = signal_on_support(op, support, rng)
        A = rng.standard_normal((m, 55))
        w = weights_from_profile(prof).w if weighted else np.ones(60)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = solve(RecoveryProblem(MeasurementSet(A, A @ sig.x), op, w))
        hits += nmse(res.xhat, sig.x) <= 1e-4
    return hits / trials


@pytest.fixture(scope="module")
def frame_op():
    return controlled_kappa_operator(60, 55, 1.1, seed=np.random.default_rng(1))


def test_frame_setup_unweighted_m45(frame_op):
    assert _success_rate(frame_op, 45, weighted=False) >= 0.9


def test_frame_setup_weighted_not_worse_m35(frame_op):
    # with this operator both methods already saturate at m = 35
    assert _success_rate(frame_op, 35, weighted=True) >= _success_rate(frame_op, 35, weighted=False)


def test_frame_setup_weighted_beats_unweighted_in_transition(frame_op):
    assert _success_rate(frame_op, 20, weighted=True) > _success_rate(frame_op, 20, weighted=False)
