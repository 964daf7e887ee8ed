import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbireduce.metrics import ed2
from sbireduce.support_points import SpConfig, ccp_step, sp_objective, support_points, support_points_run


def test_objective_hand_value():
    # attraction 2/(2*1) * (1 + 1) = 2, repulsion (1/4) * 2 * 2 = 1
    assert sp_objective([[0.0], [2.0]], [[1.0]]) == pytest.approx(1.0)


def test_single_point_objective_is_twice_mean_distance():
    Y = np.array([[0.0], [1.0], [4.0]])
    assert sp_objective([[1.0]], Y) == pytest.approx(2 * np.mean([1.0, 0.0, 3.0]))


def test_objective_translation_invariant():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(40, 3))
    c = np.array([3.0, -1.0, 7.0])
    assert sp_objective(X + c, Y + c) == pytest.approx(sp_objective(X, Y), rel=1e-12)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        sp_objective(np.zeros((2, 2)), np.zeros((3, 3)))


def test_single_point_step_is_weiszfeld():
    rng = np.random.default_rng(1)
    Y = rng.normal(size=(30, 2))
    x = np.array([[0.3, -0.2]])
    w = 1.0 / np.linalg.norm(Y - x, axis=1)
    expected = (w[:, None] * Y).sum(axis=0) / w.sum()
    np.testing.assert_allclose(ccp_step(x, Y)[0], expected, rtol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 5, 10])
def test_objective_monotone_over_50_sweeps(d):
    rng = np.random.default_rng(d)
    Y = rng.normal(size=(400, d))
    res = support_points_run(Y, SpConfig(n=20, max_iter=50, tol=1e-300, seed=d))
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 1e-10 * np.abs(obj[:-1]) + 1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 4), n=st.integers(1, 8))
def test_ccp_step_never_increases_objective(seed, d, n):
    rng = np.random.default_rng(seed)
    Y = rng.standard_t(3, size=(60, d))
    X = Y[rng.choice(60, n, replace=False)] + 0.01 * rng.normal(size=(n, d))
    before = sp_objective(X, Y)
    after = sp_objective(ccp_step(X, Y), Y)
    assert after <= before + 1e-10 * abs(before) + 1e-12


def test_single_support_point_near_median():
    Y = np.array([[1.0], [2.0], [3.0], [10.0]])
    res = support_points_run(Y, SpConfig(n=1, max_iter=500, seed=0))
    assert 2.0 - 1e-3 <= res.points[0, 0] <= 3.0 + 1e-3


def test_n_equals_N_stays_inside_hull():
    rng = np.random.default_rng(2)
    Y = rng.normal(size=(15, 2))
    X = support_points(Y, SpConfig(n=15, max_iter=100, seed=0))
    assert X.shape == (15, 2)
    assert sp_objective(X, Y) <= sp_objective(Y, Y) + 1e-9
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    assert np.all(X >= lo - 1e-9) and np.all(X <= hi + 1e-9)


def test_n_larger_than_N_rejected():
    with pytest.raises(ValueError):
        support_points(np.zeros((3, 1)), SpConfig(n=4))


def test_beats_random_subsample():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=(2000, 2))
    X = support_points(Y, SpConfig(n=50, seed=0))
    wins = 0
    for s in range(10):
        R = Y[np.random.default_rng(100 + s).choice(2000, 50, replace=False)]
        wins += ed2(X, Y) < ed2(R, Y)
    assert wins == 10


def test_translation_and_rotation_equivariance():
    rng = np.random.default_rng(4)
    Y = rng.normal(size=(300, 2))
    init = Y[:10].copy()
    cfg = SpConfig(n=10, max_iter=30, tol=1e-300)
    base = support_points_run(Y, cfg, init=init).points
    a = 0.7
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    c = np.array([5.0, -2.0])
    moved = support_points_run(Y @ R.T + c, cfg, init=init @ R.T + c).points
    np.testing.assert_allclose(moved, base @ R.T + c, atol=1e-8)


def test_seeded_and_converges():
    Y = np.random.default_rng(5).uniform(size=(500, 2))
    a = support_points_run(Y, SpConfig(n=10, seed=3))
    b = support_points_run(Y, SpConfig(n=10, seed=3))
    np.testing.assert_array_equal(a.points, b.points)
    assert a.objective[-1] < a.objective[0]
    loose = support_points_run(Y, SpConfig(n=10, seed=3, tol=1e-3))
    assert loose.converged and loose.n_iter < 200


def test_iteration_cap_reported():
    Y = np.random.default_rng(6).normal(size=(300, 3))
    res = support_points_run(Y, SpConfig(n=30, max_iter=2, tol=1e-300))
    assert not res.converged and res.n_iter == 2 and len(res.objective) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        SpConfig(n=0)
    with pytest.raises(ValueError):
        SpConfig(n=3, tol=-1.0)
