import numpy as np
import pytest

from sbireduce import tasks
from sbireduce.mcmc import MhConfig, MhError, rw_metropolis, split_rhat
from sbireduce.tasks import BayesLinearRegression, get_task, glm_prior_cov


@pytest.mark.parametrize("name", tasks.task_names())
def test_task_contract(name):
    t = get_task(name)
    th = t.prior_sample(50, seed=0)
    assert th.shape == (50, t.dim_theta)
    assert np.all(t.in_support(th))
    x = t.simulate(th, seed=1)
    assert x.shape == (50, t.dim_x) and np.all(np.isfinite(x))
    assert np.asarray(t.x_obs).shape == (t.dim_x,)
    if t.theta_true is not None:
        assert t.in_support(t.theta_true[None])[0]
        assert t.simulate(t.theta_true, seed=0).shape == (1, t.dim_x)
    ref = tasks.reference_posterior_sample(name, 300, seed=0)
    assert ref.shape == (300, t.dim_theta) and np.all(t.in_support(ref))


def test_unknown_task_lists_names():
    with pytest.raises(tasks.UnknownTaskError, match="two_moons"):
        get_task("hodgkin_huxley")


def test_gmm_prior():
    s = tasks.prior_sample("gmm1d", 100_000, seed=0)
    assert np.all((s >= -10) & (s <= 10))
    assert abs(s.mean()) < 0.1


def test_sisson_prior_box():
    s = tasks.prior_sample("sisson", 20_000, seed=0)
    assert np.all((s >= -20) & (s <= 40))


def test_bayes_lr_prior_is_standard_normal():
    s = tasks.prior_sample("bayes_lr", 100_000, seed=0)
    assert np.max(np.abs(np.cov(s, rowvar=False) - np.eye(6))) < 0.05


def test_gmm_simulator_variance():
    x = tasks.simulate("gmm1d", np.zeros((50_000, 1)), seed=3)
    assert abs(x.var() - 0.505) < 0.02


def test_two_moons_pinned_noise():
    tm = get_task("two_moons")
    np.testing.assert_allclose(tm.simulate_with_noise([[0.0, 0.0]], alpha=0.0, r=0.1), [[0.35, 0.0]], atol=1e-15)


def test_two_moons_formula():
    tm = get_task("two_moons")
    th = np.array([[0.3, -0.8]])
    x = tm.simulate_with_noise(th, alpha=0.4, r=0.12)
    v = np.array([0.12 * np.cos(0.4) + 0.25, 0.12 * np.sin(0.4)])
    expected = v + np.array([-abs(0.3 - 0.8) / np.sqrt(2), (-0.3 - 0.8) / np.sqrt(2)])
    np.testing.assert_allclose(x[0], expected, atol=1e-15)


def test_glm_summary_statistics():
    g = get_task("bernoulli_glm")
    x = g.simulate(np.repeat(g.theta_true[None], 200, axis=0), seed=0)
    assert np.all((x[:, 0] >= 0) & (x[:, 0] <= 100))
    assert np.allclose(x[:, 0], np.round(x[:, 0]))
    assert g.design.shape == (100, 10)


def test_simulate_rejects_outside_support():
    with pytest.raises(ValueError):
        tasks.simulate("two_moons", [[1.5, 0.0]])


def test_glm_prior_covariance():
    cov = glm_prior_cov()
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)
    assert cov[0, 0] == 2.0 and np.all(cov[0, 1:] == 0)
    F = np.zeros((9, 9))
    for j in range(1, 10):  # 1-based rows
        F[j - 1, j - 1] = 1 + np.sqrt((j - 1) / 9)
        if j >= 2:
            F[j - 1, j - 2] = -2
        if j >= 3:
            F[j - 1, j - 3] = 1
    np.testing.assert_allclose(np.linalg.inv(cov[1:, 1:]), F.T @ F, atol=1e-8)


def test_slcp_covariance_psd_over_box():
    s = tasks.prior_sample("slcp", 2000, seed=0)
    _, S = tasks.Slcp.mean_cov(s)
    assert np.all(np.linalg.eigvalsh(S) >= -1e-12)
    th = np.array([[0.1, 0.2, 1.5, -0.7, 0.3]])
    _, S1 = tasks.Slcp.mean_cov(th)
    assert S1[0, 0, 0] == pytest.approx(1.5**4)
    assert S1[0, 0, 1] == pytest.approx(np.tanh(0.3) * 1.5**2 * 0.7**2)


def test_slcp_log_likelihood_matches_scipy():
    from scipy import stats

    sl = get_task("slcp")
    th = np.array([0.5, -1.0, 1.2, -0.8, 0.4])
    m, S = sl.mean_cov(th)
    pts = sl.x_obs.reshape(8, 2)
    expected = stats.multivariate_normal(m[0], S[0]).logpdf(pts).sum()
    assert sl.log_likelihood(th)[0] == pytest.approx(expected, rel=1e-10)


def test_glm_log_likelihood_matches_bernoulli():
    g = get_task("bernoulli_glm")
    th = g.theta_true
    rng = np.random.default_rng(0)
    y = (rng.random(100) < 0.3).astype(float)
    p = 1 / (1 + np.exp(-(g.design @ th)))
    expected = np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert g.log_likelihood(th, g.design.T @ y)[0] == pytest.approx(expected, rel=1e-10)


def test_bayes_lr_vague_likelihood_gives_prior():
    lr = BayesLinearRegression(sigma=1e6)
    lr.x_obs = get_task("bayes_lr").x_obs
    mean, cov = lr.posterior_moments()
    assert np.max(np.abs(mean)) < 0.05
    assert np.max(np.abs(cov - np.eye(6))) < 0.05


def test_two_moons_reference_round_trip():
    tm = get_task("two_moons")
    ref = tm.reference_posterior_sample(5000, seed=0)
    # |theta1 + theta2| / sqrt2 = v1 - x1 = r cos(alpha) + 0.25 in [0.25 - ~0.13, 0.25 + ~0.14]
    a = np.abs(ref.sum(axis=1)) / np.sqrt(2)
    assert a.min() > 0.25 - 0.2 and a.max() < 0.25 + 0.2
    frac_pos = np.mean(ref.sum(axis=1) > 0)
    assert 0.45 <= frac_pos <= 0.55


def test_gmm_reference_variance():
    ref = get_task("gmm1d").reference_posterior_sample(100_000, seed=0)
    assert abs(ref.var() - 0.505) < 0.02


def test_sisson_reference_mode_weights():
    ref = get_task("sisson").reference_posterior_sample(20_000, seed=0)
    pos = np.mean(ref > 0, axis=0)
    # each coordinate keeps the +5 mode with probability 0.7
    assert np.all(np.abs(pos - 0.7) < 0.02)


def test_reference_is_memoized_and_read_only_copy():
    a = tasks.reference_posterior_sample("gmm1d", 100, seed=3)
    a[:] = 99
    b = tasks.reference_posterior_sample("gmm1d", 100, seed=3)
    assert not np.any(b == 99)


# ---- Metropolis ---------------------------------------------------------


def std_normal(th):
    return -0.5 * np.sum(th * th, axis=1)


def test_mh_standard_normal():
    res = rw_metropolis(std_normal, np.zeros(1), MhConfig(n_chains=4, n_steps=20_000, burn_in=5_000, proposal_scale=1.0, seed=0))
    s = res.samples
    assert abs(s.mean()) < 0.05
    assert abs(s.var() - 1) < 0.1
    assert 0.2 < res.acceptance_rate < 0.9
    assert res.converged


def test_mh_tiny_proposal():
    res = rw_metropolis(
        std_normal, np.zeros(1), MhConfig(n_chains=2, n_steps=600, burn_in=100, proposal_scale=1e-8, adapt=False, seed=0)
    )
    assert res.acceptance_rate > 0.99
    assert res.samples.var() < 1e-12


def test_mh_box_target_stays_in_box():
    def box(th):
        inside = np.all((th >= -1) & (th <= 2), axis=1)
        return np.where(inside, 0.0, -np.inf)

    res = rw_metropolis(box, np.array([0.5, 0.5]), MhConfig(n_chains=4, n_steps=3000, burn_in=500, proposal_scale=1.0, seed=1))
    assert np.all((res.samples >= -1) & (res.samples <= 2))


def test_mh_zero_acceptance_raises():
    def spike(th):
        return np.where(np.all(th == 0, axis=1), 0.0, -np.inf)

    with pytest.raises(MhError, match="proposal"):
        rw_metropolis(spike, np.zeros(1), MhConfig(n_chains=2, n_steps=400, burn_in=200, adapt=False, seed=0))


def test_mh_requires_finite_start():
    with pytest.raises(MhError):
        rw_metropolis(lambda th: np.full(len(th), -np.inf), np.zeros(1), MhConfig(n_steps=10, burn_in=5))


def test_mh_config_validation():
    with pytest.raises(ValueError):
        MhConfig(n_steps=100, burn_in=100)
    with pytest.raises(ValueError):
        MhConfig(thin=0)


def test_split_rhat_detects_disagreeing_chains():
    rng = np.random.default_rng(0)
    good = rng.normal(size=(4, 1000, 1))
    bad = good + np.arange(4)[:, None, None]
    assert split_rhat(good)[0] < 1.01
    assert split_rhat(bad)[0] > 1.5


def test_bayes_lr_reference_matches_closed_form():
    lr = get_task("bayes_lr")
    mean, cov = lr.posterior_moments()
    prec = lr.X.T @ lr.X / 0.1**2 + np.eye(6)
    np.testing.assert_allclose(np.linalg.inv(prec), cov, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(cov @ lr.X.T @ lr.x_obs / 0.01, mean, rtol=1e-10)


def test_glm_reference_converges():
    g = get_task("bernoulli_glm")
    cfg = MhConfig(proposal_scale=0.1 * g.prior_range, seed=11)
    res = rw_metropolis(lambda th: g.log_likelihood(th) + g.prior_log_prob(th), g.theta_true, cfg, n=5000)
    assert np.all(res.rhat < 1.05)


def test_slcp_reference_four_modes_balanced():
    run = get_task("slcp").reference_run(4000, seed=0)
    s = run.samples
    for j in (2, 3):
        assert abs(np.mean(s[:, j] > 0) - 0.5) < 0.05
    assert np.all(run.rhat < 1.05)
    # the folded magnitudes sit near |theta_true|
    assert abs(np.median(np.abs(s[:, 2])) - 1.0) < 0.3


def test_mh_thinning_is_time_major_and_prefix_spread():
    res = rw_metropolis(std_normal, np.zeros(1), MhConfig(n_chains=4, n_steps=1200, burn_in=200, seed=0), n=10)
    assert res.samples.shape == (10, 1)
    # first rows come from the first retained step of each chain
    np.testing.assert_array_equal(res.samples[:4, 0], res.chains[:, 0, 0])
