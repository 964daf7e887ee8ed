"""Benchmark problems: priors, simulators, observations and reference posteriors."""
from __future__ import annotations

import functools
from importlib import resources

import numpy as np
from scipy import stats

from .mcmc import MhConfig, MhResult, rw_metropolis, split_rhat  # noqa: F401  (re-exported)

SQRT2 = np.sqrt(2.0)


class UnknownTaskError(KeyError):
    pass


def _load(name: str) -> np.ndarray:
    ref = resources.files("sbireduce") / "data" / name
    with resources.as_file(ref) as path:
        return np.loadtxt(path, delimiter=",", ndmin=1)


class Task:
    """Base class. Subclasses set dims, prior, ``_simulate`` and ``_reference``."""

    name: str = ""
    dim_theta: int = 0
    dim_x: int = 0
    low: np.ndarray | None = None  # box prior bounds, None for Gaussian priors
    high: np.ndarray | None = None
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None
    theta_true: np.ndarray | None = None
    x_obs: np.ndarray = None  # type: ignore[assignment]

    @property
    def box(self) -> bool:
        return self.low is not None

    @property
    def prior_range(self) -> np.ndarray:
        """Box width per dimension; for Gaussian priors, 4 prior SDs (+-2 sd)."""
        if self.box:
            return self.high - self.low
        return 4.0 * np.sqrt(np.diag(self.prior_cov))

    def in_support(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        if not self.box:
            return np.all(np.isfinite(theta), axis=1)
        return np.all((theta >= self.low) & (theta <= self.high), axis=1)

    def prior_sample(self, n: int, seed=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        if self.box:
            return rng.uniform(self.low, self.high, size=(n, self.dim_theta))
        return rng.multivariate_normal(self.prior_mean, self.prior_cov, size=n, method="cholesky")

    @functools.cached_property
    def _prior_chol_inv(self):
        return np.linalg.inv(np.linalg.cholesky(self.prior_cov))

    def prior_log_prob(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if self.box:
            lp = -np.sum(np.log(self.high - self.low))
            return np.where(self.in_support(theta), lp, -np.inf)
        z = (theta - self.prior_mean) @ self._prior_chol_inv.T
        logdet = -np.sum(np.log(np.diag(self._prior_chol_inv)))
        return -0.5 * np.sum(z * z, axis=1) - logdet - 0.5 * self.dim_theta * np.log(2 * np.pi)

    def simulate(self, theta, seed=None) -> np.ndarray:
        """One draw of x per row of ``theta``; rows outside the prior support are rejected."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[1] != self.dim_theta:
            raise ValueError(f"{self.name}: theta must have {self.dim_theta} columns")
        if not np.all(self.in_support(theta)):
            raise ValueError(f"{self.name}: theta outside the prior support")
        return self._simulate(theta, np.random.default_rng(seed))

    def reference_posterior_sample(self, n: int, seed=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self._reference(n, np.random.default_rng(seed))

    def _simulate(self, theta, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def _reference(self, n, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def describe(self) -> dict:
        prior = (
            {"type": "box_uniform", "low": self.low.tolist(), "high": self.high.tolist()}
            if self.box
            else {"type": "gaussian", "mean": self.prior_mean.tolist()}
        )
        return {
            "name": self.name,
            "dim_theta": self.dim_theta,
            "dim_x": self.dim_x,
            "prior": prior,
            "x_obs": np.asarray(self.x_obs).tolist(),
            "theta_true": None if self.theta_true is None else self.theta_true.tolist(),
            "budgets": list(DEFAULT_BUDGETS.get(self.name, ())),
        }


def _rejection_fill(draw, n, accept, rng, max_rounds=1000):
    out, got = [], 0
    for _ in range(max_rounds):
        cand = draw(max(2 * (n - got), 64), rng)
        cand = cand[accept(cand)]
        out.append(cand[: n - got])
        got += len(out[-1])
        if got >= n:
            return np.concatenate(out, axis=0)
    raise RuntimeError("rejection sampler failed to fill the requested sample")


class Gmm1d(Task):
    """x | theta ~ 0.5 N(theta, 0.1^2) + 0.5 N(theta, 1); theta ~ U(-10, 10)."""

    name = "gmm1d"
    dim_theta = 1
    dim_x = 1
    scales = np.array([0.1, 1.0])

    def __init__(self):
        self.low = np.array([-10.0])
        self.high = np.array([10.0])
        self.x_obs = np.array([0.0])
        self.theta_true = np.array([0.0])

    def _simulate(self, theta, rng):
        sd = self.scales[rng.integers(0, 2, size=len(theta))]
        return theta + sd[:, None] * rng.standard_normal(theta.shape)

    def _reference(self, n, rng):
        def draw(m, r):
            sd = self.scales[r.integers(0, 2, size=m)]
            return self.x_obs + sd[:, None] * r.standard_normal((m, 1))

        return _rejection_fill(draw, n, self.in_support, rng)


class BayesLinearRegression(Task):
    """y | theta ~ N(X theta, sigma^2 I) with a fixed 10x6 design; theta ~ N(0, I)."""

    name = "bayes_lr"
    dim_theta = 6
    dim_x = 10

    def __init__(self, sigma: float = 0.1, with_x_obs: bool = True):
        self.sigma = float(sigma)
        self.X = _load("bayes_lr_X.csv").reshape(10, 6)
        self.prior_mean = np.zeros(6)
        self.prior_cov = np.eye(6)
        self.theta_true = _load("bayes_lr_theta_true.csv")
        self.x_obs = _load("bayes_lr_x_obs.csv") if with_x_obs else None

    def _simulate(self, theta, rng):
        return theta @ self.X.T + self.sigma * rng.standard_normal((len(theta), self.dim_x))

    def posterior_moments(self, y=None):
        """Closed-form posterior mean and covariance given data ``y`` (default x_obs)."""
        y = self.x_obs if y is None else np.asarray(y, dtype=float)
        precision = self.X.T @ self.X / self.sigma**2 + np.eye(self.dim_theta)
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ self.X.T @ y / self.sigma**2
        return mean, cov

    def _reference(self, n, rng):
        mean, cov = self.posterior_moments()
        return rng.multivariate_normal(mean, cov, size=n, method="cholesky")


class TwoMoons(Task):
    """Crescent-shaped bimodal posterior; theta ~ U(-1, 1)^2, x_obs = (0, 0)."""

    name = "two_moons"
    dim_theta = 2
    dim_x = 2

    def __init__(self):
        self.low = -np.ones(2)
        self.high = np.ones(2)
        self.x_obs = np.zeros(2)
        self.theta_true = None

    @staticmethod
    def _v(m, rng, alpha=None, r=None):
        if alpha is None:
            alpha = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size=m)
        if r is None:
            r = 0.1 + 0.01 * rng.standard_normal(m)
        return np.column_stack([r * np.cos(alpha) + 0.25, r * np.sin(alpha)])

    def simulate_with_noise(self, theta, alpha, r):
        """Simulator with its internal randomness pinned (for checking the formula)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        v = self._v(len(theta), None, np.broadcast_to(alpha, len(theta)), np.broadcast_to(r, len(theta)))
        return v + self._offset(theta)

    @staticmethod
    def _offset(theta):
        return np.column_stack(
            [-np.abs(theta[:, 0] + theta[:, 1]) / SQRT2, (-theta[:, 0] + theta[:, 1]) / SQRT2]
        )

    def _simulate(self, theta, rng):
        return self._v(len(theta), rng) + self._offset(theta)

    def _reference(self, n, rng):
        x1, x2 = self.x_obs

        def draw(m, r):
            v = self._v(m, r)
            q1 = v[:, 0] - x1
            q2 = x2 - v[:, 1]
            s = np.where(r.random(m) < 0.5, -1.0, 1.0)
            th = np.column_stack([(s * q1 - q2) / SQRT2, (s * q1 + q2) / SQRT2])
            # q1 < 0 has no preimage under |.|
            return th[q1 >= 0]

        return _rejection_fill(draw, n, self.in_support, rng)


class Slcp(Task):
    """Eight 2-D Gaussian points with theta-dependent mean and covariance; theta ~ U(-3, 3)^5."""

    name = "slcp"
    dim_theta = 5
    dim_x = 16
    n_points = 8

    def __init__(self, with_x_obs: bool = True):
        self.low = -3.0 * np.ones(5)
        self.high = 3.0 * np.ones(5)
        self.theta_true = np.array([0.7, -2.9, -1.0, -0.9, 0.6])
        self.x_obs = _load("slcp_x_obs.csv") if with_x_obs else None

    @staticmethod
    def mean_cov(theta):
        theta = np.atleast_2d(theta)
        s1 = theta[:, 2] ** 2
        s2 = theta[:, 3] ** 2
        rho = np.tanh(theta[:, 4])
        cov = np.empty((len(theta), 2, 2))
        cov[:, 0, 0] = s1**2
        cov[:, 1, 1] = s2**2
        cov[:, 0, 1] = cov[:, 1, 0] = rho * s1 * s2
        return theta[:, :2], cov

    def _simulate(self, theta, rng):
        m, S = self.mean_cov(theta)
        s1 = np.sqrt(S[:, 0, 0])
        s2 = np.sqrt(S[:, 1, 1])
        rho = np.tanh(theta[:, 4])
        z = rng.standard_normal((len(theta), self.n_points, 2))
        a = s1[:, None] * z[:, :, 0]
        b = s2[:, None] * (rho[:, None] * z[:, :, 0] + np.sqrt(1 - rho[:, None] ** 2) * z[:, :, 1])
        pts = m[:, None, :] + np.stack([a, b], axis=-1)
        return pts.reshape(len(theta), self.dim_x)

    def log_likelihood(self, theta, x=None):
        x = self.x_obs if x is None else x
        theta = np.atleast_2d(theta)
        pts = np.asarray(x, dtype=float).reshape(self.n_points, 2)
        s1 = theta[:, 2] ** 2
        s2 = theta[:, 3] ** 2
        rho = np.tanh(theta[:, 4])
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (pts[None, :, 0] - theta[:, None, 0]) / s1[:, None]
            w = (pts[None, :, 1] - theta[:, None, 1]) / s2[:, None]
            one_m = 1.0 - rho**2
            quad = (u**2 - 2 * rho[:, None] * u * w + w**2) / one_m[:, None]
            ll = -np.sum(quad, axis=1) / 2 - self.n_points * (
                np.log(2 * np.pi) + np.log(s1) + np.log(s2) + 0.5 * np.log(one_m)
            )
        return np.where(np.isfinite(ll), ll, -np.inf)

    def reference_run(self, n: int, seed=None) -> MhResult:
        """The Metropolis run behind ``reference_posterior_sample``, with diagnostics."""
        return self._reference_run(n, np.random.default_rng(seed))

    def _reference(self, n, rng):
        return self._reference_run(n, rng).samples

    def _reference_run(self, n, rng):
        # The likelihood sees theta_3, theta_4 only through their squares and the box is
        # symmetric, so the posterior is four mirror images of its theta_3, theta_4 >= 0 part.
        # Sampling that part and attaching uniform random signs is exact and mixes far
        # better than letting one adapted proposal straddle all four modes.
        def log_target(th):
            ok = self.in_support(th) & (th[:, 2] >= 0) & (th[:, 3] >= 0)
            return np.where(ok, self.log_likelihood(th), -np.inf)

        init = self.theta_true.copy()
        init[2:4] = np.abs(init[2:4])
        res = rw_metropolis(log_target, init, _reference_mh_config(n, self.high - self.low, rng), n=n)
        signs = np.where(rng.random((len(res.samples), 2)) < 0.5, -1.0, 1.0)
        res.samples[:, 2:4] *= signs
        return res


def _reference_mh_config(n: int, scale, rng) -> MhConfig:
    """8 chains, 10k burn-in, and enough steps to keep ~100 steps between retained draws."""
    per_chain = -(-int(n) // 8)
    return MhConfig(
        n_chains=8,
        n_steps=10_000 + max(10_000, 100 * per_chain),
        burn_in=10_000,
        proposal_scale=0.1 * np.asarray(scale, dtype=float),
        seed=int(rng.integers(2**31)),
    )


def glm_prior_cov() -> np.ndarray:
    """Smoothness prior: var 2 on the intercept, (F^T F)^{-1} on the 9 filter weights."""
    F = np.zeros((9, 9))
    for j in range(9):
        F[j, j] = 1.0 + np.sqrt(j / 9.0)
        if j >= 1:
            F[j, j - 1] = -2.0
        if j >= 2:
            F[j, j - 2] = 1.0
    cov = np.zeros((10, 10))
    cov[0, 0] = 2.0
    cov[1:, 1:] = np.linalg.inv(F.T @ F)
    return 0.5 * (cov + cov.T)


class BernoulliGlm(Task):
    """Bernoulli spiking GLM on a 100-bin white-noise stimulus; x = X^T y."""

    name = "bernoulli_glm"
    dim_theta = 10
    dim_x = 10
    T = 100

    def __init__(self, with_x_obs: bool = True):
        stim = _load("glm_stimulus.csv")
        X = np.zeros((self.T, 10))
        X[:, 0] = 1.0
        for lag in range(9):
            X[lag:, 1 + lag] = stim[: self.T - lag]
        self.design = X
        self.prior_mean = np.zeros(10)
        self.prior_cov = glm_prior_cov()
        self.theta_true = np.array([0.955, -0.452, 0.223, 1.105, 0.271, -0.358, -0.672, -0.206, 0.306, -0.436])
        self.x_obs = _load("bernoulli_glm_x_obs.csv") if with_x_obs else None

    def _simulate(self, theta, rng):
        p = 1.0 / (1.0 + np.exp(-(theta @ self.design.T)))
        y = (rng.random(p.shape) < p).astype(float)
        return y @ self.design

    def log_likelihood(self, theta, x=None):
        # the likelihood depends on y only through S = X^T y
        S = self.x_obs if x is None else np.asarray(x, dtype=float)
        eta = np.atleast_2d(theta) @ self.design.T
        return np.atleast_2d(theta) @ S - np.sum(np.logaddexp(0.0, eta), axis=1)

    def reference_run(self, n: int, seed=None) -> MhResult:
        """The Metropolis run behind ``reference_posterior_sample``, with diagnostics."""
        return self._reference_run(n, np.random.default_rng(seed))

    def _reference(self, n, rng):
        return self._reference_run(n, rng).samples

    def _reference_run(self, n, rng):
        def log_target(th):
            return self.log_likelihood(th) + self.prior_log_prob(th)

        return rw_metropolis(log_target, self.theta_true, _reference_mh_config(n, self.prior_range, rng), n=n)


class Sisson(Task):
    """3-D mixture of 8 sign-flipped Gaussians, mixing weight 0.7; theta ~ U(-20, 40)^3."""

    name = "sisson"
    dim_theta = 3
    dim_x = 3
    omega = 0.7

    def __init__(self):
        self.low = -20.0 * np.ones(3)
        self.high = 40.0 * np.ones(3)
        self.x_obs = 5.0 * np.ones(3)
        self.theta_true = None
        self.Sigma = np.full((3, 3), 0.7) + 0.3 * np.eye(3)
        self._chol = np.linalg.cholesky(self.Sigma)

    def _signs(self, m, rng):
        b = rng.random((m, 3)) < (1 - self.omega)  # b_i = 1 with prob 1 - omega
        return 1.0 - 2.0 * b

    def _simulate(self, theta, rng):
        D = self._signs(len(theta), rng)
        return D * theta + rng.standard_normal(theta.shape) @ self._chol.T

    def _reference(self, n, rng):
        def draw(m, r):
            D = self._signs(m, r)
            # theta ~ N(D x_obs, D Sigma D)
            return D * (self.x_obs + r.standard_normal((m, 3)) @ self._chol.T)

        return _rejection_fill(draw, n, self.in_support, rng)


TASK_CLASSES = {cls.name: cls for cls in (Gmm1d, BayesLinearRegression, TwoMoons, Slcp, BernoulliGlm, Sisson)}

DEFAULT_BUDGETS = {
    "gmm1d": (100, 200, 300, 400, 500, 750, 1000, 1250, 1500, 1750, 2000),
    "two_moons": (100, 200, 300, 400, 500, 750, 1000, 1250, 1500, 1750, 2000),
    "sisson": (250, 500, 1000, 1500, 2500, 5000, 7500),
    "slcp": (250, 500, 1000, 2500, 5000, 7500),
    "bayes_lr": (250, 500, 750, 1000, 1500, 2500, 5000, 7500, 10000),
    "bernoulli_glm": (250, 500, 1000, 1500, 2500, 5000, 7500, 10000),
}
SNLE_BUDGETS = (250, 500, 1000, 2500, 5000, 7500, 10000)

_CACHE: dict = {}


def task_names() -> list[str]:
    return list(TASK_CLASSES)


def register_task(cls: type[Task]) -> type[Task]:
    """Add a Task subclass to the registry (usable as a decorator)."""
    if not (isinstance(cls, type) and issubclass(cls, Task)) or not cls.name:
        raise TypeError("expected a named Task subclass")
    TASK_CLASSES[cls.name] = cls
    clear_cache()
    return cls


def get_task(name: str, **kw) -> Task:
    if name not in TASK_CLASSES:
        raise UnknownTaskError(f"unknown task {name!r}; choose from {', '.join(TASK_CLASSES)}")
    key = (name, tuple(sorted(kw.items())))
    if key not in _CACHE:
        _CACHE[key] = TASK_CLASSES[name](**kw)
    return _CACHE[key]


def clear_cache() -> None:
    _CACHE.clear()
    _reference_cached.cache_clear()


@functools.lru_cache(maxsize=64)
def _reference_cached(name: str, n: int, seed: int) -> np.ndarray:
    out = get_task(name).reference_posterior_sample(n, seed)
    out.setflags(write=False)
    return out


def prior_sample(task: Task | str, n: int, seed=None) -> np.ndarray:
    task = get_task(task) if isinstance(task, str) else task
    return task.prior_sample(n, seed)


def simulate(task: Task | str, theta, seed=None) -> np.ndarray:
    task = get_task(task) if isinstance(task, str) else task
    return task.simulate(theta, seed)


def reference_posterior_sample(task: Task | str, n: int, seed: int = 0) -> np.ndarray:
    """Reference draws at x_obs; memoized per (task, n, seed) since MH references are slow."""
    name = task if isinstance(task, str) else task.name
    return _reference_cached(name, int(n), int(seed)).copy()
