"""Two-round sequential posterior estimation and its simulator-saving variants.

Methods
-------
regular         budget split evenly over rounds; atomic refits after round 1
surrogate       whole budget in round 1, then a likelihood model stands in
                for the simulator (multiplier x budget synthetic pairs)
sp              every round simulates support points of an oversampled proposal
combined        support points in round 1, surrogate afterwards (no SP there)
snle            likelihood model + Metropolis sampling of the posterior
snle_surrogate  likelihood model used as a surrogate, then a posterior model
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .density import (
    UNBOUNDED,
    LeakageError,
    Mdn,
    TruncationPolicy,
    fit_atomic,
    fit_mle,
    mdn_sample,
    mdn_sample_many,
)
from .mcmc import MhConfig, rw_metropolis
from .nn_core import TrainConfig
from .support_points import SpConfig, support_points_run
from .tasks import Task, get_task

logger = logging.getLogger(__name__)

METHODS = ("regular", "surrogate", "sp", "combined", "snle", "snle_surrogate")
SCHEDULES = ("surrogate_after_first", "alternate")


class UnknownMethodError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class NdeConfig:
    n_components: int = 5
    hidden: tuple[int, ...] = (50, 50)
    activation: str = "tanh"
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class InferenceConfig:
    task: str
    budget: int
    method: str = "regular"
    rounds: int = 2
    surrogate_mult: float = 10
    sp_oversample: float = 2
    atoms: int = 10
    nde: NdeConfig = field(default_factory=NdeConfig)
    seed: int = 0
    n_post: int = 5000
    schedule: str = "surrogate_after_first"
    mh_steps: int = 4000
    mh_burn_in: int = 2000

    def __post_init__(self):
        if self.method not in METHODS:
            raise UnknownMethodError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.method in ("regular", "sp", "snle") and self.budget < 2 * self.rounds:
            raise ValueError("budget must be at least 2 * rounds")
        if self.budget < 2:
            raise ValueError("budget must be >= 2")
        if self.surrogate_mult < 1:
            raise ValueError("surrogate multiplier must be >= 1")
        if self.sp_oversample < 1:
            raise ValueError("sp oversample factor must be >= 1")
        if self.atoms < 2:
            raise ValueError("atoms must be >= 2")


@dataclass
class PosteriorResult:
    samples: np.ndarray
    posterior: object
    surrogate: Mdn | None
    simulator_calls: int
    wall_time: float
    diagnostics: dict = field(default_factory=dict)


class CountingSimulator:
    """Wraps a task simulator, counts calls and refuses to exceed the budget."""

    def __init__(self, task: Task, budget: int):
        self.task = task
        self.budget = int(budget)
        self.calls = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.calls

    def __call__(self, theta, seed) -> np.ndarray:
        theta = np.atleast_2d(theta)
        if self.calls + len(theta) > self.budget:
            raise BudgetExceeded(f"{self.calls} + {len(theta)} simulations exceed the budget of {self.budget}")
        self.calls += len(theta)
        return self.task.simulate(theta, seed)


def split_budget(budget: int, parts: int) -> list[int]:
    base, extra = divmod(int(budget), parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


class _Run:
    """Shared state for one inference run."""

    def __init__(self, cfg: InferenceConfig):
        self.cfg = cfg
        self.task = get_task(cfg.task)
        self.sim = CountingSimulator(self.task, cfg.budget)
        self._seeds = np.random.SeedSequence(cfg.seed)
        self.policy = (
            TruncationPolicy(self.task.low, self.task.high) if self.task.box else UNBOUNDED
        )
        self.x_obs = np.asarray(self.task.x_obs, dtype=float)
        self.diag: dict = {"train_failures": 0, "leakage_fallbacks": 0}
        self.t0 = time.perf_counter()

    def seed(self) -> int:
        return int(self._seeds.spawn(1)[0].generate_state(1)[0])

    def train_cfg(self) -> TrainConfig:
        return replace(self.cfg.nde.train, seed=self.seed())

    def new_model(self, cond_dim: int, event_dim: int) -> Mdn:
        n = self.cfg.nde
        return Mdn(cond_dim, event_dim, n.n_components, n.hidden, n.activation, seed=self.seed())

    def simulate(self, theta):
        return self.sim(theta, self.seed())

    def note_fit(self, result, what: str):
        if result.failed:
            self.diag["train_failures"] += 1
            self.diag.setdefault("messages", []).append(f"{what}: {result.message}")
        return result

    def proposal(self, posterior: Mdn, n: int) -> np.ndarray:
        try:
            return mdn_sample(posterior, self.x_obs, n, self.policy, self.seed())
        except LeakageError as err:
            self.diag["leakage_fallbacks"] += 1
            self.diag.setdefault("messages", []).append(f"proposal leakage, prior used: {err}")
            return self.task.prior_sample(n, self.seed())

    def fit_posterior_first(self, theta, x) -> Mdn:
        post = self.new_model(self.task.dim_x, self.task.dim_theta)
        self.note_fit(fit_mle(post, x, theta, self.train_cfg()), "posterior (mle)")
        return post

    def refit_posterior(self, post: Mdn, theta, x):
        cfg = self.train_cfg()
        cfg = replace(cfg, batch_size=max(cfg.batch_size, self.cfg.atoms))
        res = fit_atomic(post, x, theta, self.task.prior_log_prob, self.cfg.atoms, cfg)
        self.note_fit(res, "posterior (atomic)")

    def fit_likelihood(self, theta, x, model: Mdn | None = None) -> Mdn:
        first = model is None
        if first:
            model = self.new_model(self.task.dim_theta, self.task.dim_x)
        res = self.note_fit(fit_mle(model, theta, x, self.train_cfg(), standardize=first), "likelihood (mle)")
        if res.failed:
            self.diag["surrogate_failed"] = True
        return model

    def sp_select(self, pool: np.ndarray, n: int) -> np.ndarray:
        if n >= len(pool):
            return pool
        res = support_points_run(pool, SpConfig(n=n, seed=self.seed()))
        if not res.converged:
            self.diag["sp_unconverged"] = self.diag.get("sp_unconverged", 0) + 1
        pts = res.points
        # CCP iterates are convex combinations that can sit on the box face; keep them inside
        if self.task.box:
            pts = np.clip(pts, self.task.low, self.task.high)
        return pts

    def final_samples(self, post: Mdn) -> np.ndarray:
        return mdn_sample(post, self.x_obs, self.cfg.n_post, self.policy, self.seed())

    def finish(self, samples, post, surrogate=None) -> PosteriorResult:
        if self.sim.calls > self.cfg.budget:  # pragma: no cover - guarded by CountingSimulator
            raise AssertionError("simulator budget exceeded")
        return PosteriorResult(
            samples=samples,
            posterior=post,
            surrogate=surrogate,
            simulator_calls=self.sim.calls,
            wall_time=time.perf_counter() - self.t0,
            diagnostics=self.diag,
        )


def run_regular(cfg: InferenceConfig) -> PosteriorResult:
    run = _Run(cfg)
    return _snpe(run, select=None)


def run_sp(cfg: InferenceConfig) -> PosteriorResult:
    run = _Run(cfg)

    def select(pool_draw, n):
        pool = pool_draw(int(np.ceil(cfg.sp_oversample * n)))
        return run.sp_select(pool, n)

    return _snpe(run, select=select)


def _snpe(run: _Run, select) -> PosteriorResult:
    cfg = run.cfg
    thetas, xs = [], []
    post = None
    for r, n in enumerate(split_budget(cfg.budget, cfg.rounds)):
        if post is None:
            draw = lambda m: run.task.prior_sample(m, run.seed())  # noqa: E731
        else:
            draw = lambda m, p=post: run.proposal(p, m)  # noqa: E731
        theta = draw(n) if select is None else select(draw, n)
        thetas.append(theta)
        xs.append(run.simulate(theta))
        if post is None:
            post = run.fit_posterior_first(thetas[0], xs[0])
        else:
            run.refit_posterior(post, np.vstack(thetas), np.vstack(xs))
    return run.finish(run.final_samples(post), post)


def run_surrogate(cfg: InferenceConfig) -> PosteriorResult:
    return _surrogate_snpe(_Run(cfg), use_sp=False)


def run_combined(cfg: InferenceConfig) -> PosteriorResult:
    return _surrogate_snpe(_Run(cfg), use_sp=True)


def _round_plan(cfg: InferenceConfig) -> list[str]:
    if cfg.rounds == 1:
        return ["sim"]
    if cfg.schedule == "alternate":
        return ["sim" if r % 2 == 0 else "sur" for r in range(cfg.rounds)]
    return ["sim"] + ["sur"] * (cfg.rounds - 1)


def _surrogate_snpe(run: _Run, use_sp: bool) -> PosteriorResult:
    cfg = run.cfg
    plan = _round_plan(cfg)
    sim_budgets = iter(split_budget(cfg.budget, plan.count("sim")))
    thetas, xs = [], []
    post = surrogate = None
    last_sim = 0
    for kind in plan:
        if kind == "sim":
            n = next(sim_budgets)
            if post is None:
                draw = lambda m: run.task.prior_sample(m, run.seed())  # noqa: E731
            else:
                draw = lambda m, p=post: run.proposal(p, m)  # noqa: E731
            if use_sp:
                theta = run.sp_select(draw(int(np.ceil(cfg.sp_oversample * n))), n)
            else:
                theta = draw(n)
            x = run.simulate(theta)
            last_sim = n
            real_theta = np.vstack([*thetas, theta]) if thetas else theta
            real_x = np.vstack([*xs, x]) if xs else x
            surrogate = run.fit_likelihood(real_theta, real_x, surrogate)
        else:
            if run.diag.get("surrogate_failed"):
                # no simulator budget remains; keep the current posterior
                logger.warning("surrogate training failed; returning the simulator-round posterior")
                break
            n = int(round(cfg.surrogate_mult * last_sim))
            theta = run.proposal(post, n)
            x = mdn_sample_many(surrogate, theta, UNBOUNDED, run.seed())
        thetas.append(theta)
        xs.append(x)
        if post is None:
            post = run.fit_posterior_first(theta, x)
        else:
            run.refit_posterior(post, np.vstack(thetas), np.vstack(xs))
    run.diag["training_pairs"] = int(sum(len(t) for t in thetas))
    return run.finish(run.final_samples(post), post, surrogate)


def _mh_posterior(run: _Run, likelihood: Mdn, n: int) -> np.ndarray:
    """Metropolis draws from likelihood(x_obs | theta) * prior(theta)."""
    task = run.task
    x_obs = run.x_obs[None]

    def log_target(th):
        lp = task.prior_log_prob(th)
        ok = np.isfinite(lp)
        out = np.full(len(th), -np.inf)
        if ok.any():
            out[ok] = lp[ok] + likelihood.log_prob(np.repeat(x_obs, ok.sum(), axis=0), th[ok])
        return out

    n_chains = 8
    cands = task.prior_sample(1000, run.seed())
    scores = log_target(cands)
    init = cands[np.argsort(scores)[::-1][:n_chains]]
    steps = max(run.cfg.mh_steps, run.cfg.mh_burn_in + -(-n // n_chains))
    mh = MhConfig(
        n_chains=n_chains,
        n_steps=steps,
        burn_in=run.cfg.mh_burn_in,
        proposal_scale=0.1 * task.prior_range,
        seed=run.seed(),
    )
    res = rw_metropolis(log_target, init, mh, n=n)
    run.diag.setdefault("mh_rhat_max", []).append(float(np.nanmax(res.rhat)))
    run.diag.setdefault("mh_acceptance", []).append(res.acceptance_rate)
    return res.samples


def run_snle(cfg: InferenceConfig) -> PosteriorResult:
    run = _Run(cfg)
    thetas, xs = [], []
    lik = None
    for n in split_budget(cfg.budget, cfg.rounds):
        if lik is None:
            theta = run.task.prior_sample(n, run.seed())
        else:
            theta = _mh_posterior(run, lik, n)
        thetas.append(theta)
        xs.append(run.simulate(theta))
        lik = run.fit_likelihood(np.vstack(thetas), np.vstack(xs), lik)
    samples = _mh_posterior(run, lik, cfg.n_post)
    return run.finish(samples, lik, lik)


def run_snle_surrogate(cfg: InferenceConfig) -> PosteriorResult:
    run = _Run(cfg)
    theta = run.task.prior_sample(cfg.budget, run.seed())
    x = run.simulate(theta)
    lik = run.fit_likelihood(theta, x)
    post = run.fit_posterior_first(theta, x)
    n_sur = int(round(cfg.surrogate_mult * cfg.budget))
    theta_s = _mh_posterior(run, lik, n_sur)
    x_s = mdn_sample_many(lik, theta_s, UNBOUNDED, run.seed())
    run.refit_posterior(post, np.vstack([theta, theta_s]), np.vstack([x, x_s]))
    run.diag["training_pairs"] = len(theta) + len(theta_s)
    return run.finish(run.final_samples(post), post, lik)


RUNNERS = {
    "regular": run_regular,
    "surrogate": run_surrogate,
    "sp": run_sp,
    "combined": run_combined,
    "snle": run_snle,
    "snle_surrogate": run_snle_surrogate,
}


def run_method(cfg: InferenceConfig) -> PosteriorResult:
    return RUNNERS[cfg.method](cfg)
