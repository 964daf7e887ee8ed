"""Random-walk Metropolis with vectorized chains and split-R-hat."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


class MhError(RuntimeError):
    pass


@dataclass
class MhConfig:
    n_chains: int = 8
    n_steps: int = 20000
    burn_in: int = 10000
    thin: int = 1
    proposal_scale: float | np.ndarray = 0.1
    seed: int = 0
    adapt: bool = True

    def __post_init__(self):
        if self.n_steps <= self.burn_in:
            raise ValueError("n_steps must exceed burn_in")
        if self.thin < 1 or self.n_chains < 1:
            raise ValueError("thin and n_chains must be >= 1")


@dataclass
class MhResult:
    samples: np.ndarray  # pooled post-burn-in draws, (n, d)
    chains: np.ndarray  # (n_chains, n_kept, d)
    acceptance_rate: float
    rhat: np.ndarray  # split-R-hat per dimension

    @property
    def converged(self) -> bool:
        return bool(np.all(self.rhat < 1.05))


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-R-hat per dimension for chains shaped (n_chains, n_draws, d)."""
    c, n, d = chains.shape
    half = n // 2
    if half < 2:
        return np.full(d, np.nan)
    parts = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    m = parts.shape[0]
    means = parts.mean(axis=1)
    within = parts.var(axis=1, ddof=1).mean(axis=0)
    between = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * within + between / half
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / within)
    return np.where(within > 0, r, 1.0)


def rw_metropolis(
    log_target: Callable[[np.ndarray], np.ndarray],
    init,
    cfg: MhConfig,
    n: int | None = None,
    moves: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
) -> MhResult:
    """Gaussian random-walk Metropolis over ``cfg.n_chains`` parallel chains.

    ``log_target`` maps an (n_chains, d) array to (n_chains,) log densities.
    ``init`` is one point (broadcast, with a small jitter) or one row per chain.
    With ``adapt``, the proposal is tuned during burn-in only (toward ~30%
    acceptance, then to the burn-in covariance), and frozen afterwards.
    ``moves`` optionally applies an extra target-invariant symmetric move
    after every step. When ``n`` is given the pooled sample is thinned to n rows.
    """
    rng = np.random.default_rng(cfg.seed)
    init = np.asarray(init, dtype=float)
    if init.ndim == 1:
        x = np.repeat(init[None], cfg.n_chains, axis=0)
    else:
        if len(init) != cfg.n_chains:
            raise ValueError("need one init row per chain")
        x = init.copy()
    d = x.shape[1]
    lp = np.asarray(log_target(x), dtype=float)
    if not np.all(np.isfinite(lp)):
        raise MhError("log target is not finite at the initial point")
    scale = np.broadcast_to(np.asarray(cfg.proposal_scale, dtype=float), (d,)).copy()
    chol = np.diag(scale)
    log_mult = 0.0
    n_keep_per_chain = (cfg.n_steps - cfg.burn_in + cfg.thin - 1) // cfg.thin
    kept = np.empty((cfg.n_chains, n_keep_per_chain, d))
    burn_hist = []
    accepted_burn = accepted_main = 0
    window_acc = 0
    k = 0
    for step in range(cfg.n_steps):
        prop = x + np.exp(log_mult) * rng.standard_normal((cfg.n_chains, d)) @ chol.T
        lp_prop = np.asarray(log_target(prop), dtype=float)
        accept = np.log(rng.random(cfg.n_chains)) < (lp_prop - lp)
        accept &= np.isfinite(lp_prop)
        x = np.where(accept[:, None], prop, x)
        lp = np.where(accept, lp_prop, lp)
        if moves is not None:
            x = moves(x, rng)
        n_acc = int(accept.sum())
        if step < cfg.burn_in:
            accepted_burn += n_acc
            window_acc += n_acc
            if cfg.adapt:
                burn_hist.append(x.copy())
                if (step + 1) % 100 == 0:
                    rate = window_acc / (100 * cfg.n_chains)
                    log_mult += np.clip(rate - 0.3, -0.2, 0.2) * 4.0
                    window_acc = 0
                if step + 1 == cfg.burn_in // 2 and step > 200:
                    hist = np.concatenate(burn_hist[len(burn_hist) // 2 :], axis=0)
                    cov = np.cov(hist, rowvar=False).reshape(d, d) + 1e-12 * np.eye(d)
                    try:
                        chol = np.linalg.cholesky(cov * (2.38**2 / d))
                        log_mult = 0.0
                    except np.linalg.LinAlgError:
                        pass
                    burn_hist = []
            if step + 1 == cfg.burn_in and accepted_burn == 0:
                raise MhError("no proposals accepted during burn-in; reduce the proposal scale")
        else:
            accepted_main += n_acc
            j = step - cfg.burn_in
            if j % cfg.thin == 0:
                kept[:, k] = x
                k += 1
    rate = accepted_main / ((cfg.n_steps - cfg.burn_in) * cfg.n_chains)
    rhat = split_rhat(kept)
    if n is None:
        pooled = kept.transpose(1, 0, 2).reshape(-1, d)
    else:
        if n > cfg.n_chains * n_keep_per_chain:
            raise ValueError(f"requested {n} draws but the chains kept only {cfg.n_chains * n_keep_per_chain}")
        # evenly spaced in time within every chain, time-major so any prefix spans all chains
        per_chain = -(-n // cfg.n_chains)
        idx = np.linspace(0, n_keep_per_chain - 1, per_chain).round().astype(int)
        pooled = kept[:, idx].transpose(1, 0, 2).reshape(-1, d)[:n]
    if np.any(rhat > 1.05):
        logger.warning("MH split-R-hat above 1.05: %s", np.round(rhat, 3).tolist())
    return MhResult(samples=pooled, chains=kept, acceptance_rate=float(rate), rhat=rhat)
