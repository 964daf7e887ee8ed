"""Conditional Gaussian-mixture density network.

The same class serves as posterior estimator q(theta | x) and, with the roles
of condition and event swapped, as a likelihood surrogate q(x | theta).

Each component is parameterized by its mean and an upper-triangular factor
``U`` of the precision matrix (``precision = U^T U``, diagonal stored as
log), so the covariance is ``L L^T`` with ``L = U^{-1}``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .nn_core import Mlp, TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class LeakageError(RuntimeError):
    """Too many samples fell outside the prior support."""


@dataclass(frozen=True)
class TruncationPolicy:
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    max_attempts_factor: int = 100

    def __post_init__(self):
        if (self.low is None) != (self.high is None):
            raise ValueError("give both low and high, or neither")
        if self.low is not None:
            low = np.asarray(self.low, dtype=float)
            high = np.asarray(self.high, dtype=float)
            if low.shape != high.shape or np.any(low >= high):
                raise ValueError("box bounds need low < high per dimension")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)
        if self.max_attempts_factor < 1:
            raise ValueError("max_attempts_factor must be positive")

    @property
    def bounded(self) -> bool:
        return self.low is not None

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if not self.bounded:
            return np.ones(len(pts), dtype=bool)
        return np.all((pts >= self.low) & (pts <= self.high), axis=1)


UNBOUNDED = TruncationPolicy()


def _n_chol(d: int) -> int:
    return d * (d + 1) // 2


class Mdn:
    """Mixture density network ``q(event | condition)``.

    ``net`` maps the standardized condition to the raw mixture parameters:
    ``K`` logits, ``K*d`` means and ``K*d*(d+1)/2`` precision-factor entries.
    """

    def __init__(
        self,
        cond_dim: int,
        event_dim: int,
        n_components: int = 5,
        hidden: tuple[int, ...] = (50, 50),
        activation: str = "tanh",
        seed=None,
    ):
        self.cond_dim = int(cond_dim)
        self.d = int(event_dim)
        self.K = int(n_components)
        self.hidden = tuple(hidden)
        n_out = self.K + self.K * self.d + self.K * _n_chol(self.d)
        rng = np.random.default_rng(seed)
        self.net = Mlp([self.cond_dim, *self.hidden, n_out], activation=activation, rng=rng)
        # spread initial means so components do not start identical
        w_last = self.net.weights[-1]
        self.net.biases[-1][self.K : self.K + self.K * self.d] = rng.normal(0.0, 1.0, self.K * self.d)
        w_last[self.K + self.K * self.d :] *= 0.1
        iu = np.triu_indices(self.d)
        self._iu = iu
        self._diag_mask = iu[0] == iu[1]
        self.cond_shift = np.zeros(self.cond_dim)
        self.cond_scale = np.ones(self.cond_dim)
        self.event_shift = np.zeros(self.d)
        self.event_scale = np.ones(self.d)

    # parameters are those of the network; standardization is fixed state
    @property
    def params(self):
        return self.net.params

    @params.setter
    def params(self, values):
        self.net.params = values

    def set_standardization(self, conditions, events) -> None:
        conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
        events = np.atleast_2d(np.asarray(events, dtype=float))
        self.cond_shift = conditions.mean(axis=0)
        self.cond_scale = _safe_std(conditions)
        self.event_shift = events.mean(axis=0)
        self.event_scale = _safe_std(events)

    def copy(self) -> "Mdn":
        other = Mdn.__new__(Mdn)
        other.__dict__.update(self.__dict__)
        other.net = self.net.copy()
        return other

    # ---- raw parameter handling ---------------------------------------
    def _split(self, raw):
        K, d = self.K, self.d
        logits = raw[:, :K]
        means = raw[:, K : K + K * d].reshape(-1, K, d)
        chol = raw[:, K + K * d :].reshape(-1, K, _n_chol(d))
        return logits, means, chol

    def _factor(self, chol):
        """Upper-triangular precision factors, shape (B, K, d, d)."""
        B = chol.shape[0]
        U = np.zeros((B, self.K, self.d, self.d))
        vals = np.where(self._diag_mask, np.exp(np.clip(chol, -30, 30)), chol)
        U[:, :, self._iu[0], self._iu[1]] = vals
        return U

    def mixture_params(self, condition):
        """Mixture weights, means and covariances in original units for one condition."""
        c = np.atleast_2d(np.asarray(condition, dtype=float))
        raw = self.net.forward((c - self.cond_shift) / self.cond_scale)
        logits, means, chol = self._split(raw)
        U = self._factor(chol)[0]
        w = _softmax(logits)[0]
        L = np.linalg.inv(U)
        cov = L @ np.swapaxes(L, -1, -2)
        scale = self.event_scale
        mu = means[0] * scale + self.event_shift
        cov = cov * np.outer(scale, scale)
        return w, mu, cov

    def _log_prob_std(self, raw, events, need_grad: bool):
        """Log density of standardized events (B, M, d) under raw params (B, P).

        Returns logp (B, M) and, if requested, a closure mapping an upstream
        gradient (B, M) to the gradient w.r.t. ``raw``.
        """
        K, d = self.K, self.d
        logits, means, chol = self._split(raw)
        U = self._factor(chol)
        log_w = logits - _logsumexp(logits, axis=1, keepdims=True)  # (B, K)
        r = events[:, :, None, :] - means[:, None, :, :]  # (B, M, K, d)
        s = np.einsum("bkij,bmkj->bmki", U, r)  # (B, M, K, d)
        logdet = np.sum(chol[:, :, self._diag_mask], axis=-1)  # (B, K)
        comp = logdet[:, None, :] - 0.5 * np.sum(s * s, axis=-1) - 0.5 * d * LOG_2PI
        joint = log_w[:, None, :] + comp  # (B, M, K)
        logp = _logsumexp(joint, axis=2)
        if not need_grad:
            return logp, None

        def grad(upstream):
            g = np.asarray(upstream, dtype=float)  # (B, M)
            gamma = np.exp(joint - logp[:, :, None]) * g[:, :, None]  # (B, M, K)
            w = np.exp(log_w)
            d_logits = gamma.sum(axis=1) - w * g.sum(axis=1)[:, None]
            # d comp / d mean = U^T s ; d comp / d U = -s r^T
            Uts = np.einsum("bkji,bmkj->bmki", U, s)
            d_means = np.einsum("bmk,bmki->bki", gamma, Uts)
            dU = -np.einsum("bmk,bmki,bmkj->bkij", gamma, s, r)
            d_chol = dU[:, :, self._iu[0], self._iu[1]]
            diag_vals = U[:, :, self._iu[0], self._iu[1]][:, :, self._diag_mask]
            d_chol[:, :, self._diag_mask] = (
                d_chol[:, :, self._diag_mask] * diag_vals + gamma.sum(axis=1)[:, :, None]
            )
            return np.concatenate(
                [d_logits, d_means.reshape(len(g), K * d), d_chol.reshape(len(g), -1)], axis=1
            )

        return logp, grad

    def _std_cond(self, conditions):
        return (conditions - self.cond_shift) / self.cond_scale

    def _std_event(self, events):
        return (events - self.event_shift) / self.event_scale

    def log_prob(self, events, conditions):
        """Log density of ``events[i]`` given ``conditions[i]`` (row-aligned).

        A single condition row broadcasts across all events.
        """
        events = np.atleast_2d(np.asarray(events, dtype=float))
        conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
        if events.shape[1] != self.d or conditions.shape[1] != self.cond_dim:
            raise ValueError("event/condition width does not match the model")
        if not (np.all(np.isfinite(events)) and np.all(np.isfinite(conditions))):
            raise ValueError("non-finite input to log_prob")
        log_jac = -np.sum(np.log(self.event_scale))
        if len(conditions) == 1 and len(events) > 1:
            raw = self.net.forward(self._std_cond(conditions))
            lp, _ = self._log_prob_std(raw, self._std_event(events)[None], need_grad=False)
            return lp[0] + log_jac
        if len(conditions) != len(events):
            raise ValueError("need one condition per event or a single condition")
        raw = self.net.forward(self._std_cond(conditions))
        lp, _ = self._log_prob_std(raw, self._std_event(events)[:, None, :], need_grad=False)
        return lp[:, 0] + log_jac

    def sample_unbounded(self, n: int, conditions, rng) -> np.ndarray:
        """``n`` draws per condition row, returned as (n_cond * n, d) grouped by row."""
        conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
        raw = self.net.forward(self._std_cond(conditions))
        logits, means, chol = self._split(raw)
        U = self._factor(chol)
        w = _softmax(logits)
        B = len(conditions)
        out = np.empty((B, n, self.d))
        for b in range(B):
            ks = _categorical(w[b], n, rng)
            z = rng.standard_normal((n, self.d))
            for k in np.unique(ks):
                sel = ks == k
                # x = mu + U^{-1} z
                out[b, sel] = means[b, k] + np.linalg.solve(U[b, k], z[sel].T).T
        return (out * self.event_scale + self.event_shift).reshape(B * n, self.d)

    # ---- serialization ------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": "mdn",
            "cond_dim": self.cond_dim,
            "event_dim": self.d,
            "n_components": self.K,
            "hidden": list(self.hidden),
            "activation": self.net.activation,
            "params": [p.tolist() for p in self.net.params],
            "cond_shift": self.cond_shift.tolist(),
            "cond_scale": self.cond_scale.tolist(),
            "event_shift": self.event_shift.tolist(),
            "event_scale": self.event_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "Mdn":
        m = cls(
            blob["cond_dim"],
            blob["event_dim"],
            blob["n_components"],
            tuple(blob["hidden"]),
            blob["activation"],
        )
        m.net.params = [np.asarray(p, dtype=float) for p in blob["params"]]
        for key in ("cond_shift", "cond_scale", "event_shift", "event_scale"):
            setattr(m, key, np.asarray(blob[key], dtype=float))
        return m

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Mdn":
        return cls.from_dict(json.loads(text))


def _safe_std(a):
    sd = a.std(axis=0)
    return np.where(sd > 1e-12, sd, 1.0)


def _logsumexp(a, axis, keepdims=False):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def _softmax(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _categorical(p, n, rng):
    c = np.cumsum(p)
    c[-1] = 1.0
    return np.searchsorted(c, rng.random(n), side="right").clip(0, len(p) - 1)


def mdn_log_prob(model: Mdn, event, condition) -> float:
    return float(model.log_prob(np.atleast_2d(event), np.atleast_2d(condition))[0])


def mdn_sample(model: Mdn, condition, n: int, policy: TruncationPolicy = UNBOUNDED, seed=None):
    """Draw ``n`` events for one condition, rejecting draws outside ``policy``'s box."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    condition = np.atleast_2d(np.asarray(condition, dtype=float))
    if not policy.bounded:
        return model.sample_unbounded(n, condition, rng)
    budget = policy.max_attempts_factor * n
    kept = []
    n_kept = attempts = 0
    while n_kept < n:
        if attempts >= budget:
            raise LeakageError(
                f"rejection budget of {budget} draws exhausted with {n_kept}/{n} accepted "
                f"at condition {condition[0].tolist()}"
            )
        remaining = n - n_kept
        acc_rate = max(n_kept / attempts, 0.01) if attempts else 1.0
        batch = int(min(budget - attempts, max(remaining / acc_rate * 1.2, remaining, 64)))
        draws = model.sample_unbounded(batch, condition, rng)
        attempts += batch
        good = draws[policy.contains(draws)]
        kept.append(good[:remaining])
        n_kept += len(kept[-1])
    return np.concatenate(kept, axis=0)


def mdn_sample_many(model: Mdn, conditions, policy: TruncationPolicy = UNBOUNDED, seed=None):
    """One event per condition row (vectorized), with per-row rejection for box policies."""
    rng = np.random.default_rng(seed)
    conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
    out = model.sample_unbounded(1, conditions, rng)
    if not policy.bounded:
        return out
    bad = ~policy.contains(out)
    tries = 1
    while bad.any():
        if tries >= policy.max_attempts_factor:
            i = int(np.flatnonzero(bad)[0])
            raise LeakageError(f"rejection budget exhausted at condition {conditions[i].tolist()}")
        out[bad] = model.sample_unbounded(1, conditions[bad], rng)
        bad[bad] = ~policy.contains(out[bad])
        tries += 1
    return out


# ---- training -----------------------------------------------------------


def _mle_loss(model: Mdn, cond, events, need_grad=True):
    raw, cache = model.net.forward(cond, return_cache=True)
    logp, grad_fn = model._log_prob_std(raw, events[:, None, :], need_grad)
    loss = -float(np.mean(logp))
    if not need_grad:
        return loss, None
    g_raw = grad_fn(-np.ones_like(logp) / len(logp))
    return loss, model.net.backward(cache, g_raw)


def _prepare(model: Mdn, conditions, events, standardize: bool):
    conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
    events = np.atleast_2d(np.asarray(events, dtype=float))
    if len(conditions) != len(events) or len(events) < 2:
        raise ValueError("need at least 2 aligned (condition, event) pairs")
    if conditions.shape[1] != model.cond_dim or events.shape[1] != model.d:
        raise ValueError("pair widths do not match the model")
    if standardize:
        model.set_standardization(conditions, events)
    return model._std_cond(conditions), model._std_event(events)


def fit_mle(model: Mdn, conditions, events, cfg: TrainConfig | None = None, standardize: bool = True) -> TrainResult:
    """Maximum-likelihood training: minimize mean ``-log q(event | condition)``."""
    cfg = cfg or TrainConfig()
    c, e = _prepare(model, conditions, events, standardize)
    result = train(model, (c, e), _mle_loss, cfg)
    if result.failed:
        logger.warning("fit_mle: %s", result.message)
    return result


def atomic_loss(model: Mdn, cond, events, prior_terms, n_atoms: int, rng, need_grad=True):
    """Contrastive loss: identify each pair's own event among ``n_atoms`` candidates.

    ``prior_terms[i]`` is the prior log-density of ``events[i]`` (any additive
    constant cancels). Contrast events are drawn without replacement from the
    other rows of the batch.
    """
    B = len(events)
    if n_atoms > B:
        raise ValueError(f"atom count {n_atoms} exceeds batch size {B}")
    # row b: [b, M-1 distinct others]
    others = np.argsort(rng.random((B, B - 1)), axis=1)[:, : n_atoms - 1]
    base = np.arange(B)[:, None]
    idx_others = others + (others >= base)  # skip the diagonal
    idx = np.concatenate([base, idx_others], axis=1)  # (B, M)
    atoms = events[idx]  # (B, M, d)
    raw, cache = model.net.forward(cond, return_cache=True)
    logp, grad_fn = model._log_prob_std(raw, atoms, need_grad)
    logits = logp - prior_terms[idx]
    lse = _logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[:, 0]))
    if not need_grad:
        return loss, None
    sm = np.exp(logits - lse[:, None])
    g = sm.copy()
    g[:, 0] -= 1.0
    g /= B
    return loss, model.net.backward(cache, grad_fn(g))


def fit_atomic(
    model: Mdn,
    conditions,
    events,
    prior_log_density: Callable[[np.ndarray], np.ndarray],
    n_atoms: int = 10,
    cfg: TrainConfig | None = None,
    standardize: bool = False,
) -> TrainResult:
    """Train with the atomic contrastive loss over ``n_atoms`` candidates per pair.

    Validation batches use a fixed-seed atom draw so the early-stopping signal
    is deterministic.
    """
    cfg = cfg or TrainConfig()
    if n_atoms < 2:
        raise ValueError("n_atoms must be >= 2")
    if cfg.batch_size < n_atoms:
        raise ValueError(f"atom count {n_atoms} exceeds batch size {cfg.batch_size}")
    events_raw = np.atleast_2d(np.asarray(events, dtype=float))
    c, e = _prepare(model, conditions, events_raw, standardize)
    prior_terms = np.asarray(prior_log_density(events_raw), dtype=float)
    rng = np.random.default_rng(cfg.seed + 7919)

    def loss_fn(m, cond, ev, pt, need_grad=True):
        if not need_grad:
            # deterministic atoms; a tiny validation set is scored as a single batch
            m_atoms = min(n_atoms, len(ev))
            if m_atoms < 2:
                return 0.0, None
            return atomic_loss(m, cond, ev, pt, m_atoms, np.random.default_rng(cfg.seed), False)
        m_atoms = min(n_atoms, len(ev))
        if m_atoms < 2:
            return 0.0, [np.zeros_like(p) for p in m.params]
        return atomic_loss(m, cond, ev, pt, m_atoms, rng, True)

    result = train(model, (c, e, prior_terms), loss_fn, cfg)
    if result.failed:
        logger.warning("fit_atomic: %s", result.message)
    return result


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=int(seed))
