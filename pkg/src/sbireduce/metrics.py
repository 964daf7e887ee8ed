"""Sample-based distances between an approximate and a reference posterior."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .nn_core import Mlp, TrainConfig, train


@dataclass
class MetricTriple:
    mmd2: float
    c2st: float
    ed2: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class LocDispReport:
    m1: float  # scaled distance, sample median to truth
    m2: float  # scaled distance, sample mean to truth
    m3: float  # mean scaled SD
    m4: float  # mean scaled 15-85% inter-quantile range

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = A[:, None] if A.ndim == 1 else A
    B = B[:, None] if B.ndim == 1 else B
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def _scale(X) -> float:
    """Largest absolute coordinate, or 1; dividing by it keeps squared distances from under/overflowing."""
    s = float(np.max(np.abs(X))) if X.size else 0.0
    return s if 0.0 < s < np.inf else 1.0


def median_heuristic(pooled) -> float:
    """Median pairwise Euclidean distance, ignoring exact zeros."""
    pooled = np.asarray(pooled, dtype=float)
    pooled = pooled[:, None] if pooled.ndim == 1 else pooled
    s = _scale(pooled)
    d = pdist(pooled / s)
    d = d[d > 0]
    if d.size == 0:
        raise ValueError("median heuristic needs at least two distinct points")
    return float(np.median(d)) * s


def mmd2(A, B, bandwidth: float | None = None) -> float:
    """Squared MMD (biased V-statistic) with a Gaussian kernel."""
    A, B = _pair(A, B)
    if A.shape == B.shape and np.array_equal(A, B):
        return 0.0
    s = _scale(np.vstack([A, B]))
    A, B = A / s, B / s
    sigma = (bandwidth / s) if bandwidth is not None else median_heuristic(np.vstack([A, B]))
    g = -0.5 / sigma**2
    kaa = np.exp(g * cdist(A, A, "sqeuclidean")).mean()
    kbb = np.exp(g * cdist(B, B, "sqeuclidean")).mean()
    kab = np.exp(g * cdist(A, B, "sqeuclidean")).mean()
    return float(max(kaa + kbb - 2.0 * kab, 0.0))


def ed2(A, B) -> float:
    """Squared energy distance, V-statistic (self-pairs included)."""
    A, B = _pair(A, B)
    if A.shape == B.shape and np.array_equal(A, B):
        return 0.0
    s = _scale(np.vstack([A, B]))
    A, B = A / s, B / s
    val = 2.0 * cdist(A, B).mean() - cdist(A, A).mean() - cdist(B, B).mean()
    return float(max(val, 0.0) * s)


def _bce_loss(net: Mlp, x, y, need_grad=True):
    out, cache = net.forward(x, return_cache=True)
    z = out[:, 0]
    # log(1 + e^z) - y z, stable
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    if not need_grad:
        return loss, None
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    g = ((p - y) / len(y))[:, None]
    return loss, net.backward(cache, g)


C2ST_TRAIN = TrainConfig(batch_size=200, max_epochs=300, validation_fraction=0.1, patience=10, step_size=1e-2, clip_norm=None)


def _stratified_folds(y, k, rng):
    folds = np.empty(len(y), dtype=int)
    for label in (0, 1):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % k
    return folds


def c2st(A, B, seed: int = 0, n_folds: int = 5, train_cfg: TrainConfig | None = None) -> float:
    """Cross-validated accuracy of an MLP classifier separating A (label 0) from B (label 1)."""
    A, B = _pair(A, B)
    if len(A) < 50 or len(B) < 50:
        raise ValueError("c2st needs at least 50 points per sample")
    if max(len(A), len(B)) > 10 * min(len(A), len(B)):
        raise ValueError("class imbalance beyond 10:1")
    X = np.vstack([A, B])
    y = np.concatenate([np.zeros(len(A)), np.ones(len(B))])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    X = (X - mu) / np.where(sd > 0, sd, 1.0)
    d = X.shape[1]
    rng = np.random.default_rng(seed)
    folds = _stratified_folds(y, n_folds, rng)
    base_cfg = train_cfg or C2ST_TRAIN
    accs = []
    for k in range(n_folds):
        tr, te = folds != k, folds == k
        net = Mlp([d, 10 * d, 10 * d, 1], activation="relu", rng=rng.integers(2**31))
        cfg = TrainConfig(**{**base_cfg.__dict__, "seed": int(rng.integers(2**31))})
        train(net, (X[tr], y[tr]), _bce_loss, cfg)
        pred = net.forward(X[te])[:, 0] > 0
        accs.append(np.mean(pred == (y[te] == 1)))
    return float(np.mean(accs))


def metric_triple(approx, reference, seed: int = 0) -> MetricTriple:
    return MetricTriple(mmd2=mmd2(approx, reference), c2st=c2st(approx, reference, seed), ed2=ed2(approx, reference))


def loc_disp(sample, theta_true, prior_ranges) -> LocDispReport:
    """Location/dispersion summaries, each scaled by the prior range per dimension."""
    s = np.asarray(sample, dtype=float)
    s = s[:, None] if s.ndim == 1 else s
    rng_ = np.broadcast_to(np.asarray(prior_ranges, dtype=float), (s.shape[1],))
    if np.any(rng_ <= 0):
        raise ValueError("prior ranges must be positive")
    truth = np.asarray(theta_true, dtype=float)
    m1 = np.linalg.norm((np.median(s, axis=0) - truth) / rng_)
    m2 = np.linalg.norm((s.mean(axis=0) - truth) / rng_)
    m3 = np.mean(s.std(axis=0) / rng_)
    q15, q85 = np.quantile(s, [0.15, 0.85], axis=0, method="linear")
    m4 = np.mean((q85 - q15) / rng_)
    return LocDispReport(float(m1), float(m2), float(m3), float(m4))
