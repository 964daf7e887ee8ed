"""Support points: a small point set that minimizes energy distance to a big sample.

The objective is a difference of convex functions; each sweep linearizes the
repulsive term at the current points and jumps to the minimizer of the
resulting convex majorizer (a Weiszfeld-type closed form).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)


@dataclass
class SpConfig:
    n: int
    max_iter: int = 200
    tol: float | None = None  # absolute; default 1e-6 * max per-dimension range of Y
    eps: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SpResult:
    points: np.ndarray
    converged: bool
    n_iter: int
    objective: list[float]


def _check(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.size == 0 or Y.size == 0:
        raise ValueError("empty point set")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def sp_objective(X, Y) -> float:
    """(2 / nN) sum_i sum_m |y_m - x_i| - (1 / n^2) sum_i sum_j |x_i - x_j|."""
    X, Y = _check(X, Y)
    n, N = len(X), len(Y)
    attract = cdist(X, Y).sum() * 2.0 / (n * N)
    repel = cdist(X, X).sum() / n**2
    return float(attract - repel)


def ccp_step(X, Y, eps: float = 1e-10) -> np.ndarray:
    """One Jacobi sweep of the convex-concave update; every point reads the old X."""
    X, Y = _check(X, Y)
    n, N = len(X), len(Y)
    # a point sitting exactly on a sample would get weight 1/eps and freeze;
    # coincident pairs are dropped instead (the usual Weiszfeld remedy)
    dxy = cdist(X, Y)
    inv_xy = np.where(dxy > eps, 1.0 / np.maximum(dxy, eps), 0.0)
    dxx = cdist(X, X)
    inv_xx = np.where(dxx > eps, 1.0 / np.maximum(dxx, eps), 0.0)
    attract = inv_xy @ Y  # sum_m y_m / d(x_i, y_m)
    # sum_j (x_i - x_j) / d(x_i, x_j)
    repel = X * inv_xx.sum(axis=1)[:, None] - inv_xx @ X
    denom = inv_xy.sum(axis=1)[:, None]
    if np.any(denom == 0):
        raise ValueError("every reference point coincides with a support point")
    return (attract + (N / n) * repel) / denom


def support_points_run(Y, cfg: SpConfig, init=None) -> SpResult:
    """Full solver: seeded subsample init, sweeps until max movement < tol or the cap."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N = len(Y)
    if cfg.n > N:
        raise ValueError(f"n={cfg.n} exceeds the reference sample size {N}")
    if init is None:
        rng = np.random.default_rng(cfg.seed)
        X = Y[rng.choice(N, size=cfg.n, replace=False)].copy()
    else:
        X = np.atleast_2d(np.asarray(init, dtype=float)).copy()
    span = np.ptp(Y, axis=0).max() if N > 1 else 1.0
    tol = cfg.tol if cfg.tol is not None else 1e-6 * (span if span > 0 else 1.0)
    history = [sp_objective(X, Y)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        X_new = ccp_step(X, Y, cfg.eps)
        move = np.max(np.linalg.norm(X_new - X, axis=1))
        X = X_new
        history.append(sp_objective(X, Y))
        if move < tol:
            converged = True
            break
    if not converged:
        logger.info("support points: iteration cap %d reached", cfg.max_iter)
    return SpResult(points=X, converged=converged, n_iter=it, objective=history)


def support_points(Y, cfg: SpConfig) -> np.ndarray:
    return support_points_run(Y, cfg).points
