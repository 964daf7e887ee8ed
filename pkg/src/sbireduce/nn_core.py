"""Small feed-forward networks with hand-written backprop and Adam.

Everything operates on batches: inputs are ``(n, dims[0])`` arrays. A single
vector is promoted to a batch of one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")


class Mlp:
    """Fully connected network, ``weights[l]`` has shape ``(dims[l+1], dims[l])``.

    The output layer is linear; hidden layers use ``activation``.
    """

    def __init__(self, dims: Sequence[int], activation: str = "relu", rng=None):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"layer dims must be >= 2 positive ints, got {dims}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.dims = dims
        self.activation = activation
        rng = np.random.default_rng(rng)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @params.setter
    def params(self, values: Sequence[np.ndarray]) -> None:
        values = list(values)
        if len(values) != 2 * len(self.weights):
            raise ValueError("parameter list length mismatch")
        for i, v in enumerate(values):
            target = self.weights[i // 2] if i % 2 == 0 else self.biases[i // 2]
            if np.shape(v) != target.shape:
                raise ValueError(f"parameter {i} has shape {np.shape(v)}, expected {target.shape}")
        self.weights = [np.array(v, dtype=float) for v in values[0::2]]
        self.biases = [np.array(v, dtype=float) for v in values[1::2]]

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.dims = list(self.dims)
        other.activation = self.activation
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _act(self, z):
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return np.tanh(z)

    def _act_grad(self, z, h):
        if self.activation == "relu":
            return (z > 0).astype(float)
        return 1.0 - h * h

    def forward(self, x, return_cache: bool = False):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dims[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.dims[0]}")
        hs = [x]
        zs = []
        h = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            zs.append(z)
            h = z if l == last else self._act(z)
            hs.append(h)
        out = h[0] if single else h
        if return_cache:
            return out, (hs, zs)
        return out

    def backward(self, cache, grad_out, return_input_grad: bool = False):
        """Gradients of ``sum(grad_out * output)`` w.r.t. the parameters.

        ``grad_out`` has the output's shape. Returns gradients in ``params`` order.
        """
        hs, zs = cache
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        if g.shape != hs[-1].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output {hs[-1].shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for l in range(len(self.weights) - 1, -1, -1):
            if l != len(self.weights) - 1:
                g = g * self._act_grad(zs[l], hs[l + 1])
            grads[2 * l] = g.T @ hs[l]
            grads[2 * l + 1] = g.sum(axis=0)
            g = g @ self.weights[l]
        if return_input_grad:
            return grads, g
        return grads


def forward(net: Mlp, x):
    return net.forward(x)


def backward(net: Mlp, x, upstream):
    _, cache = net.forward(x, return_cache=True)
    return net.backward(cache, upstream)


@dataclass
class AdamState:
    shapes: list[tuple]
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(s) for s in self.shapes]
            self.v = [np.zeros(s) for s in self.shapes]

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls([np.shape(p) for p in params], **kw)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update; returns new params (state is mutated)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    lr_t = state.step_size * np.sqrt(1 - b2**state.t) / (1 - b1**state.t)
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"grad {i} shape {np.shape(g)} != param shape {np.shape(p)}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        out.append(p - lr_t * state.m[i] / (np.sqrt(state.v[i]) + state.eps))
    return out, state


@dataclass
class TrainConfig:
    batch_size: int = 50
    max_epochs: int = 500
    validation_fraction: float = 0.1
    patience: int = 20
    step_size: float = 1e-3
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size/max_epochs must be positive, patience >= 0")


@dataclass
class TrainResult:
    best_val_loss: float
    epochs: int
    failed: bool = False
    initial_val_loss: float = float("nan")
    message: str = ""
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)


LossFn = Callable[..., tuple]


def train(model, dataset: Sequence[np.ndarray], loss_fn: LossFn, cfg: TrainConfig) -> TrainResult:
    """Minibatch Adam with early stopping on a held-out split.

    ``model`` needs a ``params`` property (get/set). ``loss_fn(model, *arrays,
    need_grad)`` returns ``(mean_loss, grads)``; ``grads`` may be None when
    ``need_grad`` is False. The model is left holding the best-validation
    parameters.
    """
    arrays = [np.asarray(a) for a in dataset]
    n = len(arrays[0])
    if n == 0 or any(len(a) != n for a in arrays):
        raise ValueError("dataset arrays must be nonempty with equal length")
    n_val = int(round(cfg.validation_fraction * n))
    n_val = min(max(n_val, 1), n - 1)
    if n - n_val < 1:
        raise ValueError("need at least one training and one validation item")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    tr_idx, va_idx = perm[: n - n_val], perm[n - n_val :]
    train_arrays = [a[tr_idx] for a in arrays]
    val_arrays = [a[va_idx] for a in arrays]
    n_tr = n - n_val

    state = AdamState.for_params(model.params, step_size=cfg.step_size)
    best_params = [p.copy() for p in model.params]
    best_val, _ = loss_fn(model, *val_arrays, need_grad=False)
    best_val = float(best_val) if np.isfinite(best_val) else np.inf
    result = TrainResult(best_val_loss=best_val, epochs=0, initial_val_loss=best_val)
    bad_epochs = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_tr)
        epoch_loss = 0.0
        for start in range(0, n_tr, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_fn(model, *(a[idx] for a in train_arrays), need_grad=True)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                result.failed = True
                result.message = f"non-finite loss at epoch {epoch}"
                logger.warning("training aborted: %s", result.message)
                model.params = best_params
                result.epochs = epoch + 1
                return result
            if cfg.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > cfg.clip_norm:
                    grads = [g * (cfg.clip_norm / norm) for g in grads]
            new_params, state = adam_step(state, model.params, grads)
            model.params = new_params
            epoch_loss += float(loss) * len(idx)
        val, _ = loss_fn(model, *val_arrays, need_grad=False)
        val = float(val)
        result.train_losses.append(epoch_loss / n_tr)
        result.val_losses.append(val)
        result.epochs = epoch + 1
        if np.isfinite(val) and val < best_val:
            best_val = val
            best_params = [p.copy() for p in model.params]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
    model.params = best_params
    result.best_val_loss = best_val
    return result
