"""Minimal numpy neural-network core: MLPs with hand-written backprop,
Adam, patience-based early stopping and finite-difference gradient tools.

Everything here is deterministic given a seed, dtype-generic (training runs
in float32, gradient checks in float64) and single-threaded apart from BLAS.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(z):
    return np.maximum(z, 0)


def drelu(z):
    return (z > 0).astype(z.dtype)


def leaky_relu(z, slope=0.2):
    return np.where(z > 0, z, slope * z)


def dleaky_relu(z, slope=0.2):
    return np.where(z > 0, z.dtype.type(1), z.dtype.type(slope))


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0)))


def delu(z):
    return np.where(z > 0, z.dtype.type(1), np.exp(np.minimum(z, 0)))


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
    "relu": (relu, drelu),
    "elu": (elu, delu),
    "leaky_relu": (leaky_relu, dleaky_relu),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


# ---------------------------------------------------------------------------
# fully connected stacks
# ---------------------------------------------------------------------------

class MLP:
    """Dense stack ``widths[0] -> ... -> widths[-1]``.

    Hidden layers use ``hidden`` activation, the last layer ``out``. Forward
    optionally returns a cache consumed by :meth:`backward`, which yields the
    gradient w.r.t. the input plus parameter gradients aligned with
    :meth:`params`.
    """

    def __init__(self, widths: Sequence[int], rng: np.random.Generator,
                 hidden: str = "relu", out: str = "linear",
                 dtype=np.float32):
        if len(widths) < 2:
            raise ConfigurationError("MLP needs at least one layer")
        self.widths = tuple(int(w) for w in widths)
        self.hidden = hidden
        self.out = out
        self.Ws: list[np.ndarray] = []
        self.bs: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            # He init for rectifiers, Glorot-ish for the linear output layer
            std = np.sqrt(2.0 / fan_in)
            self.Ws.append((rng.standard_normal((fan_in, fan_out)) * std).astype(dtype))
            self.bs.append(np.zeros(fan_out, dtype=dtype))

    @property
    def n_layers(self) -> int:
        return len(self.Ws)

    def _act(self, i: int) -> tuple[Callable, Callable]:
        name = self.out if i == self.n_layers - 1 else self.hidden
        return _ACTIVATIONS[name]

    def forward(self, x: np.ndarray, want_cache: bool = False):
        lead = x.shape[:-1]
        h = x.reshape(-1, self.widths[0])
        hs = [h]
        zs = []
        for i, (W, b) in enumerate(zip(self.Ws, self.bs)):
            z = h @ W + b
            act, _ = self._act(i)
            h = act(z)
            if want_cache:
                zs.append(z)
                hs.append(h)
        y = h.reshape(*lead, self.widths[-1])
        if want_cache:
            return y, {"hs": hs, "zs": zs, "lead": lead}
        return y

    def backward(self, cache: dict, d_out: np.ndarray):
        """Returns (d_input, grads) with grads ordered like params()."""
        hs, zs = cache["hs"], cache["zs"]
        dh = d_out.reshape(-1, self.widths[-1])
        dWs = [None] * self.n_layers
        dbs = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            _, dact = self._act(i)
            dz = dh * dact(zs[i])
            dWs[i] = hs[i].T @ dz
            dbs[i] = dz.sum(axis=0)
            dh = dz @ self.Ws[i].T
        grads = []
        for dW, db in zip(dWs, dbs):
            grads.extend([dW, db])
        return dh.reshape(*cache["lead"], self.widths[0]), grads

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.Ws, self.bs):
            out.extend([W, b])
        return out

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        flat = self.params()
        if len(flat) != len(params):
            raise ConfigurationError("parameter count mismatch")
        for dst, src in zip(flat, params):
            dst[...] = src

    def astype(self, dtype) -> "MLP":
        for i in range(self.n_layers):
            self.Ws[i] = self.Ws[i].astype(dtype)
            self.bs[i] = self.bs[i].astype(dtype)
        return self


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return (2.0 / pred.size) * (pred - target)


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    # softplus(z) - y*z, numerically stable for both signs of z
    z = logits
    sp = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    return float(np.mean(sp - labels * z))


def bce_with_logits_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return (sigmoid(logits) - labels) / logits.size


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL( N(mu, exp(logvar)) || N(0, 1) ), summed over dims, mean over batch."""
    per = -0.5 * (1.0 + logvar - mu ** 2 - np.exp(logvar))
    return float(per.sum(axis=-1).mean())


def gaussian_kl_grad(mu: np.ndarray, logvar: np.ndarray):
    batch = mu.shape[0] if mu.ndim > 1 else 1
    dmu = mu / batch
    dlogvar = 0.5 * (np.exp(logvar) - 1.0) / batch
    return dmu, dlogvar


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(z - m).sum(axis=axis))


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

@dataclass
class OptimConfig:
    """Per-stage optimiser settings (adaptive-moment method throughout)."""

    learning_rate: float = 0.0005
    max_epochs: int = 1000
    patience: int = 20
    min_rel_improvement: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    val_fraction: float = 0.15

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigurationError("val_fraction must be in (0, 1)")


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 0.0005,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class EarlyStopper:
    """Patience-based stopping on validation loss with best-epoch restore.

    Improvements smaller than ``min_rel_improvement`` (relative to the best
    loss so far) do not reset patience, so asymptotic crawling terminates.
    """

    def __init__(self, patience: int, min_rel_improvement: float = 1e-3):
        self.patience = patience
        self.min_rel = min_rel_improvement
        self.best = np.inf
        self.best_params: list[np.ndarray] | None = None
        self.bad_epochs = 0
        self.best_epoch = -1

    def update(self, val_loss: float, params: Sequence[np.ndarray], epoch: int) -> bool:
        """Record epoch result; returns True when training should stop."""
        if not np.isfinite(val_loss):
            raise NumericalError(f"validation loss became non-finite at epoch {epoch}")
        threshold = self.best - self.min_rel * abs(self.best) if np.isfinite(self.best) else np.inf
        if val_loss < self.best:
            if val_loss < threshold or self.best_params is None:
                self.bad_epochs = 0
            else:
                self.bad_epochs += 1
            self.best = val_loss
            self.best_params = [p.copy() for p in params]
            self.best_epoch = epoch
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    def restore(self, set_params: Callable[[Sequence[np.ndarray]], None]) -> None:
        if self.best_params is not None:
            set_params(self.best_params)


def check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"{what} became non-finite")
    return value


def train_val_split(n: int, val_fraction: float, rng: np.random.Generator,
                    stratify: np.ndarray | None = None):
    """Seeded index split; stratified per class when labels are given."""
    if n < 2:
        raise ConfigurationError("need at least 2 samples to split train/val")
    idx = np.arange(n)
    if stratify is None:
        rng.shuffle(idx)
        n_val = max(1, int(round(n * val_fraction)))
        return idx[n_val:], idx[:n_val]
    train_parts, val_parts = [], []
    for cls in np.unique(stratify):
        members = idx[stratify == cls]
        members = members[rng.permutation(len(members))]
        n_val = max(1, int(round(len(members) * val_fraction)))
        if n_val >= len(members):
            n_val = len(members) - 1
        val_parts.append(members[:n_val])
        train_parts.append(members[n_val:])
    train = np.concatenate(train_parts)
    val = np.concatenate(val_parts)
    return np.sort(train), np.sort(val)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def fd_gradient(loss_fn: Callable[[], float], array: np.ndarray,
                h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``loss_fn`` w.r.t. every entry of ``array``.

    ``array`` is perturbed in place and restored; intended for float64 inputs.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * h)
    return grad


def fd_directional(loss_fn: Callable[[], float], arrays: Sequence[np.ndarray],
                   directions: Sequence[np.ndarray], h: float = 1e-6) -> float:
    """Central-difference directional derivative along ``directions``."""
    for a, d in zip(arrays, directions):
        a += h * d
    lp = loss_fn()
    for a, d in zip(arrays, directions):
        a -= 2.0 * h * d
    lm = loss_fn()
    for a, d in zip(arrays, directions):
        a += h * d
    return (lp - lm) / (2.0 * h)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(np.asarray(a).ravel()))
    nb = float(np.linalg.norm(np.asarray(b).ravel()))
    diff = float(np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()))
    denom = max(na, nb, 1e-12)
    return diff / denom
