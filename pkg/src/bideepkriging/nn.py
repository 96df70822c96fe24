"""Dense feed-forward network with hand-written backpropagation.

Weights follow the ``W_l`` of shape ``(out_dim, in_dim)`` convention; a batch
``X`` of shape ``(n, in_dim)`` maps to ``X @ W.T + b``.  Hidden layers use ReLU
(subgradient 0 at 0), the last layer is affine.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import (ArgumentError, ConfigurationError, IncompatibleVersionError,
                     ModelFormatError, TrainingDivergenceError)

log = logging.getLogger(__name__)

FORMAT_NAME = "bideepkriging-network"
FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"
    l1: float = 0.0
    l2: float = 0.0
    frozen: bool = False

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError(f"layer dims must be >= 1, got {self.in_dim} -> {self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigurationError("regularization coefficients must be nonnegative")

    @property
    def n_params(self) -> int:
        return self.out_dim * (self.in_dim + 1)


def dense_stack(input_dim: int, widths: Sequence[int], regularized: int = 0,
                l1: float = 0.0, l2: float = 0.0) -> list[LayerSpec]:
    """ReLU layers of the given widths, last one affine; L1L2 on the first ``regularized`` layers."""
    specs, d = [], input_dim
    for i, w in enumerate(widths):
        last = i == len(widths) - 1
        reg = i < regularized
        specs.append(LayerSpec(d, int(w), "identity" if last else "relu",
                               l1 if reg else 0.0, l2 if reg else 0.0))
        d = int(w)
    return specs


@dataclass(frozen=True)
class LossWeights:
    w: tuple = (1.0, 1.0)

    def __post_init__(self):
        w = tuple(float(v) for v in self.w)
        if not w or any(not (v > 0) or not math.isfinite(v) for v in w):
            raise ConfigurationError(f"loss weights must be positive, got {w}")
        object.__setattr__(self, "w", w)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.w)


@dataclass(frozen=True)
class TrainConfig:
    """Training schedule.

    ``optimizer`` is ``adam``, ``sgd`` or ``lbfgs`` (full-batch, via scipy).
    ``patience = 0`` disables early stopping; otherwise ``val_fraction`` of the
    rows is held out and the best validation weights are restored.
    """

    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    min_delta: float = 1e-5
    val_fraction: float = 0.1
    seed: int = 0
    init: str = "normal"
    init_scale: float | None = None
    init_bounds: tuple | None = None

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("adam", "sgd", "lbfgs"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in ("normal", "uniform"):
            raise ConfigurationError(f"unknown init {self.init!r}")
        if self.patience < 0 or not (0.0 <= self.val_fraction < 1.0):
            raise ConfigurationError("patience must be >= 0 and val_fraction in [0, 1)")


class Network:
    """Layer specs plus parameters ``W_l``, ``b_l``."""

    def __init__(self, layers: Sequence[LayerSpec], weights=None, biases=None):
        layers = list(layers)
        if not layers:
            raise ConfigurationError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigurationError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        if layers[-1].activation != "identity":
            raise ConfigurationError("the final layer must use the identity activation")
        self.layers = layers
        if weights is None:
            weights = [np.zeros((l.out_dim, l.in_dim)) for l in layers]
        if biases is None:
            biases = [np.zeros(l.out_dim) for l in layers]
        self.weights = [np.array(W, dtype=float) for W in weights]
        self.biases = [np.array(b, dtype=float).reshape(-1) for b in biases]
        for l, W, b in zip(layers, self.weights, self.biases):
            if W.shape != (l.out_dim, l.in_dim) or b.shape != (l.out_dim,):
                raise ConfigurationError("parameter shapes do not match the layer specs")

    @classmethod
    def initialize(cls, layers: Sequence[LayerSpec], rng: np.random.Generator, init: str = "normal",
                   scale: float | None = None, bounds: tuple | None = None) -> "Network":
        """Random weights, zero biases.

        ``normal`` draws N(0, scale^2) with ``scale`` defaulting to
        ``sqrt(2 / in_dim)``; ``uniform`` draws U(a, b), defaulting to
        ``+-sqrt(6 / (in_dim + out_dim))``.
        """
        weights = []
        for l in layers:
            if init == "normal":
                sd = scale if scale is not None else math.sqrt(2.0 / l.in_dim)
                weights.append(rng.normal(0.0, sd, size=(l.out_dim, l.in_dim)))
            elif init == "uniform":
                if bounds is None:
                    lim = math.sqrt(6.0 / (l.in_dim + l.out_dim))
                    a, b = -lim, lim
                else:
                    a, b = bounds
                weights.append(rng.uniform(a, b, size=(l.out_dim, l.in_dim)))
            else:
                raise ConfigurationError(f"unknown init {init!r}")
        return cls(layers, weights)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "Network":
        return Network(self.layers, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def with_frozen(self, n_frozen: int) -> "Network":
        """Copy whose first ``n_frozen`` layers are frozen and the rest trainable."""
        if not (0 <= n_frozen <= len(self.layers)):
            raise ConfigurationError(f"cannot freeze {n_frozen} of {len(self.layers)} layers")
        layers = [LayerSpec(l.in_dim, l.out_dim, l.activation, l.l1, l.l2, i < n_frozen)
                  for i, l in enumerate(self.layers)]
        return Network(layers, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def n_trainable(self) -> int:
        return sum(l.n_params for l in self.layers if not l.frozen)

    def params_equal(self, other: "Network") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.weights + self.biases,
                                                        other.weights + other.biases))


def _check_input(net: Network, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != net.input_dim:
        raise ArgumentError(f"network expects {net.input_dim} inputs, got {X.shape[1]}")
    return X


def _forward_cache(net: Network, X: np.ndarray):
    acts = [X]
    pre = []
    a = X
    for l, W, b in zip(net.layers, net.weights, net.biases):
        h = a @ W.T + b
        pre.append(h)
        a = np.maximum(h, 0.0) if l.activation == "relu" else h
        acts.append(a)
    return acts, pre


def forward(net: Network, x) -> np.ndarray:
    """Network output for one feature vector (shape ``(out,)``) or a batch (``(n, out)``)."""
    single = np.ndim(x) == 1
    X = _check_input(net, x)
    a = X
    for l, W, b in zip(net.layers, net.weights, net.biases):
        a = a @ W.T + b
        if l.activation == "relu":
            a = np.maximum(a, 0.0)
    return a[0] if single else a


def _targets(net: Network, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None] if net.output_dim == 1 else Y[None, :]
    if Y.shape[1] != net.output_dim:
        raise ArgumentError(f"targets have {Y.shape[1]} columns for {net.output_dim} outputs")
    return Y


def _weights(net: Network, w) -> np.ndarray:
    if w is None:
        return np.ones(net.output_dim)
    arr = w.array if isinstance(w, LossWeights) else np.asarray(w, dtype=float).reshape(-1)
    if arr.shape[0] != net.output_dim:
        raise ArgumentError(f"{arr.shape[0]} loss weights for {net.output_dim} outputs")
    return arr


def penalty(net: Network) -> float:
    total = 0.0
    for l, W in zip(net.layers, net.weights):
        if l.l1:
            total += l.l1 * np.abs(W).sum()
        if l.l2:
            total += l.l2 * (W * W).sum()
    return float(total)


def data_loss(net: Network, X, Y, w=None) -> float:
    X = _check_input(net, X)
    Y = _targets(net, Y)
    if X.shape[0] == 0 or X.shape[0] != Y.shape[0]:
        raise ArgumentError("batch must be nonempty with matching target rows")
    R = forward(net, X) - Y
    wa = _weights(net, w)
    return float(np.mean((R * R) @ wa) / net.output_dim)


def loss(net: Network, X, Y, w=None) -> float:
    """Mean over rows of ``sum_u w_u (f_u - z_u)^2 / n_outputs`` plus the L1L2 penalty."""
    return data_loss(net, X, Y, w) + penalty(net)


def grad(net: Network, X, Y, w=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradient of :func:`loss` as ``[(dW_l, db_l), ...]``; frozen layers get zeros."""
    X = _check_input(net, X)
    Y = _targets(net, Y)
    n = X.shape[0]
    if n == 0 or n != Y.shape[0]:
        raise ArgumentError("batch must be nonempty with matching target rows")
    acts, pre = _forward_cache(net, X)
    wa = _weights(net, w)
    delta = (acts[-1] - Y) * (2.0 * wa / (n * net.output_dim))
    grads: list = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        l, W = net.layers[i], net.weights[i]
        if l.activation == "relu":
            delta = delta * (pre[i] > 0)
        if l.frozen:
            grads[i] = (np.zeros_like(W), np.zeros_like(net.biases[i]))
        else:
            dW = delta.T @ acts[i]
            if l.l1:
                dW = dW + l.l1 * np.sign(W)
            if l.l2:
                dW = dW + 2.0 * l.l2 * W
            grads[i] = (dW, delta.sum(axis=0))
        if i > 0:
            if all(lay.frozen for lay in net.layers[:i]):
                break
            delta = delta @ W
    for i in range(len(grads)):
        if grads[i] is None:
            grads[i] = (np.zeros_like(net.weights[i]), np.zeros_like(net.biases[i]))
    return grads


class _Adam:
    def __init__(self, net: Network, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.weights + net.biases]
        self.v = [np.zeros_like(p) for p in net.weights + net.biases]

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


class _SGD:
    def __init__(self, net: Network, cfg: TrainConfig):
        self.lr = cfg.learning_rate

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def _trainable_index(net: Network) -> list[int]:
    return [i for i, l in enumerate(net.layers) if not l.frozen]


def _train_lbfgs(net: Network, X, Y, w, cfg: TrainConfig) -> Network:
    idx = _trainable_index(net)
    shapes = [(net.weights[i].shape, net.biases[i].shape) for i in idx]

    def unpack(theta):
        k = 0
        for i, (sw, sb) in zip(idx, shapes):
            nw, nb = int(np.prod(sw)), int(np.prod(sb))
            net.weights[i] = theta[k:k + nw].reshape(sw).copy()
            k += nw
            net.biases[i] = theta[k:k + nb].copy()
            k += nb

    def fun(theta):
        unpack(theta)
        val = loss(net, X, Y, w)
        g = grad(net, X, Y, w)
        flat = np.concatenate([np.concatenate([g[i][0].ravel(), g[i][1]]) for i in idx])
        return val, flat

    theta0 = np.concatenate([np.concatenate([net.weights[i].ravel(), net.biases[i]]) for i in idx])
    res = optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B",
                            options={"maxiter": cfg.epochs, "maxfun": 2 * cfg.epochs + 10,
                                     "ftol": 1e-15, "gtol": 1e-12})
    if not np.isfinite(res.fun):
        raise TrainingDivergenceError("non-finite loss during full-batch optimization", epoch=int(res.nit))
    unpack(res.x)
    return net


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


def train(net: Network, X, Y, w=None, cfg: TrainConfig = TrainConfig(),
          history: TrainHistory | None = None) -> Network:
    """Return a trained copy of ``net``; the input network is left untouched.

    Minibatches are reshuffled every epoch from ``cfg.seed``.  A non-finite
    loss raises :class:`TrainingDivergenceError` carrying the epoch index.
    """
    X = _check_input(net, X)
    Y = _targets(net, Y)
    if X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise ArgumentError("training data must be nonempty with matching rows")
    out = net.copy()
    if cfg.epochs == 0 or not _trainable_index(out):
        return out
    if cfg.optimizer == "lbfgs":
        return _train_lbfgs(out, X, Y, w, cfg)

    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    use_val = cfg.patience > 0 and cfg.val_fraction > 0 and n >= 10
    if use_val:
        perm = rng.permutation(n)
        n_val = max(1, int(round(cfg.val_fraction * n)))
        val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        Xv, Yv = X[val_idx], Y[val_idx]
        X, Y = X[tr_idx], Y[tr_idx]
        n = X.shape[0]
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(out, cfg)
    idx = _trainable_index(out)
    best = None
    best_val = np.inf
    wait = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            g = grad(out, X[b], Y[b], w)
            opt.step([out.weights[i] for i in idx] + [out.biases[i] for i in idx],
                     [g[i][0] for i in idx] + [g[i][1] for i in idx])
        tr = loss(out, X, Y, w)
        if not np.isfinite(tr):
            raise TrainingDivergenceError(f"training loss became non-finite at epoch {epoch}", epoch=epoch)
        if history is not None:
            history.train_loss.append(tr)
        if use_val:
            vl = loss(out, Xv, Yv, w)
            if history is not None:
                history.val_loss.append(vl)
            if vl < best_val - cfg.min_delta:
                best_val, wait = vl, 0
                best = out.copy()
                if history is not None:
                    history.best_epoch = epoch
            else:
                wait += 1
                if wait >= cfg.patience:
                    if history is not None:
                        history.stopped_epoch = epoch
                    break
    if use_val and best is not None:
        return best
    return out


# --- serialization ---------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    return {
        "layers": [asdict(l) for l in net.layers],
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def network_from_dict(d: dict) -> Network:
    try:
        layers = [LayerSpec(**l) for l in d["layers"]]
        return Network(layers, [np.array(W, dtype=float).reshape(l.out_dim, l.in_dim)
                                for W, l in zip(d["weights"], layers)], d["biases"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed network record: {exc}") from None


def dump_document(path, kind: str, payload: dict):
    """Write a versioned JSON container; floats are written with round-trip precision."""
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "kind": kind, **payload}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    path.write_text(text + "\n")


def load_document(path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise IncompatibleVersionError(
            f"{path}: format version {doc.get('version')!r}, this build reads version {FORMAT_VERSION}")
    if doc.get("kind") != kind:
        raise ModelFormatError(f"{path}: holds a {doc.get('kind')!r}, expected {kind!r}")
    return doc


def save(net: Network, path):
    dump_document(path, "network", {"network": network_to_dict(net)})


def load(path) -> Network:
    doc = load_document(path, "network")
    return network_from_dict(doc["network"])
