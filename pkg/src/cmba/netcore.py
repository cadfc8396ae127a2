"""Small dense feed-forward networks with exact reverse-mode gradients.

Everything runs in float64. A layer computes ``y = act(x @ W + b)`` with
``W`` stored as an ``(n_in, n_out)`` array, so the parameters of one layer
are a row-major ``n_in x n_out`` block followed by an ``n_out`` bias block.
Those blocks are exactly what the model file stores (see ``save_net``).
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ModelFormatError, ShapeError

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "softmax")

# {1, 5} x {1e-5, 1e-4, 1e-3}
DEFAULT_LR_GRID = (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3)


@dataclass
class DenseNet:
    layer_sizes: tuple
    weights: list
    biases: list
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ConfigurationError(f"bad layer_sizes {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("number of parameter blocks does not match layer_sizes")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expect} / ({expect[1]},)"
                )

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    def copy(self):
        return copy.deepcopy(self)

    def get_flat(self):
        """All parameters as one vector, layer by layer (W then b)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = theta[pos:pos + b.size].copy()
            pos += b.size
        if pos != theta.size:
            raise ShapeError(f"flat parameter vector has {theta.size} entries, expected {pos}")


def init_dense(layer_sizes, hidden_activation="tanh", output_activation="identity",
               seed=0, zero_last=None):
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.

    ``zero_last`` defaults to True for softmax heads so a fresh net outputs
    the uniform distribution.
    """
    rng = np.random.default_rng(seed)
    if zero_last is None:
        zero_last = output_activation == "softmax"
    weights, biases = [], []
    sizes = list(layer_sizes)
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_in, n_out))
        b = rng.uniform(-bound, bound, size=n_out)
        if zero_last and i == len(sizes) - 2:
            w[:] = 0.0
            b[:] = 0.0
        weights.append(w)
        biases.append(b)
    return DenseNet(tuple(sizes), weights, biases, hidden_activation, output_activation)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softmax":
        return _softmax(z)
    return z


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise ShapeError(f"input has shape {np.shape(x)}, net expects {net.n_inputs} features")
    return x, single


def _forward_cache(net, x):
    """Forward pass keeping every layer's output (index 0 is the input)."""
    outs = [x]
    last = len(net.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = _activate(z, net.output_activation if i == last else net.hidden_activation)
        outs.append(h)
    return outs


def forward(net, x):
    """Evaluate the net on one input vector or a batch of row vectors."""
    xb, single = _as_batch(net, x)
    y = _forward_cache(net, xb)[-1]
    return y[0] if single else y


def _backward(net, outs, upstream, need_params=True):
    """Backpropagate ``upstream`` (dL/d output) through cached activations."""
    g = upstream
    n_layers = len(net.weights)
    dws = [None] * n_layers
    dbs = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        kind = net.output_activation if i == n_layers - 1 else net.hidden_activation
        y = outs[i + 1]
        if kind == "tanh":
            g = g * (1.0 - y * y)
        elif kind == "relu":
            g = g * (y > 0.0)
        elif kind == "softmax":
            g = y * (g - np.sum(g * y, axis=-1, keepdims=True))
        if need_params:
            dws[i] = outs[i].T @ g
            dbs[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return g, dws, dbs


def _check_upstream(net, upstream, n_rows):
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    if upstream.shape != (n_rows, net.n_outputs):
        raise ShapeError(f"upstream has shape {upstream.shape}, expected ({n_rows}, {net.n_outputs})")
    return upstream


def input_gradient(net, x, upstream):
    """Vector-Jacobian product ``J(x)^T upstream`` with respect to the input."""
    xb, single = _as_batch(net, x)
    up = _check_upstream(net, upstream, xb.shape[0])
    outs = _forward_cache(net, xb)
    gx, _, _ = _backward(net, outs, up, need_params=False)
    return gx[0] if single else gx


def param_gradient(net, x, upstream):
    """Gradient of ``sum(upstream * forward(x))`` w.r.t. weights and biases.

    Returns ``(dweights, dbiases)`` lists matching ``net.weights``/``net.biases``;
    for a batch the per-row contributions are summed.
    """
    xb, _ = _as_batch(net, x)
    up = _check_upstream(net, upstream, xb.shape[0])
    outs = _forward_cache(net, xb)
    _, dws, dbs = _backward(net, outs, up)
    return dws, dbs


def mse(pred, target):
    """Mean over rows of the squared Euclidean error."""
    diff = np.asarray(pred) - np.asarray(target)
    if diff.ndim == 1:
        diff = diff[:, None]
    return float(np.mean(np.sum(diff * diff, axis=1)))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 20
    lr_grid: tuple = DEFAULT_LR_GRID
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.lr_grid = tuple(float(v) for v in self.lr_grid)
        if not self.lr_grid or min(self.lr_grid) <= 0:
            raise ConfigurationError("lr_grid must be a nonempty list of positive rates")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate must be > 0 and weight_decay >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigurationError("holdout_fraction must lie in [0, 1)")


@dataclass
class FitResult:
    net: DenseNet
    train_loss: float
    holdout_mse: float
    learning_rate: float
    lr_losses: dict


class AdamW:
    """Adam with decoupled weight decay over a DenseNet's parameter lists."""

    def __init__(self, net, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        params = net.weights + net.biases
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, net, dws, dbs):
        self.t += 1
        params = net.weights + net.biases
        grads = dws + dbs
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * ((m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p)


def train_epochs(net, inputs, targets, cfg, lr=None):
    """Train ``net`` in place with minibatch AdamW on the squared-error loss."""
    lr = cfg.learning_rate if lr is None else lr
    opt = AdamW(net, lr, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    n = inputs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = inputs[idx], targets[idx]
            outs = _forward_cache(net, xb)
            # d/dy of mean_rows ||y - t||^2
            up = 2.0 * (outs[-1] - yb) / len(idx)
            _, dws, dbs = _backward(net, outs, up)
            opt.step(net, dws, dbs)
    return net


def fit_regression(net, inputs, targets, cfg):
    """Fit ``net`` to ``targets`` for every rate in ``cfg.lr_grid``; keep the best.

    Rows are shuffled once with ``cfg.seed``; the last ``holdout_fraction`` of
    the shuffled rows is held out and decides the winning learning rate.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if inputs.shape[0] == 0:
        raise ConfigurationError("cannot fit on an empty dataset")
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError(f"{inputs.shape[0]} input rows but {targets.shape[0]} target rows")
    if inputs.shape[1] != net.n_inputs or targets.shape[1] != net.n_outputs:
        raise ShapeError("dataset columns do not match the network's input/output sizes")

    order = np.random.default_rng(cfg.seed).permutation(inputs.shape[0])
    x, y = inputs[order], targets[order]
    n_hold = int(round(cfg.holdout_fraction * len(x)))
    if n_hold >= len(x):
        n_hold = 0
    split = len(x) - n_hold
    x_tr, y_tr, x_ho, y_ho = x[:split], y[:split], x[split:], y[split:]

    def score(candidate):
        train = mse(forward(candidate, x_tr), y_tr)
        hold = mse(forward(candidate, x_ho), y_ho) if n_hold else train
        return train, hold

    if cfg.epochs == 0:
        best = net.copy()
        train, hold = score(best)
        return FitResult(best, train, hold, cfg.lr_grid[0], {cfg.lr_grid[0]: hold})

    best = None
    lr_losses = {}
    for lr in cfg.lr_grid:
        candidate = train_epochs(net.copy(), x_tr, y_tr, cfg, lr=lr)
        train, hold = score(candidate)
        if not np.isfinite(hold):
            hold = np.inf
        lr_losses[lr] = hold
        if best is None or hold < best.holdout_mse:
            best = FitResult(candidate, train, hold, lr, lr_losses)
    best.lr_losses = lr_losses
    return best


# -- persistence -----------------------------------------------------------

MAGIC = b"CMBANET\n"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<II")


def save_net(net, path):
    """Write ``net`` to ``path`` in the versioned binary model format."""
    header = json.dumps(
        {
            "layer_sizes": list(net.layer_sizes),
            "hidden_activation": net.hidden_activation,
            "output_activation": net.output_activation,
            "metadata": net.metadata,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_PREFIX.pack(FORMAT_VERSION, len(header)))
        fh.write(header)
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return Path(path)


def load_net(path):
    """Read a model file written by ``save_net``; raise ModelFormatError if corrupt."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic bytes at offset 0")
    off = len(MAGIC)
    if len(raw) < off + _PREFIX.size:
        raise ModelFormatError(f"{path}: truncated header at offset {off}")
    version, header_len = _PREFIX.unpack_from(raw, off)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    off += _PREFIX.size
    if len(raw) < off + header_len:
        raise ModelFormatError(f"{path}: truncated header at offset {off}")
    try:
        header = json.loads(raw[off:off + header_len].decode("utf-8"))
        sizes = [int(s) for s in header["layer_sizes"]]
        hidden = header["hidden_activation"]
        output = header["output_activation"]
        metadata = header.get("metadata", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed header at offset {off}: {exc}") from exc
    off += header_len

    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        for name, shape in (("weight", (n_in, n_out)), ("bias", (n_out,))):
            need = 8 * int(np.prod(shape))
            have = len(raw) - off
            if have < need:
                raise ModelFormatError(
                    f"{path}: layer {i} {name} block truncated at offset {off} "
                    f"(need {need} bytes, have {have})"
                )
            block = np.frombuffer(raw, dtype="<f8", count=need // 8, offset=off)
            (weights if name == "weight" else biases).append(block.reshape(shape).astype(np.float64))
            off += need
    if off != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - off} trailing bytes at offset {off}")
    try:
        return DenseNet(tuple(sizes), weights, biases, hidden, output, metadata)
    except (ShapeError, ConfigurationError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
