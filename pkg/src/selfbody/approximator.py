"""One-hidden-layer sigmoid network trained by backpropagation.

``forward`` computes ``W2 @ sigmoid(W1 @ x + b1) + b2``.  Inputs may be a
single vector or a batch of row vectors.  The loss is the mean of squared
errors over every output entry of the batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .kinematics import DimensionError

MAGIC = b"SBNN"
VERSION = 1


class FormatError(ValueError):
    """Serialized network is corrupt or truncated."""


class VersionError(FormatError):
    """Serialized network has an unsupported version field."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; parameters were rolled back."""


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class FeedforwardNet:
    def __init__(self, n_in, n_hidden, n_out, seed=0):
        self.sizes = (int(n_in), int(n_hidden), int(n_out))
        rng = np.random.default_rng(seed)
        a1 = np.sqrt(6.0 / (n_in + n_hidden))
        a2 = np.sqrt(6.0 / (n_hidden + n_out))
        self.W1 = rng.uniform(-a1, a1, (n_hidden, n_in))
        self.b1 = np.zeros(n_hidden)
        self.W2 = rng.uniform(-a2, a2, (n_out, n_hidden))
        self.b2 = np.zeros(n_out)

    @property
    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def get_state(self):
        return [p.copy() for p in self.params]

    def set_state(self, state):
        self.W1, self.b1, self.W2, self.b2 = (p.copy() for p in state)

    def copy(self):
        other = FeedforwardNet.__new__(FeedforwardNet)
        other.sizes = self.sizes
        other.set_state(self.get_state())
        return other

    def zero(self):
        for p in self.params:
            p[...] = 0.0
        return self

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0] or x.ndim > 2:
            raise DimensionError(f"expected input of size {self.sizes[0]}, got {x.shape}")
        return x

    def forward(self, x):
        x = self._check(x)
        h = sigmoid(x @ self.W1.T + self.b1)
        return h @ self.W2.T + self.b2

    __call__ = forward

    def loss_and_gradients(self, X, Y):
        X = np.atleast_2d(self._check(X))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        h = sigmoid(X @ self.W1.T + self.b1)
        err = h @ self.W2.T + self.b2 - Y
        loss = np.mean(err ** 2)
        dy = 2.0 * err / err.size
        gW2 = dy.T @ h
        gb2 = dy.sum(axis=0)
        dz = (dy @ self.W2) * h * (1.0 - h)
        gW1 = dz.T @ X
        gb1 = dz.sum(axis=0)
        return loss, [gW1, gb1, gW2, gb2]

    def loss(self, X, Y):
        err = self.forward(np.atleast_2d(X)) - np.atleast_2d(Y)
        return float(np.mean(err ** 2))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    optimizer: str = "sgd"  # sgd | momentum | adam
    momentum: float = 0.9
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class Optimizer:
    """In-place parameter updates; state persists across ``step`` calls."""

    def __init__(self, net, cfg):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]

    def step(self, net, grads):
        cfg = self.cfg
        lr = cfg.learning_rate
        self.t += 1
        for p, g, m, v in zip(net.params, grads, self.m, self.v):
            if cfg.optimizer == "sgd":
                p -= lr * g
            elif cfg.optimizer == "momentum":
                m *= cfg.momentum
                m += g
                p -= lr * m
            else:
                m *= 0.9
                m += 0.1 * g
                v *= 0.999
                v += 0.001 * g * g
                mhat = m / (1 - 0.9 ** self.t)
                vhat = v / (1 - 0.999 ** self.t)
                p -= lr * mhat / (np.sqrt(vhat) + 1e-8)


def _as_arrays(batch):
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        return np.asarray(batch[0], float), np.asarray(batch[1], float)
    if len(batch) == 0:
        raise ValueError("empty batch")
    X = np.array([np.asarray(x, float) for x, _ in batch])
    Y = np.array([np.asarray(y, float) for _, y in batch])
    return X, Y


def train_minibatch(net, batch, cfg, optimizer=None):
    """Run ``cfg.epochs`` full-batch gradient steps; return the final loss.

    ``batch`` is a list of ``(x, y)`` pairs or an ``(X, Y)`` tuple of 2-D
    arrays.  A non-finite loss restores the parameters held on entry and
    raises ``TrainingDiverged``.
    """
    X, Y = _as_arrays(batch)
    if len(X) == 0:
        raise ValueError("empty batch")
    if Y.shape[1] != net.sizes[2]:
        raise DimensionError("target size does not match network output")
    saved = net.get_state()
    opt = optimizer or Optimizer(net, cfg)
    for _ in range(cfg.epochs):
        loss, grads = net.loss_and_gradients(X, Y)
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
            net.set_state(saved)
            raise TrainingDiverged(f"non-finite loss {loss} during minibatch training")
        opt.step(net, grads)
    loss = net.loss(X, Y)
    if not np.isfinite(loss) or not all(np.isfinite(p).all() for p in net.params):
        net.set_state(saved)
        raise TrainingDiverged(f"non-finite loss {loss} after minibatch training")
    return loss


def fit(net, X, Y, cfg, *, max_epochs=2000, batch_size=128, patience=200,
        min_delta=1e-4, X_val=None, Y_val=None):
    """Shuffled minibatch training with a loss-plateau stop.

    Stops after ``patience`` epochs without a relative improvement of
    ``min_delta`` in the monitored loss (validation if given) and restores
    the best parameters seen.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(net, cfg)
    monitor = (X_val, Y_val) if X_val is not None else (X, Y)
    best = (net.loss(*monitor), net.get_state())
    stale = 0
    history = []
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(X))
        for k in range(0, len(X), batch_size):
            idx = order[k:k + batch_size]
            _, grads = net.loss_and_gradients(X[idx], Y[idx])
            opt.step(net, grads)
        loss = net.loss(*monitor)
        if not np.isfinite(loss):
            net.set_state(best[1])
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        history.append(loss)
        if loss < best[0] * (1 - min_delta):
            best = (loss, net.get_state())
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    net.set_state(best[1])
    return {"epochs": epoch, "loss": best[0], "history": history}


def save(net):
    """Serialize to bytes: magic, version, layer sizes, float64 LE params."""
    head = MAGIC + struct.pack("<HH", VERSION, len(net.sizes))
    head += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params)
    return head + body


def read_net(data, offset=0):
    """Parse one network starting at ``offset``; return ``(net, end_offset)``."""
    data = memoryview(bytes(data))[offset:]
    if len(data) < 8 or bytes(data[:4]) != MAGIC:
        raise FormatError("not a serialized network (bad magic)")
    version, n_layers = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise VersionError(f"unsupported network version {version} (expected {VERSION})")
    if n_layers != 3:
        raise FormatError(f"expected 3 layer sizes, got {n_layers}")
    off = 8
    if len(data) < off + 4 * n_layers:
        raise FormatError("truncated network header")
    sizes = struct.unpack_from(f"<{n_layers}I", data, off)
    off += 4 * n_layers
    n_in, n_hid, n_out = sizes
    shapes = [(n_hid, n_in), (n_hid,), (n_out, n_hid), (n_out,)]
    count = sum(int(np.prod(s)) for s in shapes)
    if len(data) < off + 8 * count:
        raise FormatError("truncated network parameters")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    if not np.isfinite(flat).all():
        raise FormatError("non-finite parameter in stream")
    net = FeedforwardNet.__new__(FeedforwardNet)
    net.sizes = tuple(int(s) for s in sizes)
    params, k = [], 0
    for s in shapes:
        size = int(np.prod(s))
        params.append(flat[k:k + size].reshape(s).copy())
        k += size
    net.set_state(params)
    return net, offset + off + 8 * count


def load(data):
    """Inverse of :func:`save`."""
    net, end = read_net(data)
    if end != len(data):
        raise FormatError("trailing bytes after network")
    return net
