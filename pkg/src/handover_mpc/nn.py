"""Minimal feed-forward network toolkit (numpy only).

Implements exactly the layers the reachability and contact models need:
dense, ReLU, 1D convolution over a short time axis, batch normalization,
dropout, and max-over-time pooling, together with Adam and the two losses.
Keeping this in-library makes training bit-reproducible and keeps inference
latency measurable without an ML runtime.

Weight files use a small versioned binary container: magic, JSON header
(array names, dtypes, shapes, offsets, plus free-form metadata), then raw
little-endian array bytes.  Save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HMCNET01"
FORMAT_VERSION = 1


def inference_matmul(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Row-position-independent x @ W.

    BLAS GEMM tail kernels can differ by an ulp between rows of the same
    batch, which would break the contract that evaluating a batch equals
    evaluating each row alone.  einsum's fixed-order reduction keeps every
    row bit-identical regardless of batch size; inference goes through it,
    training keeps the faster GEMM.
    """
    return np.einsum("ni,io->no", x, W)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Dense:
    """y = x @ W + b for x of shape (N, in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.W = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, out_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x, training=False):
        self._x = x if training else None
        if training:
            return x @ self.W + self.b
        return inference_matmul(x, self.W) + self.b

    def backward(self, dy):
        self.dW[...] = self._x.T @ dy
        self.db[...] = dy.sum(axis=0)
        return dy @ self.W.T


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x, training=False):
        y = np.maximum(x, 0.0)
        if training:
            self._mask = x > 0.0
        return y

    def backward(self, dy):
        return dy * self._mask


class Conv1d:
    """1D convolution over the time axis of (B, T, C_in) with 'same' zero padding.

    Kernel size 1 reduces to a per-timestep dense layer.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 dtype=np.float64):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd for same-length output")
        self.kernel = kernel
        self.W = rng.normal(0.0, np.sqrt(2.0 / (in_ch * kernel)),
                            size=(kernel, in_ch, out_ch)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._xpad = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x, training=False):
        B, T, C = x.shape
        h = self.kernel // 2
        xpad = np.pad(x, ((0, 0), (h, h), (0, 0))) if h else x
        y = np.zeros((B, T, self.W.shape[2]), dtype=self.W.dtype)
        for d in range(self.kernel):
            window = xpad[:, d:d + T, :]
            if training:
                y += window @ self.W[d]
            else:
                y += inference_matmul(window.reshape(B * T, C), self.W[d]).reshape(B, T, -1)
        y += self.b
        self._xpad = xpad if training else None
        return y

    def backward(self, dy):
        B, T, _ = dy.shape
        h = self.kernel // 2
        dxpad = np.zeros_like(self._xpad)
        flat_dy = dy.reshape(B * T, -1)
        for d in range(self.kernel):
            xs = self._xpad[:, d:d + T, :].reshape(B * T, -1)
            self.dW[d] = xs.T @ flat_dy
            dxpad[:, d:d + T, :] += dy @ self.W[d].T
        self.db[...] = flat_dy.sum(axis=0)
        return dxpad[:, h:h + T, :] if h else dxpad


class BatchNorm:
    """Batch normalization over the channel (last) axis.

    Batch statistics are used during training and tracked into running
    estimates; inference always uses the frozen running statistics.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float64):
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.dgamma = np.zeros(channels, dtype=dtype)
        self.dbeta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.dgamma, self.dbeta]

    def forward(self, x, training=False):
        shape = x.shape
        flat = x.reshape(-1, shape[-1])
        if training:
            mu = flat.mean(axis=0)
            var = flat.var(axis=0)
            n = flat.shape[0]
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            unbiased = var * n / max(n - 1, 1)
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (flat - mu) * inv
        if training:
            self._cache = (xhat, inv, shape)
        return (self.gamma * xhat + self.beta).reshape(shape)

    def backward(self, dy):
        xhat, inv, shape = self._cache
        flat_dy = dy.reshape(-1, shape[-1])
        n = flat_dy.shape[0]
        self.dgamma[...] = (flat_dy * xhat).sum(axis=0)
        self.dbeta[...] = flat_dy.sum(axis=0)
        dxhat = flat_dy * self.gamma
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx.reshape(shape)


class Dropout:
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.p = p
        self.rng: np.random.Generator | None = None
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x, training=False):
        if not training or self.p == 0.0:
            return x
        keep = 1.0 - self.p
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask if self._mask is not None else dy


class MaxOverTime:
    """(B, T, C) -> (B, C), max over the time axis; gradient routes to argmax."""

    def __init__(self):
        self._cache = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x, training=False):
        idx = x.argmax(axis=1)
        if training:
            self._cache = (idx, x.shape)
        return np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]

    def backward(self, dy):
        idx, shape = self._cache
        dx = np.zeros(shape)
        np.put_along_axis(dx, idx[:, None, :], dy[:, None, :], axis=1)
        return dx


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def grads(self):
        return [g for l in self.layers for g in l.grads()]

    def forward(self, x, training=False):
        for l in self.layers:
            x = l.forward(x, training=training)
        return x

    def backward(self, dy):
        for l in reversed(self.layers):
            dy = l.backward(dy)
        return dy

    def set_dropout_rng(self, rng: np.random.Generator):
        for l in self.layers:
            if isinstance(l, Dropout):
                l.rng = rng


# ---------------------------------------------------------------------------
# Optimizer and losses
# ---------------------------------------------------------------------------

class Adam:
    """Adam with per-parameter adaptive step sizes."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. pred."""
    diff = pred - target
    n = diff.size
    return float((diff * diff).sum() / n), 2.0 * diff / n


def bce_with_logits(logits: np.ndarray, labels: np.ndarray):
    """Binary cross-entropy on raw logits (numerically stable) and gradient."""
    z, y = logits, labels
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    prob = 1.0 / (1.0 + np.exp(-z))
    n = z.size
    return float(loss.sum() / n), (prob - y) / n


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Weight container
# ---------------------------------------------------------------------------

def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus JSON metadata to a deterministic binary file."""
    names = sorted(arrays)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        a = np.ascontiguousarray(arrays[name])
        blob = a.astype(a.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "dtype": str(a.dtype), "shape": list(a.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": FORMAT_VERSION, "arrays": entries, "meta": meta},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a weight container (bad magic)")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {header.get('version')}")
        body = f.read()
    arrays = {}
    for e in header["arrays"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]
