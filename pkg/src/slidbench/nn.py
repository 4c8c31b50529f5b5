"""Layers with hand-written forward/backward passes, Adam, and the ``SLW1``
checkpoint format.

Activations are numpy arrays. Sequence tensors use the ``(batch, channels,
time)`` layout with a boolean ``(batch, time)`` frame mask; padded frames are
held at zero after every layer so batch composition never changes a
sample's result.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import kernels
from ._io import atomic_write_bytes
from .errors import ConfigError, DataError, NumericError, UsageError


def _full_mask(x):
    return np.ones((x.shape[0], x.shape[-1]), dtype=bool)


class Layer:
    """Base class: ``params`` and ``grads`` are name -> array dicts."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _need_cache(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Conv1d(Layer):
    """Stride-1 temporal convolution with symmetric zero padding (output
    length equals input length). Even widths put the extra pad on the right."""

    def __init__(self, in_channels, out_channels, width, rng=None, dtype=np.float64):
        super().__init__()
        self.in_channels, self.out_channels, self.width = in_channels, out_channels, width
        self.stride = 1
        rng = np.random.default_rng() if rng is None else rng
        std = np.sqrt(2.0 / (in_channels * width))
        self.params["weight"] = (rng.standard_normal((out_channels, in_channels, width)) * std).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    @property
    def pad_left(self):
        return (self.width - 1) // 2

    def forward(self, x, mask=None, need_input_grad=True):
        B, C, T = x.shape
        if C != self.in_channels:
            raise DataError(f"conv expects {self.in_channels} input channels, got {C}")
        mask = _full_mask(x) if mask is None else mask
        w = self.params["weight"]
        dtype = w.dtype
        xt = np.zeros((C, B, T + self.width - 1), dtype=dtype)
        xt[:, :, self.pad_left : self.pad_left + T] = x.transpose(1, 0, 2)
        wt = np.ascontiguousarray(w.transpose(2, 0, 1))
        y = kernels.conv_forward(xt, wt).reshape(self.out_channels, B, T)
        y += self.params["bias"][:, None, None]
        y = y.transpose(1, 0, 2) * mask[:, None, :]
        self._cache = (xt, mask, need_input_grad)
        return y

    def backward(self, gy):
        xt, mask, need_gx = self._need_cache()
        C, B, Tp = xt.shape
        T = Tp - self.width + 1
        g = np.ascontiguousarray((gy * mask[:, None, :]).transpose(1, 0, 2)).reshape(self.out_channels, B * T)
        g = g.astype(xt.dtype, copy=False)
        wtT = np.ascontiguousarray(self.params["weight"].transpose(2, 1, 0))
        gw, gxt = kernels.conv_backward(xt, wtT, g, need_gx)
        self.grads["weight"] = gw.transpose(1, 2, 0).copy()
        self.grads["bias"] = g.sum(axis=1)
        if not need_gx:
            return None
        return gxt[:, :, self.pad_left : self.pad_left + T].transpose(1, 0, 2).copy()


class BatchNorm1d(Layer):
    """Per-channel normalisation over all unmasked (sample, frame) positions."""

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float64):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ConfigError("batch-norm momentum must lie in (0, 1)")
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, mask=None, training=False):
        mask = _full_mask(x) if mask is None else mask
        m = mask[:, None, :].astype(x.dtype)
        gamma, beta = self.params["gamma"], self.params["beta"]
        if training:
            n = int(mask.sum())
            if n < 2:
                raise NumericError(f"batch norm needs at least 2 unmasked positions per channel in training, got {n}")
            mean = (x * m).sum(axis=(0, 2)) / n
            centered = (x - mean[None, :, None]) * m
            var = (centered**2).sum(axis=(0, 2)) / n
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = centered * inv_std[None, :, None]
            mom = self.momentum
            self.running_mean = ((1 - mom) * self.running_mean + mom * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - mom) * self.running_var + mom * var * n / (n - 1)).astype(self.running_var.dtype)
        else:
            n = None
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None]) * inv_std[None, :, None] * m
        y = (xhat * gamma[None, :, None] + beta[None, :, None]) * m
        self._cache = (xhat, inv_std, m, n)
        return y

    def backward(self, gy):
        xhat, inv_std, m, n = self._need_cache()
        gy = gy * m
        gamma = self.params["gamma"]
        self.grads["gamma"] = (gy * xhat).sum(axis=(0, 2))
        self.grads["beta"] = gy.sum(axis=(0, 2))
        dxhat = gy * gamma[None, :, None]
        if n is None:
            return dxhat * inv_std[None, :, None]
        mean_d = dxhat.sum(axis=(0, 2)) / n
        mean_dx = (dxhat * xhat).sum(axis=(0, 2)) / n
        return (dxhat - mean_d[None, :, None] - xhat * mean_dx[None, :, None]) * inv_std[None, :, None] * m


class ReLU(Layer):
    def forward(self, x, **_):
        active = x > 0
        self._cache = active
        return np.where(active, x, 0).astype(x.dtype, copy=False)

    def backward(self, gy):
        return gy * self._need_cache()


def relu(x):
    return np.maximum(x, 0)


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1/(1-p)``; eval is identity."""

    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p

    def forward(self, x, training=False, rng=None, **_):
        if not training or self.p == 0.0:
            self._cache = None, True
            return x
        if rng is None:
            raise UsageError("training-mode dropout needs an rng")
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        self._cache = keep, False
        return x * keep

    def backward(self, gy):
        if self._cache is None:
            raise UsageError("Dropout.backward called before forward")
        keep, identity = self._cache
        return gy if identity else gy * keep


class MaskedAvgPool(Layer):
    """Mean over unmasked frames: ``(B, C, T) -> (B, C)``."""

    def forward(self, x, mask=None, **_):
        mask = _full_mask(x) if mask is None else mask
        lengths = mask.sum(axis=1)
        if np.any(lengths == 0):
            raise NumericError("average pooling over an empty frame mask")
        m = mask[:, None, :].astype(x.dtype)
        self._cache = (m, lengths.astype(x.dtype))
        return (x * m).sum(axis=2) / lengths[:, None]

    def backward(self, gy):
        m, lengths = self._need_cache()
        return gy[:, :, None] * m / lengths[:, None, None]


class Dense(Layer):
    """``y = x W^T + b`` on row batches ``(B, in)``."""

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float64):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        rng = np.random.default_rng() if rng is None else rng
        self.params["weight"] = (rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)).astype(dtype)
        self.params["bias"] = np.zeros(out_dim, dtype=dtype)

    def forward(self, x, **_):
        if x.shape[-1] != self.in_dim:
            raise DataError(f"dense layer expects {self.in_dim} inputs, got {x.shape[-1]}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, gy):
        x = self._need_cache()
        self.grads["weight"] = gy.T @ x
        self.grads["bias"] = gy.sum(axis=0)
        return gy @ self.params["weight"]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, gold):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    A 1-D ``logits`` vector with a scalar ``gold`` is treated as a batch of one.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    B, K = logits.shape
    if np.any((gold < 0) | (gold >= K)):
        raise DataError(f"gold labels must lie in [0, {K})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(B), gold]))
    grad = np.exp(z - log_norm[:, None])
    grad[np.arange(B), gold] -= 1.0
    grad /= B
    return loss, (grad[0] if single else grad)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        """Update ``params`` in place from ``grads`` (both name -> array)."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            if params[name].shape != g.shape:
                raise DataError(f"gradient shape {g.shape} does not match parameter {name} {params[name].shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


# ---------------------------------------------------------------------------
# checkpoint: "SLW1", u16 version, u32 count, tensors, trailing config text
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SLW1"
CHECKPOINT_VERSION = 1


def encode_checkpoint(tensors: "OrderedDict[str, np.ndarray]", config_text: str = "") -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    out.append(config_text.encode("utf-8"))
    return b"".join(out)


def decode_checkpoint(data: bytes, name="<checkpoint>"):
    """Returns ``(OrderedDict name -> float32 array, config_text)``."""
    try:
        if data[:4] != CHECKPOINT_MAGIC:
            raise DataError(f"{name}: not an SLW1 checkpoint")
        version, count = struct.unpack_from("<HI", data, 4)
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{name}: unsupported checkpoint version {version}")
        pos = 10
        tensors = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            tname = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise DataError(f"{name}: truncated tensor {tname}")
            tensors[tname] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
        return tensors, data[pos:].decode("utf-8")
    except (struct.error, UnicodeDecodeError) as exc:
        raise DataError(f"{name}: corrupt checkpoint ({exc})") from exc


def save_checkpoint(path, tensors, config_text=""):
    atomic_write_bytes(path, encode_checkpoint(tensors, config_text))


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    return decode_checkpoint(data, str(path))
