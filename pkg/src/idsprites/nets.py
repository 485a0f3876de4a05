"""Fully connected networks with hand-written reverse mode, Adam, and checkpoints."""

from __future__ import annotations

import math
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ChecksumError, TruncatedError, VersionError
from .rng import Rng


def downsample(imgs, size: int = 32) -> np.ndarray:
    """Average-pool (N, H, W) images to (N, size * size) feature rows."""
    imgs = np.asarray(imgs, dtype=np.float64)
    if imgs.ndim == 2:
        imgs = imgs[None]
    n, h, w = imgs.shape
    if h % size or w % size:
        raise ValueError(f"cannot pool {h}x{w} images to {size}x{size}")
    fy, fx = h // size, w // size
    return imgs.reshape(n, size, fy, size, fx).mean(axis=(2, 4)).reshape(n, size * size)


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return ((2.0 * rng.uniform_array(fan_in * fan_out) - 1.0) * limit).reshape(fan_in, fan_out)


class MLP:
    """Rectifier network with a linear output layer.

    ``params`` alternates weight matrices ``(fan_in, fan_out)`` and bias
    vectors. All arithmetic is float64.
    """

    def __init__(self, sizes, seed: int = 0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        rng = Rng(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.params.append(glorot_uniform(rng, fan_in, fan_out))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes = list(self.sizes)
        other.params = [p.copy() for p in self.params]
        return other

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def forward(self, x, keep: bool = False):
        """Outputs for feature rows ``x``; with ``keep`` also the activations for :meth:`backward`."""
        a = np.asarray(x, dtype=np.float64)
        acts = [a]
        last = self.n_layers - 1
        for k in range(self.n_layers):
            a = a @ self.params[2 * k] + self.params[2 * k + 1]
            if k < last:
                a = np.maximum(a, 0.0)
            acts.append(a)
        return (a, acts) if keep else a

    def backward(self, acts, dout) -> list[np.ndarray]:
        """Parameter gradients given the upstream gradient of the outputs."""
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        g = dout
        for k in range(self.n_layers - 1, -1, -1):
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            if k:
                g = (g @ self.params[2 * k].T) * (acts[k] > 0.0)
        return grads

    def input_grad(self, acts, dout) -> np.ndarray:
        g = dout
        for k in range(self.n_layers - 1, -1, -1):
            g = g @ self.params[2 * k].T
            if k:
                g = g * (acts[k] > 0.0)
        return g

    def grow_output(self, extra: int, seed: int) -> None:
        """Append ``extra`` output units; existing output weights stay bit-identical."""
        if extra <= 0:
            return
        fan_in = self.sizes[-2]
        new_w = glorot_uniform(Rng(seed), fan_in, extra)
        self.params[-2] = np.concatenate([self.params[-2], new_w], axis=1)
        self.params[-1] = np.concatenate([self.params[-1], np.zeros(extra)])
        self.sizes[-1] += extra


class AdamState:
    """Bias-corrected Adam moments for a list of parameter arrays."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def grow_like(self, params) -> None:
        """Zero-pad moments after parameters grew along their last axis."""
        for k, p in enumerate(params):
            if self.m[k].shape != p.shape:
                pad = [(0, a - b) for a, b in zip(p.shape, self.m[k].shape)]
                self.m[k] = np.pad(self.m[k], pad)
                self.v[k] = np.pad(self.v[k], pad)


def adam_step(net: MLP, grads, state: AdamState):
    if len(grads) != len(net.params):
        raise ValueError("gradient list does not match parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, (p, g) in enumerate(zip(net.params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


# ----------------------------------------------------------------- checkpoint

CKPT_MAGIC = b"IDSN"
CKPT_VERSION = 1


def encode_checkpoint(net: MLP) -> bytes:
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params)
    head = struct.pack("<4sHI", CKPT_MAGIC, CKPT_VERSION, len(net.sizes))
    head += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    head += struct.pack("<QI", len(payload), zlib.crc32(payload))
    return head + payload


def decode_checkpoint(buf: bytes) -> MLP:
    if len(buf) < 10:
        raise TruncatedError("checkpoint shorter than its header")
    magic, version, n = struct.unpack_from("<4sHI", buf, 0)
    if magic != CKPT_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    pos = 10
    if len(buf) < pos + 4 * n + 12:
        raise TruncatedError("checkpoint shorter than its header")
    sizes = list(struct.unpack_from(f"<{n}I", buf, pos))
    pos += 4 * n
    length, crc = struct.unpack_from("<QI", buf, pos)
    pos += 12
    payload = buf[pos:pos + length]
    if len(payload) < length:
        raise TruncatedError(f"payload has {len(payload)} of {length} bytes")
    if zlib.crc32(payload) != crc:
        raise ChecksumError("payload CRC32 mismatch")
    net = MLP.__new__(MLP)
    net.sizes = sizes
    net.params = []
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            cnt = int(np.prod(shape))
            if off + 8 * cnt > length:
                raise TruncatedError("payload too short for the declared layer sizes")
            net.params.append(np.frombuffer(payload, dtype="<f8", count=cnt, offset=off).astype(np.float64).reshape(shape))
            off += 8 * cnt
    return net


def save_checkpoint(net: MLP, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(net))
    return path


def load_checkpoint(path) -> MLP:
    return decode_checkpoint(Path(path).read_bytes())
