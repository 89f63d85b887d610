"""Minimal numpy building blocks: padded 2D convolution and softmax."""
from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1,
           pad: int = 1) -> np.ndarray:
    """Cross-correlate ``x`` (H, W, Cin) with ``kernel`` (Cout, Cin, kh, kw), zero padded."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or k.ndim != 4 or k.shape[1] != x.shape[2]:
        raise InvalidParameterError(f"conv input {x.shape} incompatible with kernel {k.shape}")
    H, W, _ = x.shape
    cout, _, kh, kw = k.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((Ho, Wo, cout))
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[dy:dy + stride * (Ho - 1) + 1:stride, dx:dx + stride * (Wo - 1) + 1:stride]
            out += patch @ k[:, :, dy, dx].T
    return out + np.asarray(bias, dtype=np.float64)


def relu(x):
    return np.maximum(x, 0.0)


def softmax(x: np.ndarray, axis: int = 0) -> np.ndarray:
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)
