"""Semantic noise filtering: per-pixel softmax gating across ego and helper sources."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameterError
from ..geom import BevRaster
from ..io import load_arrays, save_arrays
from ..nn import conv2d, softmax


@dataclass(frozen=True, eq=False)
class SnfParams:
    """One 3x3 scoring convolution over ``[feature ∥ semantic]`` channels."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if k.ndim != 4 or k.shape[0] != 1 or b.shape != (1,):
            raise InvalidParameterError("noise scorer must map to a single score channel")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(b))):
            raise InvalidParameterError("non-finite noise scorer parameters")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


def default_snf_params(n_feat: int = 4, n_sem: int = 3, vis_gain: float = 5.0,
                       sem_gain: float = 0.0, vis_channel: int = 3) -> SnfParams:
    """Center-tap scorer: a source's score is ``vis_gain`` times its visibility."""
    k = np.zeros((1, n_feat + n_sem, 3, 3))
    if 0 <= vis_channel < n_feat:
        k[0, vis_channel, 1, 1] = vis_gain
    k[0, n_feat:, 1, 1] = sem_gain
    return SnfParams(k, np.zeros(1))


def snf_scores(feature: BevRaster, sem: BevRaster, params: SnfParams) -> np.ndarray:
    """(H, W) noise score of one source."""
    if feature.spec != sem.spec:
        raise InvalidParameterError("feature and semantic rasters use different grids")
    x = np.concatenate([feature.data, sem.data], axis=2)
    if x.shape[2] != params.in_channels:
        raise InvalidParameterError(
            f"noise scorer expects {params.in_channels} channels, got {x.shape[2]}")
    return conv2d(x, params.kernel, params.bias)[..., 0]


def snf_combine(features, scores) -> tuple[np.ndarray, np.ndarray]:
    """Softmax the stacked scores over sources and blend the feature arrays."""
    if len(features) == 1:
        return np.asarray(features[0], dtype=np.float64).copy(), np.ones((1,) + scores[0].shape)
    S = softmax(np.stack(scores), axis=0)
    B = np.stack(features)
    return np.einsum("khw,khwc->hwc", S, B), S


def snf_fuse(ego, helpers, params: SnfParams) -> tuple[BevRaster, np.ndarray]:
    """Fuse ``ego=(B_e, sem_e)`` with ``helpers=[(B_v, sem_v), ...]``; returns ``(B_f, S)``."""
    sources = [ego] + list(helpers)
    spec = ego[0].spec
    for f, s in sources:
        if f.spec != spec or s.spec != spec or f.channels != ego[0].channels:
            raise InvalidParameterError("all fusion sources must share grid and channels")
    scores = [snf_scores(f, s, params) for f, s in sources]
    B, S = snf_combine([f.data for f, _ in sources], scores)
    return ego[0].with_data(B), S


def save_snf_params(path, p: SnfParams):
    return save_arrays(path, {"kernel": p.kernel, "bias": p.bias}, {"kind": "snf"})


def load_snf_params(path) -> SnfParams:
    a, _ = load_arrays(path)
    return SnfParams(a["kernel"], a["bias"])
