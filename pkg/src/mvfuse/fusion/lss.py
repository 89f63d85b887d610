"""Frustum-to-BEV pooling: depth-weighted sums and max-probability selection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..geom import BevGridSpec, BevRaster


@dataclass(frozen=True, eq=False)
class FrustumTensor:
    """Per (ray, bin) features ``(R, D, C)``, depth probabilities ``(R, D)`` and cells ``(R, D, 2)``."""

    features: np.ndarray
    depth_prob: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        p = np.asarray(self.depth_prob, dtype=np.float64)
        c = np.asarray(self.cells, dtype=np.int64)
        if f.ndim != 3 or p.shape != f.shape[:2] or c.shape != f.shape[:2] + (2,):
            raise InvalidInputError("frustum arrays have inconsistent shapes")
        if np.any(p < 0) or np.any(p > 1) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
            raise InvalidInputError("depth probabilities must lie in [0,1] and sum to 1 per ray")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "depth_prob", p)
        object.__setattr__(self, "cells", c)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.features.shape

    def check_grid(self, spec: BevGridSpec):
        r, c = self.cells[..., 0], self.cells[..., 1]
        if np.any(r < 0) or np.any(r >= spec.H) or np.any(c < 0) or np.any(c >= spec.W):
            raise InvalidInputError("frustum cell mapping leaves the grid")


def build_frustum(spec: BevGridSpec, directions, depths, features, depth_prob,
                  origin=(0.0, 0.0)) -> FrustumTensor:
    """Map rays (angles from +x, radians) and bin depths (m) to grid cells.

    Bins whose sample point falls outside the extent are clamped onto the
    border cell so every (ray, bin) keeps a valid target.
    """
    ang = np.asarray(directions, dtype=np.float64)
    dep = np.asarray(depths, dtype=np.float64)
    xy = np.stack([origin[0] + dep[None, :] * np.cos(ang)[:, None],
                   origin[1] + dep[None, :] * np.sin(ang)[:, None]], axis=-1)
    idx = np.floor(spec.xy_to_index(xy)).astype(np.int64)
    idx[..., 0] = np.clip(idx[..., 0], 0, spec.H - 1)
    idx[..., 1] = np.clip(idx[..., 1], 0, spec.W - 1)
    return FrustumTensor(features, depth_prob, idx)


def sector_directions(num_cameras: int, rays_per_camera: int) -> np.ndarray:
    """Evenly spaced ray angles, ``rays_per_camera`` inside each camera sector."""
    width = 2 * math.pi / num_cameras
    k = np.arange(num_cameras * rays_per_camera)
    return (k // rays_per_camera) * width + ((k % rays_per_camera) + 0.5) * width / rays_per_camera


def soft_lss_pool(f: FrustumTensor, spec: BevGridSpec) -> BevRaster:
    f.check_grid(spec)
    R, D, C = f.shape
    out = np.zeros(spec.shape + (C,))
    w = (f.depth_prob[..., None] * f.features).reshape(-1, C)
    cells = f.cells.reshape(-1, 2)
    np.add.at(out, (cells[:, 0], cells[:, 1]), w)
    return BevRaster(spec, out)


def hard_lss_pool(f: FrustumTensor, spec: BevGridSpec) -> BevRaster:
    """Copy the highest-probability contributor per cell; last channel is that probability."""
    f.check_grid(spec)
    R, D, C = f.shape
    cells = f.cells.reshape(-1, 2)
    flat = cells[:, 0] * spec.W + cells[:, 1]
    p = f.depth_prob.reshape(-1)
    k = np.arange(R * D)
    order = np.lexsort((k, -p, flat))
    first = order[np.concatenate([[True], flat[order][1:] != flat[order][:-1]])]
    out = np.zeros(spec.shape + (C + 1,))
    out[cells[first, 0], cells[first, 1], :C] = f.features.reshape(-1, C)[first]
    out[cells[first, 0], cells[first, 1], C] = p[first]
    return BevRaster(spec, out)
