"""Planar geometry: SE(2) poses, vectorized map elements, BEV grids and rasters.

BEV convention: rows index the lateral axis ``x`` (30 m by default), columns
index the longitudinal axis ``y`` (60 m). A vehicle frame has ``x`` to the right
and ``y`` forward, so a vehicle whose local frame has yaw ``yaw`` drives along
world heading ``yaw + pi/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, box

from .errors import InvalidInputError, InvalidParameterError

CLASSES = ("divider", "ped_crossing", "boundary")
_SNAP = 1e-9


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(float(a), 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


@dataclass(frozen=True)
class Pose2:
    """Timestamped planar pose. ``t`` is seconds."""

    x: float
    y: float
    yaw: float
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))
        object.__setattr__(self, "t", float(self.t))

    @staticmethod
    def identity(t: float = 0.0) -> "Pose2":
        return Pose2(0.0, 0.0, 0.0, t)

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw, self.t)

    def compose(self, other: "Pose2") -> "Pose2":
        return compose_pose(self, other)

    def apply(self, points) -> np.ndarray:
        """Map (N, 2) points from this frame into the parent frame."""
        p = np.asarray(points, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty_like(p)
        out[..., 0] = c * p[..., 0] - s * p[..., 1] + self.x
        out[..., 1] = s * p[..., 0] + c * p[..., 1] + self.y
        return out

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


def compose_pose(a: Pose2, b: Pose2) -> Pose2:
    """Return ``a ∘ b``; the timestamp is taken from ``b``."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.yaw + b.yaw, b.t)


def inverse_pose(p: Pose2) -> Pose2:
    return p.inverse()


def relative_pose(src: Pose2, dst: Pose2) -> Pose2:
    """Pose of ``src`` expressed in the ``dst`` frame (``dst⁻¹ ∘ src``)."""
    return compose_pose(dst.inverse(), src)


@dataclass(frozen=True, eq=False)
class MapElement:
    """A class-labelled ordered point sequence."""

    cls: str
    points: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise InvalidInputError(f"unknown element class {self.cls!r}")
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidInputError(f"points must be (L, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise InvalidInputError("an element needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("non-finite element coordinates")
        if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 1e-6):
            raise InvalidInputError("consecutive points must be distinct")
        conf = float(self.confidence)
        if not 0.0 <= conf <= 1.0:
            raise InvalidInputError(f"confidence {conf} outside [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)

    def __eq__(self, other):
        if not isinstance(other, MapElement):
            return NotImplemented
        return (self.cls == other.cls and self.confidence == other.confidence
                and np.array_equal(self.points, other.points))

    __hash__ = None

    @property
    def length(self) -> float:
        return float(np.hypot(*np.diff(self.points, axis=0).T).sum())

    def with_points(self, points) -> "MapElement":
        return MapElement(self.cls, points, self.confidence)

    def with_confidence(self, confidence: float) -> "MapElement":
        return MapElement(self.cls, self.points, confidence)


def dedupe_points(points, tol: float = 1e-6) -> np.ndarray:
    """Drop points closer than ``tol`` to their predecessor."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return pts.reshape(0, 2)
    keep = [0]
    for i in range(1, len(pts)):
        if math.hypot(*(pts[i] - pts[keep[-1]])) > tol:
            keep.append(i)
    return pts[keep]


def resample_polyline(points, n: int) -> np.ndarray:
    """``n`` points equally spaced in arc length, endpoints included."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        raise InvalidInputError("zero-length polyline")
    q = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(q, s, pts[:, 0]), np.interp(q, s, pts[:, 1])], axis=1)


def resample_interval(points, step: float) -> np.ndarray:
    """Points every ``step`` meters along the polyline plus the final vertex."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    q = np.arange(0.0, s[-1], step)
    if s[-1] - q[-1] > 1e-9:
        q = np.append(q, s[-1])
    return np.stack([np.interp(q, s, pts[:, 0]), np.interp(q, s, pts[:, 1])], axis=1)


def transform_element(e: MapElement, src: Pose2, dst: Pose2) -> MapElement:
    """Re-express ``e`` (given in the ``src`` frame) in the ``dst`` frame."""
    if src == dst:
        return e
    return e.with_points(relative_pose(src, dst).apply(e.points))


@dataclass(frozen=True)
class BevGridSpec:
    """Metric extent and resolution of a BEV raster."""

    x_range: tuple[float, float] = (-15.0, 15.0)
    y_range: tuple[float, float] = (-30.0, 30.0)
    resolution: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))
        object.__setattr__(self, "resolution", float(self.resolution))
        if self.resolution <= 0:
            raise InvalidParameterError("resolution must be positive")
        for lo, hi in (self.x_range, self.y_range):
            n = (hi - lo) / self.resolution
            if hi <= lo or abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise InvalidParameterError(
                    f"extent [{lo}, {hi}] is not a positive multiple of {self.resolution}")

    @property
    def H(self) -> int:
        return int(round((self.x_range[1] - self.x_range[0]) / self.resolution))

    @property
    def W(self) -> int:
        return int(round((self.y_range[1] - self.y_range[0]) / self.resolution))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.H, self.W)

    def x_centers(self) -> np.ndarray:
        return self.x_range[0] + (np.arange(self.H) + 0.5) * self.resolution

    def y_centers(self) -> np.ndarray:
        return self.y_range[0] + (np.arange(self.W) + 0.5) * self.resolution

    def cell_centers(self) -> np.ndarray:
        """(H, W, 2) metric coordinates of every cell center."""
        xs, ys = np.meshgrid(self.x_centers(), self.y_centers(), indexing="ij")
        return np.stack([xs, ys], axis=-1)

    def xy_to_index(self, xy) -> np.ndarray:
        """Continuous (row, col) index; integer values are cell centers."""
        xy = np.asarray(xy, dtype=np.float64)
        out = np.empty_like(xy)
        out[..., 0] = (xy[..., 0] - self.x_range[0]) / self.resolution - 0.5
        out[..., 1] = (xy[..., 1] - self.y_range[0]) / self.resolution - 0.5
        return out

    def contains(self, xy, tol: float = 1e-9) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return ((xy[..., 0] >= self.x_range[0] - tol) & (xy[..., 0] <= self.x_range[1] + tol)
                & (xy[..., 1] >= self.y_range[0] - tol) & (xy[..., 1] <= self.y_range[1] + tol))

    def to_dict(self) -> dict:
        return {"x_range": list(self.x_range), "y_range": list(self.y_range),
                "resolution": self.resolution}


DEFAULT_SPEC = BevGridSpec()


@dataclass(frozen=True, eq=False)
class BevRaster:
    """(H, W, C) grid of reals over ``spec``."""

    spec: BevGridSpec
    data: np.ndarray
    channel_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[..., None]
        if d.shape[:2] != self.spec.shape or d.ndim != 3:
            raise InvalidParameterError(
                f"raster shape {d.shape} inconsistent with grid {self.spec.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidParameterError("raster data must be finite")
        names = tuple(self.channel_names)
        if names and len(names) != d.shape[2]:
            raise InvalidParameterError("channel_names length must equal channel count")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "channel_names", names)

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def with_data(self, data, channel_names=None) -> "BevRaster":
        names = self.channel_names if channel_names is None else channel_names
        d = np.asarray(data)
        if names and (d.ndim != 3 or d.shape[2] != len(names)):
            names = ()
        return BevRaster(self.spec, d, names)


def _snap(a: np.ndarray) -> np.ndarray:
    r = np.rint(a)
    return np.where(np.abs(a - r) < _SNAP, r, a)


def bilinear_sample(data: np.ndarray, rows, cols, mode: str = "zero") -> np.ndarray:
    """Bilinearly sample ``data`` (H, W, C) at continuous indices.

    ``mode="zero"`` treats every cell outside the grid as 0; ``mode="clamp"``
    replicates the border cells.
    """
    H, W = data.shape[:2]
    r = _snap(np.asarray(rows, dtype=np.float64))
    c = _snap(np.asarray(cols, dtype=np.float64))
    if mode == "clamp":
        r = np.clip(r, 0.0, H - 1)
        c = np.clip(c, 0.0, W - 1)
    r0 = np.floor(r)
    c0 = np.floor(c)
    fr = r - r0
    fc = c - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = np.zeros(r.shape + data.shape[2:], dtype=np.float64)
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            w = wr * wc
            ri = r0 + dr
            ci = c0 + dc
            ok = (ri >= 0) & (ri < H) & (ci >= 0) & (ci < W) & (w != 0.0)
            if not ok.any():
                continue
            vals = data[np.clip(ri, 0, H - 1), np.clip(ci, 0, W - 1)]
            wk = np.where(ok, w, 0.0)
            out += wk[..., None] * vals if data.ndim == 3 else wk * vals
    return out


def warp_raster(r: BevRaster, src: Pose2, dst: Pose2) -> BevRaster:
    """Resample a raster from the ``src`` vehicle frame into the ``dst`` frame.

    The result has ``C + 1`` channels; the last one is the validity mask
    (1 where the destination cell center falls inside the source extent).
    """
    spec = r.spec
    names = r.channel_names + ("valid",) if r.channel_names else ()
    if src == dst:
        data = np.concatenate([r.data, np.ones(spec.shape + (1,))], axis=2)
        return BevRaster(spec, data, names)
    rel = relative_pose(dst, src)
    pts = rel.apply(spec.cell_centers())
    idx = _snap(spec.xy_to_index(pts))
    rows, cols = idx[..., 0], idx[..., 1]
    valid = ((rows >= -0.5) & (rows <= spec.H - 0.5)
             & (cols >= -0.5) & (cols <= spec.W - 0.5))
    sampled = bilinear_sample(r.data, rows, cols, mode="clamp")
    sampled[~valid] = 0.0
    data = np.concatenate([sampled, valid[..., None].astype(np.float64)], axis=2)
    return BevRaster(spec, data, names)


def inject_pose_noise(p: Pose2, rot_std: float, trans_std: float,
                      rng: np.random.Generator) -> Pose2:
    """Perturb a pose with independent Gaussian yaw and x/y noise.

    Three normals are always drawn so the generator advances identically
    regardless of the noise level.
    """
    if rot_std < 0 or trans_std < 0:
        raise InvalidParameterError("noise standard deviations must be non-negative")
    z = rng.standard_normal(3)
    if rot_std == 0 and trans_std == 0:
        return p
    return Pose2(p.x + trans_std * z[1], p.y + trans_std * z[2], p.yaw + rot_std * z[0], p.t)


def clip_to_range(elements, spec: BevGridSpec = DEFAULT_SPEC) -> list[MapElement]:
    """Intersect polylines with the grid extent; pieces under 2 points are dropped.

    A polyline leaving and re-entering the extent yields one element per piece.
    """
    (x0, x1), (y0, y1) = spec.x_range, spec.y_range
    rect = None
    out = []
    for e in elements:
        pts = e.points
        if np.all(spec.contains(pts, tol=0.0)):
            out.append(e)
            continue
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        if hi[0] < x0 or lo[0] > x1 or hi[1] < y0 or lo[1] > y1:
            continue
        if rect is None:
            rect = box(x0, y0, x1, y1)
        inter = LineString(pts).intersection(rect)
        parts = getattr(inter, "geoms", [inter])
        for g in parts:
            if g.geom_type != "LineString" or g.is_empty:
                continue
            cp = dedupe_points(np.asarray(g.coords)[:, :2])
            cp[:, 0] = np.clip(cp[:, 0], x0, x1)
            cp[:, 1] = np.clip(cp[:, 1], y0, y1)
            cp = dedupe_points(cp)
            if len(cp) >= 2:
                out.append(e.with_points(cp))
    return out
