"""Pixel-wise BEV uncertainty maps and region-partitioned helper candidates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .geom import DEFAULT_SPEC, BevGridSpec, BevRaster, Pose2, relative_pose, warp_raster

DEFAULT_RADIUS = 1.5


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    """Neighborhood-averaged point uncertainty; ``coverage`` marks non-empty neighborhoods."""

    spec: BevGridSpec
    values: np.ndarray
    coverage: np.ndarray
    default: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        c = np.asarray(self.coverage, dtype=bool)
        if v.shape != self.spec.shape or c.shape != self.spec.shape:
            raise InvalidParameterError("uncertainty map shape does not match its grid")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "coverage", c)

    def effective(self) -> np.ndarray:
        """Values with uncovered cells treated as maximally uncertain (1)."""
        return np.where(self.coverage, self.values, 1.0)

    def to_raster(self) -> BevRaster:
        return BevRaster(self.spec, np.stack([self.values, self.coverage.astype(float)], axis=2),
                         ("uncertainty", "coverage"))

    @staticmethod
    def from_raster(r: BevRaster, default: float = 0.0) -> "UncertaintyMap":
        return UncertaintyMap(r.spec, r.data[..., 0], r.data[..., 1] > 0.5, default)


def warp_effective(m: UncertaintyMap, src: Pose2, dst: Pose2) -> np.ndarray:
    """Effective uncertainty of ``m`` (in ``src``) resampled into ``dst``; unseen cells are 1."""
    w = warp_raster(BevRaster(m.spec, m.effective()[..., None]), src, dst).data
    return np.where(w[..., 1] > 0, w[..., 0], 1.0)


def rasterize_uncertainty(points, u, spec: BevGridSpec = DEFAULT_SPEC,
                          d: float = DEFAULT_RADIUS, default: float = 0.0) -> UncertaintyMap:
    """Average point uncertainties within radius ``d`` of every cell center.

    ``points`` is (N, 2) in the map frame, ``u`` the matching (N,) uncertainties.
    Cells whose neighborhood is empty get ``default`` and ``coverage=False``.
    """
    if d <= 0:
        raise InvalidParameterError("neighborhood radius d must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if len(pts) != len(u):
        raise InvalidParameterError("points and uncertainties differ in length")
    total = np.zeros(spec.shape)
    count = np.zeros(spec.shape)
    lo = np.full(spec.shape, np.inf)
    hi = np.full(spec.shape, -np.inf)
    if len(pts):
        idx = spec.xy_to_index(pts)
        reach = int(math.ceil(d / spec.resolution)) + 1
        base = np.floor(idx).astype(np.int64)
        d2 = d * d * (1 + 1e-12)
        xs, ys = spec.x_centers(), spec.y_centers()
        for di in range(-reach, reach + 2):
            ri = base[:, 0] + di
            okr = (ri >= 0) & (ri < spec.H)
            for dj in range(-reach, reach + 2):
                cj = base[:, 1] + dj
                ok = okr & (cj >= 0) & (cj < spec.W)
                if not ok.any():
                    continue
                r_ok, c_ok = ri[ok], cj[ok]
                dist2 = (xs[r_ok] - pts[ok, 0]) ** 2 + (ys[c_ok] - pts[ok, 1]) ** 2
                near = dist2 <= d2
                np.add.at(total, (r_ok[near], c_ok[near]), u[ok][near])
                np.add.at(count, (r_ok[near], c_ok[near]), 1.0)
                np.minimum.at(lo, (r_ok[near], c_ok[near]), u[ok][near])
                np.maximum.at(hi, (r_ok[near], c_ok[near]), u[ok][near])
    cov = count > 0
    vals = np.full(spec.shape, float(default))
    # clipping to the neighborhood's range keeps uniform neighborhoods exact
    vals[cov] = np.clip(total[cov] / count[cov], lo[cov], hi[cov])
    return UncertaintyMap(spec, vals, cov, float(default))


@dataclass(frozen=True, eq=False)
class Candidate:
    id: str
    pose: Pose2
    umap: UncertaintyMap | None
    region_index: int


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Ego view plus at most one distinct helper view per BEV region."""

    ego_id: str
    ego_pose: Pose2
    ego_map: UncertaintyMap | None
    candidates: tuple[Candidate, ...]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.candidates)

    def __len__(self):
        return len(self.candidates)

    def get(self, cid: str) -> Candidate:
        for c in self.candidates:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def relative(self, cid: str) -> Pose2:
        return relative_pose(self.get(cid).pose, self.ego_pose)

    def with_maps(self, ego_map: UncertaintyMap, maps: dict) -> "CandidateSet":
        return CandidateSet(self.ego_id, self.ego_pose, ego_map,
                            tuple(Candidate(c.id, c.pose, maps[c.id], c.region_index)
                                  for c in self.candidates))


def region_centers(spec: BevGridSpec, n_h: int, n_w: int) -> np.ndarray:
    """(n_h * n_w, 2) ego-frame centers; region ``a * n_w + b`` is row ``a``, column ``b``."""
    if n_h < 1 or n_w < 1:
        raise InvalidParameterError("region counts must be at least 1")
    sx = (spec.x_range[1] - spec.x_range[0]) / n_h
    sy = (spec.y_range[1] - spec.y_range[0]) / n_w
    if abs(sx - sy) > 1e-9 * max(sx, sy):
        raise InvalidParameterError(f"regions are {sx} x {sy} m, not square")
    xs = spec.x_range[0] + (np.arange(n_h) + 0.5) * sx
    ys = spec.y_range[0] + (np.arange(n_w) + 0.5) * sy
    return np.array([(x, y) for x in xs for y in ys])


def partition_candidates(ego: tuple[str, Pose2], others, spec: BevGridSpec = DEFAULT_SPEC,
                         n_h: int = 2, n_w: int = 4) -> CandidateSet:
    """Assign distinct helpers to region centers by nearest distance.

    Regions propose to helpers in order of increasing distance; a helper holds
    the proposal from the region center nearest to it. This is a stable
    matching: every helper ends up at its nearest competing region, and
    regions that lose a helper fall back to their next-nearest free one.
    Ties prefer the lower helper id (for regions) and lower region index (for
    helpers).
    """
    centers = region_centers(spec, n_h, n_w)
    ego_id, ego_pose = ego
    others = sorted(((str(i), p) for i, p in others), key=lambda t: t[0])
    if not others:
        return CandidateSet(ego_id, ego_pose, None, ())
    local = ego_pose.inverse().apply(np.array([[p.x, p.y] for _, p in others]))
    dist = np.hypot(local[None, :, 0] - centers[:, None, 0],
                    local[None, :, 1] - centers[:, None, 1])
    n_r, n_v = dist.shape
    prefs = [list(np.lexsort((np.arange(n_v), dist[r]))) for r in range(n_r)]
    nxt = [0] * n_r
    holder = {}
    free = list(range(n_r))
    while free:
        r = free.pop(0)
        while nxt[r] < n_v:
            v = int(prefs[r][nxt[r]])
            nxt[r] += 1
            cur = holder.get(v)
            if cur is None:
                holder[v] = r
                break
            if (dist[r, v], r) < (dist[cur, v], cur):
                holder[v] = r
                free.append(cur)
                break
    chosen = sorted(holder.items(), key=lambda kv: kv[1])
    cands = tuple(Candidate(others[v][0], others[v][1], None, r) for v, r in chosen)
    return CandidateSet(ego_id, ego_pose, None, cands)
