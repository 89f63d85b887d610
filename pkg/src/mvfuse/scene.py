"""Synthetic multi-trajectory road scenes and range/occlusion-limited sensing."""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidParameterError
from .geom import (CLASSES, DEFAULT_SPEC, BevGridSpec, BevRaster, MapElement, Pose2,
                   resample_interval)
from . import io as mio

OBS_CHANNELS = CLASSES + ("visibility",)
ASSOC_RADIUS = 60.0
ASSOC_MIN_DT = 1800.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Scene generator settings; readable from a ``key = value`` text file."""

    n_lanes: int = 3
    n_crossings: int = 2
    n_boundaries: int = 2
    occluders_min: int = 2
    occluders_max: int = 6
    n_trajectories: int = 9
    frame_rate: float = 2.0
    duration: float = 20.0
    lane_width: float = 3.5
    road_length: float = 200.0
    jitter: float = 0.15
    speed_min: float = 5.0
    speed_max: float = 11.0
    session_gap: float = 3600.0
    same_session: int = 0
    helper_spread: float = 35.0
    occluder_spread: float = 30.0
    occluder_length: tuple[float, float] = (6.0, 12.0)
    occluder_width: tuple[float, float] = (2.0, 2.6)
    crossing_depth: float = 4.0
    static_occluders: int = 0

    def __post_init__(self):
        n_el = max(self.n_lanes - 1, 0) + self.n_crossings + self.n_boundaries
        if self.n_lanes < 1 or n_el == 0:
            raise InvalidConfigError("scenario must contain at least one map element")
        if self.n_boundaries not in (0, 1, 2):
            raise InvalidConfigError("n_boundaries must be 0, 1 or 2")
        if self.n_trajectories < 1:
            raise InvalidConfigError("need at least the ego trajectory")
        if not 0 <= self.occluders_min <= self.occluders_max or self.static_occluders < 0:
            raise InvalidConfigError("occluder count range is empty")
        if self.frame_rate <= 0 or self.duration < 0 or self.speed_min <= 0:
            raise InvalidConfigError("frame rate, duration and speed must be positive")
        if self.same_session > self.n_trajectories - 1:
            raise InvalidConfigError("same_session exceeds the non-ego trajectory count")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def load_scenario_config(path) -> ScenarioConfig:
    """Parse a plain ``key = value`` file (``#`` comments, optional ``[scenario]``)."""
    text = Path(path).read_text()
    if not any(line.strip().startswith("[") for line in text.splitlines()):
        text = "[scenario]\n" + text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(text)
    sec = cp["scenario"] if cp.has_section("scenario") else cp[cp.sections()[0]]
    kinds = {f.name: f.type for f in fields(ScenarioConfig)}
    kw = {}
    for key, raw in sec.items():
        if key not in kinds:
            raise InvalidConfigError(f"unknown scenario key {key!r}")
        kind = kinds[key]
        if "tuple" in str(kind):
            kw[key] = tuple(float(v) for v in raw.replace(",", " ").split())
        elif kind in (int, "int"):
            kw[key] = int(raw)
        else:
            kw[key] = float(raw)
    return ScenarioConfig(**kw)


@dataclass(frozen=True)
class TrajectoryLog:
    vehicle_id: str
    frames: tuple[Pose2, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise InvalidConfigError(f"trajectory {self.vehicle_id} has no frames")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidConfigError(f"trajectory {self.vehicle_id} timestamps not increasing")


@dataclass(frozen=True, eq=False)
class Scene:
    """Ground-truth map, occluder rectangles and trajectory logs (global frame).

    ``occluders`` are static and block every view; ``session_occluders[k]``
    (transient traffic) only exists during trajectory ``k``'s traversal.
    ``ego_index`` selects trajectory 0's frame used as the default ego frame.
    """

    gt_elements: tuple[MapElement, ...]
    occluders: tuple[np.ndarray, ...]
    trajectories: tuple[TrajectoryLog, ...]
    ego_index: int = 0
    session_occluders: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gt_elements", tuple(self.gt_elements))
        object.__setattr__(self, "occluders",
                           tuple(np.asarray(o, dtype=np.float64) for o in self.occluders))
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        sess = tuple(tuple(np.asarray(o, dtype=np.float64) for o in grp)
                     for grp in self.session_occluders)
        if sess and len(sess) != len(self.trajectories):
            raise InvalidConfigError("session occluders must align with trajectories")
        object.__setattr__(self, "session_occluders", sess)
        if not self.gt_elements:
            raise InvalidConfigError("scene has no ground-truth elements")
        if not self.trajectories:
            raise InvalidConfigError("scene has no trajectories")

    def ego_frame(self) -> tuple[str, Pose2]:
        t = self.trajectories[0]
        return t.vehicle_id, t.frames[min(self.ego_index, len(t.frames) - 1)]

    def session_index(self, vehicle_id: str) -> int | None:
        """Trajectory index of a vehicle or view id (``"v03"`` or ``"v03:017"``)."""
        key = str(vehicle_id).split(":")[0]
        for k, t in enumerate(self.trajectories):
            if t.vehicle_id == key:
                return k
        return None

    def occluders_for(self, vehicle_id: str | None = None) -> tuple[np.ndarray, ...]:
        k = None if vehicle_id is None else self.session_index(vehicle_id)
        extra = self.session_occluders[k] if (k is not None and self.session_occluders) else ()
        return self.occluders + tuple(extra)

    def occluder_segments(self, vehicle_id: str | None = None) -> np.ndarray:
        """(S, 2, 2) occluder edges visible to ``vehicle_id`` (static ones only if None)."""
        segs = [np.stack([o, np.roll(o, -1, axis=0)], axis=1)
                for o in self.occluders_for(vehicle_id)]
        return np.concatenate(segs) if segs else np.zeros((0, 2, 2))

    def sampled_points(self, step: float = 0.5) -> list[np.ndarray]:
        cache = self.__dict__.setdefault("_samples", {})
        if step not in cache:
            cache[step] = [resample_interval(e.points, step) for e in self.gt_elements]
        return cache[step]

    def to_dict(self) -> dict:
        return {
            "gt_elements": [mio.element_to_dict(e) for e in self.gt_elements],
            "occluders": [o.tolist() for o in self.occluders],
            "trajectories": [{"vehicle_id": t.vehicle_id,
                              "frames": [mio.pose_to_dict(f) for f in t.frames]}
                             for t in self.trajectories],
            "ego_index": self.ego_index,
            "session_occluders": [[o.tolist() for o in grp] for grp in self.session_occluders],
        }

    @staticmethod
    def from_dict(d: dict) -> "Scene":
        return Scene(
            [mio.element_from_dict(e) for e in d["gt_elements"]],
            [np.asarray(o) for o in d["occluders"]],
            [TrajectoryLog(t["vehicle_id"], [mio.pose_from_dict(f) for f in t["frames"]])
             for t in d["trajectories"]],
            d.get("ego_index", 0),
            [[np.asarray(o) for o in grp] for grp in d.get("session_occluders", [])],
        )


# --- road synthesis -------------------------------------------------------

def _reference_path(length: float, rng: np.random.Generator, step: float = 0.5):
    """Centerline of straight and circular-arc pieces; returns points and headings."""
    heading = rng.uniform(-math.pi, math.pi)
    xy = np.zeros(2)
    pts, hds = [xy.copy()], [heading]
    total, straight = 0.0, True
    while total < length:
        if straight:
            seg_len = rng.uniform(30.0, 70.0)
            curv = 0.0
        else:
            radius = rng.uniform(80.0, 250.0)
            seg_len = abs(rng.uniform(-0.5, 0.5)) * radius + 10.0
            curv = rng.choice([-1.0, 1.0]) / radius
        straight = not straight
        n = max(int(math.ceil(seg_len / step)), 1)
        ds = seg_len / n
        for _ in range(n):
            if total >= length:
                break
            heading += curv * ds
            xy = xy + ds * np.array([math.cos(heading), math.sin(heading)])
            pts.append(xy.copy())
            hds.append(heading)
            total += ds
    pts = np.asarray(pts)
    return pts - pts[len(pts) // 2], np.asarray(hds)


class _Road:
    def __init__(self, pts: np.ndarray, hds: np.ndarray):
        self.pts = pts
        self.hds = hds
        self.s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
        self.normals = np.stack([-np.sin(hds), np.cos(hds)], axis=1)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s, lateral=0.0):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        x = np.interp(s, self.s, self.pts[:, 0])
        y = np.interp(s, self.s, self.pts[:, 1])
        h = np.interp(s, self.s, np.unwrap(self.hds))
        lat = np.asarray(lateral, dtype=np.float64)
        return (np.stack([x - np.sin(h) * lat, y + np.cos(h) * lat], axis=-1), h)

    def offset_line(self, lateral: float) -> np.ndarray:
        return self.pts + lateral * self.normals


def _rectangle(center, heading, length, width) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    u = np.array([c, s]) * length / 2
    v = np.array([-s, c]) * width / 2
    return np.array([center + u + v, center - u + v, center - u - v, center + u - v])


def _inside_rect(rect: np.ndarray, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
    c = rect.mean(axis=0)
    u = rect[0] - rect[1]
    v = rect[0] - rect[3]
    lu, lv = np.linalg.norm(u), np.linalg.norm(v)
    d = np.atleast_2d(pts) - c
    a = np.abs(d @ (u / lu))
    b = np.abs(d @ (v / lv))
    return (a <= lu / 2 + margin) & (b <= lv / 2 + margin)


def generate_scene(cfg: ScenarioConfig, seed: int) -> Scene:
    """Synthesize one scene around trajectory 0 (the ego) deterministically."""
    rng = np.random.default_rng(seed)
    road = _Road(*_reference_path(cfg.road_length, rng))
    width = cfg.n_lanes * cfg.lane_width
    s_mid = road.length / 2

    elements: list[MapElement] = []
    for k in range(1, cfg.n_lanes):
        elements.append(MapElement("divider", road.offset_line(-width / 2 + k * cfg.lane_width)))
    for sign in (1.0, -1.0)[:cfg.n_boundaries]:
        elements.append(MapElement("boundary", road.offset_line(sign * width / 2)))
    for _ in range(cfg.n_crossings):
        s_c = s_mid + rng.uniform(-25.0, 25.0)
        (c, h) = road.at(s_c)
        rect = _rectangle(c, float(h), cfg.crossing_depth, width)
        elements.append(MapElement("ped_crossing", np.vstack([rect, rect[:1]])))

    lane_centers = -width / 2 + (np.arange(cfg.n_lanes) + 0.5) * cfg.lane_width
    ego_lane = int(rng.integers(cfg.n_lanes))
    ego_xy, _ = road.at(s_mid, lane_centers[ego_lane])

    def draw_occluders(n, avoid):
        out = []
        while len(out) < n:
            s_o = s_mid + rng.uniform(-cfg.occluder_spread, cfg.occluder_spread)
            lat = rng.choice(np.append(lane_centers, [-width / 2 - 1.5, width / 2 + 1.5]))
            c, h = road.at(s_o, lat)
            rect = _rectangle(c, float(h), rng.uniform(*cfg.occluder_length),
                              rng.uniform(*cfg.occluder_width))
            if avoid is not None and _inside_rect(rect, avoid, margin=2.0).any():
                continue
            out.append(rect)
        return out

    occluders = draw_occluders(cfg.static_occluders, ego_xy)

    n_frames = max(int(round(cfg.duration * cfg.frame_rate)), 1)
    trajectories = []
    mid = n_frames // 2
    ego_index = mid
    session_occluders = []
    for k in range(cfg.n_trajectories):
        n_occ = int(rng.integers(cfg.occluders_min, cfg.occluders_max + 1))
        own = draw_occluders(n_occ, ego_xy if k == 0 else None)
        while True:
            if k == 0:
                lane, direction, s_center = ego_lane, 1.0, s_mid
                t0 = 0.0
            else:
                lane = int(rng.integers(cfg.n_lanes))
                direction = float(rng.choice([-1.0, 1.0]))
                s_center = s_mid + rng.uniform(-cfg.helper_spread, cfg.helper_spread)
                t0 = (rng.uniform(0.0, 5.0) if k <= cfg.same_session
                      else k * cfg.session_gap + rng.uniform(0.0, 60.0))
            speed = rng.uniform(cfg.speed_min, cfg.speed_max)
            tt = np.arange(n_frames) / cfg.frame_rate
            s_f = s_center + direction * speed * (tt - tt[mid])
            lat = lane_centers[lane] + rng.normal(0.0, cfg.jitter, n_frames)
            xy, h = road.at(s_f, lat)
            yaw = h + (0.0 if direction > 0 else math.pi) - math.pi / 2
            yaw = yaw + rng.normal(0.0, 0.01, n_frames)
            if k == 0:
                xy[mid] = ego_xy
            keep = (s_f >= 0) & (s_f <= road.length)
            for rect in occluders + own:
                keep &= ~_inside_rect(rect, xy, margin=0.5)
            if k == 0:
                keep[mid] = True
            frames = [Pose2(xy[i, 0], xy[i, 1], yaw[i], t0 + tt[i])
                      for i in range(n_frames) if keep[i]]
            if frames:
                break
        if k == 0:
            ego_index = int(keep[:mid].sum())
        trajectories.append(TrajectoryLog(f"v{k:02d}", frames))
        session_occluders.append(tuple(own))
    return Scene(elements, occluders, trajectories, ego_index, tuple(session_occluders))


# --- sensing ----------------------------------------------------------------

@dataclass(frozen=True)
class SensorModel:
    """Distance/occlusion uncertainty surrogate.

    ``U = min(1, dist_weight * dist / max_range + occl_weight * occluded)``;
    points with ``U > drop_threshold`` are not observed.
    """

    max_range: float = 60.0
    num_cameras: int = 6
    dist_weight: float = 0.5
    occl_weight: float = 1.0
    drop_threshold: float = 0.9
    sample_step: float = 0.5
    splat_radius: float = 0.5
    uncertainty_noise: float = 0.0

    def __post_init__(self):
        if self.max_range <= 0:
            raise InvalidParameterError("max_range must be positive")
        if self.dist_weight < 0 or self.occl_weight < 0:
            raise InvalidParameterError("uncertainty weights must be non-negative")
        if not 0.0 < self.drop_threshold <= 1.0:
            raise InvalidParameterError("drop_threshold must lie in (0, 1]")

    def sector(self, xy) -> np.ndarray:
        """Camera index covering each ego-frame point (equal angular sectors)."""
        xy = np.asarray(xy, dtype=np.float64)
        ang = np.mod(np.arctan2(xy[..., 0], xy[..., 1]), 2 * math.pi)
        return np.minimum((ang / (2 * math.pi) * self.num_cameras).astype(int),
                          self.num_cameras - 1)


def rays_blocked(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """True where the segment from the origin to each point crosses a segment."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(segments) == 0 or len(pts) == 0:
        return np.zeros(len(pts), dtype=bool)
    c = segments[None, :, 0, :]
    e = segments[None, :, 1, :] - c
    p = pts[:, None, :]
    denom = p[..., 0] * e[..., 1] - p[..., 1] * e[..., 0]
    num_t = c[..., 0] * e[..., 1] - c[..., 1] * e[..., 0]
    num_u = c[..., 0] * p[..., 1] - c[..., 1] * p[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / denom
        u = num_u / denom
    hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    return hit.any(axis=1)


@dataclass(frozen=True, eq=False)
class Observation:
    """One vehicle's ego-frame view.

    ``xy``/``u``/``element_ids``/``point_index`` describe surviving points;
    ``dropped_xy``/``dropped_u`` keep the points rejected as too uncertain (the
    uncertainty map is built from both). ``raster`` channels are the three class
    confidences followed by a per-cell visibility confidence.
    """

    vehicle_id: str
    pose: Pose2
    element_ids: np.ndarray
    point_index: np.ndarray
    xy: np.ndarray
    u: np.ndarray
    dropped_xy: np.ndarray
    dropped_u: np.ndarray
    raster: BevRaster

    @property
    def points(self):
        return [(int(e), int(i), (float(p[0]), float(p[1])), float(u))
                for e, i, p, u in zip(self.element_ids, self.point_index, self.xy, self.u)]

    def uncertainty_points(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.concatenate([self.xy, self.dropped_xy]),
                np.concatenate([self.u, self.dropped_u]))

    def to_dict(self) -> dict:
        return {"vehicle_id": self.vehicle_id, "pose": mio.pose_to_dict(self.pose),
                "points": [{"element_id": e, "point_index": i, "x": p[0], "y": p[1], "u": u}
                           for e, i, p, u in self.points],
                "dropped": [{"x": float(p[0]), "y": float(p[1]), "u": float(u)}
                            for p, u in zip(self.dropped_xy, self.dropped_u)],
                "channels": list(self.raster.channel_names)}


def _splat(raster: np.ndarray, spec: BevGridSpec, xy: np.ndarray, val: np.ndarray,
           ch: np.ndarray, radius: float):
    idx = spec.xy_to_index(xy)
    reach = int(math.ceil(radius / spec.resolution))
    base = np.rint(idx).astype(np.int64)
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            ri = base[:, 0] + di
            cj = base[:, 1] + dj
            dist = np.hypot(ri - idx[:, 0], cj - idx[:, 1]) * spec.resolution
            inside = (ri >= 0) & (ri < spec.H) & (cj >= 0) & (cj < spec.W)
            ok = inside & ((dist <= radius + 1e-9) | ((di == 0) & (dj == 0)))
            np.maximum.at(raster, (ri[ok], cj[ok], ch[ok]), val[ok])


def rasterize_elements(elements, spec: BevGridSpec = DEFAULT_SPEC, radius: float = 0.5,
                       step: float = 0.25, value: float = 1.0) -> BevRaster:
    """Max-splat map elements (in the grid frame) into one channel per class."""
    out = np.zeros(spec.shape + (len(CLASSES),))
    for e in elements:
        pts = resample_interval(e.points, step)
        pts = pts[spec.contains(pts)]
        if len(pts):
            _splat(out, spec, pts, np.full(len(pts), float(value)),
                   np.full(len(pts), CLASSES.index(e.cls)), radius)
    return BevRaster(spec, out, CLASSES)


def visibility_map(pose: Pose2, segments: np.ndarray, spec: BevGridSpec,
                   sm: SensorModel, seg_local: np.ndarray | None = None) -> np.ndarray:
    """Per-cell confidence ``1 - U`` of the cell center; 0 beyond ``max_range``."""
    if seg_local is None:
        seg_local = _segments_local(pose, segments)
    cc = spec.cell_centers().reshape(-1, 2)
    dist = np.hypot(cc[:, 0], cc[:, 1])
    occ = rays_blocked(cc, seg_local)
    u = np.minimum(1.0, sm.dist_weight * dist / sm.max_range + sm.occl_weight * occ)
    vis = np.where(dist <= sm.max_range, 1.0 - u, 0.0)
    return vis.reshape(spec.shape)


def _segments_local(pose: Pose2, segments: np.ndarray) -> np.ndarray:
    if len(segments) == 0:
        return segments
    inv = pose.inverse()
    return inv.apply(segments.reshape(-1, 2)).reshape(-1, 2, 2)


def observe(scene: Scene, pose: Pose2, sm: SensorModel = SensorModel(),
            rng: np.random.Generator | None = None, vehicle_id: str = "",
            spec: BevGridSpec = DEFAULT_SPEC) -> Observation:
    """Sense the scene from ``pose``: per-point uncertainty, drop, rasterize.

    ``vehicle_id`` (a trajectory or view id) selects which session's transient
    occluders are present; static occluders always apply.
    """
    inv = pose.inverse()
    seg = _segments_local(pose, scene.occluder_segments(vehicle_id or None))
    ids, pidx, xys = [], [], []
    for k, pts in enumerate(scene.sampled_points(sm.sample_step)):
        local = inv.apply(pts)
        ids.append(np.full(len(pts), k))
        pidx.append(np.arange(len(pts)))
        xys.append(local)
    ids = np.concatenate(ids)
    pidx = np.concatenate(pidx)
    xy = np.concatenate(xys)
    dist = np.hypot(xy[:, 0], xy[:, 1])
    near = dist <= sm.max_range
    ids, pidx, xy, dist = ids[near], pidx[near], xy[near], dist[near]
    occ = rays_blocked(xy, seg)
    u = np.minimum(1.0, sm.dist_weight * dist / sm.max_range + sm.occl_weight * occ)
    if sm.uncertainty_noise > 0:
        if rng is None:
            raise InvalidParameterError("uncertainty_noise requires an rng")
        u = np.clip(u + rng.normal(0.0, sm.uncertainty_noise, len(u)), 0.0, 1.0)
    keep = u <= sm.drop_threshold

    raster = np.zeros(spec.shape + (len(OBS_CHANNELS),))
    cls_idx = np.array([CLASSES.index(e.cls) for e in scene.gt_elements])
    sel = keep & spec.contains(xy)
    if sel.any():
        _splat(raster, spec, xy[sel], 1.0 - u[sel], cls_idx[ids[sel]], sm.splat_radius)
    raster[..., 3] = visibility_map(pose, None, spec, sm, seg_local=seg)
    return Observation(
        vehicle_id, pose, ids[keep], pidx[keep], xy[keep], u[keep], xy[~keep], u[~keep],
        BevRaster(spec, raster, OBS_CHANNELS))


# --- helper association -----------------------------------------------------

@dataclass(frozen=True)
class HelperFrame:
    vehicle_id: str
    frame_index: int
    pose: Pose2

    @property
    def view_id(self) -> str:
        return f"{self.vehicle_id}:{self.frame_index:03d}"


@dataclass(frozen=True)
class Association:
    frames: tuple[HelperFrame, ...]
    fallback: bool

    def __iter__(self):
        return iter(self.frames)

    def __len__(self):
        return len(self.frames)


def associate_helpers(trajs, ego_frame: tuple[str, Pose2], radius: float = ASSOC_RADIUS,
                      min_dt: float = ASSOC_MIN_DT) -> Association:
    """Frames of other trajectories within ``radius`` and ``|Δt| >= min_dt``.

    Both thresholds are inclusive. When nothing qualifies, every other frame of
    the ego's own trajectory is returned with ``fallback=True``.
    """
    ego_id, ego = ego_frame
    found, own = [], []
    for traj in trajs:
        for i, f in enumerate(traj.frames):
            if traj.vehicle_id == ego_id:
                if f.t != ego.t:
                    own.append(HelperFrame(traj.vehicle_id, i, f))
                continue
            if math.hypot(f.x - ego.x, f.y - ego.y) <= radius and abs(f.t - ego.t) >= min_dt:
                found.append(HelperFrame(traj.vehicle_id, i, f))
    if found:
        return Association(tuple(found), False)
    return Association(tuple(own), True)


DEFAULT_BINS = ((0.0, 10.0), (10.0, 20.0), (20.0, 30.0), (30.0, 40.0), (40.0, 50.0),
                (50.0, 60.0), (0.0, 60.0))
REPORTED_COVERAGE = {"nuScenes": 0.846, "AV2": 0.702}


@dataclass
class AvailabilityStats:
    """``counts[b][k-1]``: ego frames with at least ``k`` candidate vehicles in bin ``b``."""

    bins: tuple[tuple[float, float], ...]
    ks: tuple[int, ...]
    counts: list[list[int]]
    n_frames: int
    fraction_with_candidate: float
    per_frame: list[list[int]] = field(default_factory=list)
    reference: dict = field(default_factory=lambda: dict(REPORTED_COVERAGE))

    def to_dict(self) -> dict:
        return {"bins": [list(b) for b in self.bins], "ks": list(self.ks),
                "counts": self.counts, "n_frames": self.n_frames,
                "fraction_with_candidate": self.fraction_with_candidate,
                "reference_coverage": self.reference}


def helper_availability_stats(scenes, bins=DEFAULT_BINS, max_k: int = 10,
                              radius: float = ASSOC_RADIUS,
                              min_dt: float = ASSOC_MIN_DT) -> AvailabilityStats:
    """Histogram of qualifying non-ego vehicles per ego frame and distance bin.

    Every frame of every trajectory acts as an ego frame. A vehicle counts in a
    bin when its nearest time-qualifying frame lies at distance ``d`` with
    ``lo < d <= hi`` (``d = 0`` falls in bins starting at 0).
    """
    ks = tuple(range(1, max_k + 1))
    counts = [[0] * len(ks) for _ in bins]
    per_frame, n_frames, n_any = [], 0, 0
    for scene in scenes:
        trajs = scene.trajectories
        arrays = [(np.array([[f.x, f.y] for f in t.frames]), np.array([f.t for f in t.frames]))
                  for t in trajs]
        for a, ta in enumerate(trajs):
            xy_a, t_a = arrays[a]
            for i in range(len(ta.frames)):
                n_frames += 1
                nearest = []
                for b, _ in enumerate(trajs):
                    if b == a:
                        continue
                    xy_b, t_b = arrays[b]
                    ok = np.abs(t_b - t_a[i]) >= min_dt
                    if not ok.any():
                        continue
                    nearest.append(float(np.hypot(*(xy_b[ok] - xy_a[i]).T).min()))
                nearest = np.asarray(nearest)
                row = []
                for bi, (lo, hi) in enumerate(bins):
                    in_bin = (nearest <= hi) & ((nearest > lo) | (lo <= 0.0))
                    n = int(in_bin.sum())
                    row.append(n)
                    for ki, k in enumerate(ks):
                        if n >= k:
                            counts[bi][ki] += 1
                per_frame.append(row)
                if (nearest <= radius).any():
                    n_any += 1
    frac = n_any / n_frames if n_frames else 0.0
    return AvailabilityStats(tuple(bins), ks, counts, n_frames, frac, per_frame)
