"""Raster-to-polyline decoding: threshold, components, skeletons, path tracing."""
from __future__ import annotations

from collections import deque

import numpy as np
from scipy import ndimage
from shapely.geometry import LineString
from skimage.morphology import skeletonize

from ..geom import CLASSES, BevGridSpec, BevRaster, MapElement, dedupe_points

_EIGHT = np.ones((3, 3), dtype=bool)
_NBRS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _adjacency(pixels):
    pset = set(pixels)
    return {p: [q for q in ((p[0] + dr, p[1] + dc) for dr, dc in _NBRS) if q in pset]
            for p in pixels}


def _bfs(adj, start):
    dist = {start: 0}
    parent = {start: None}
    dq = deque([start])
    while dq:
        u = dq.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                parent[v] = u
                dq.append(v)
    return dist, parent


def _farthest(dist):
    return max(dist, key=lambda p: (dist[p], (-p[0], -p[1])))


def _chain(parent, end):
    out = []
    while end is not None:
        out.append(end)
        end = parent[end]
    return out[::-1]


def _prune_spurs(adj, max_len: int):
    """Remove short branches that hang off a junction."""
    adj = {p: list(n) for p, n in adj.items()}
    changed = True
    while changed:
        changed = False
        for tip in sorted(p for p, n in adj.items() if len(n) == 1):
            if tip not in adj or len(adj[tip]) != 1:
                continue
            branch, prev, cur = [tip], None, tip
            while True:
                nxt = [q for q in adj[cur] if q != prev]
                if len(nxt) != 1:
                    break
                prev, cur = cur, nxt[0]
                if len(adj[cur]) != 2:
                    break
                branch.append(cur)
            if len(adj[cur]) >= 3 and len(branch) <= max_len:
                for b in branch:
                    for q in adj.pop(b):
                        if q in adj and b in adj[q]:
                            adj[q].remove(b)
                changed = True
    return adj


def trace_skeleton(pixels, max_spur: int = 3):
    """Order skeleton pixels into one path; closed loops return their first pixel twice."""
    pixels = sorted(pixels)
    if len(pixels) < 2:
        return pixels
    adj = _prune_spurs(_adjacency(pixels), max_spur)
    if any(len(n) == 1 for n in adj.values()):
        start = min(p for p, n in adj.items() if len(n) == 1)
        d0, _ = _bfs(adj, start)
        a = _farthest(d0)
        da, par = _bfs(adj, a)
        return _chain(par, _farthest(da))
    return _walk_cycle(adj, min(adj))


def _walk_cycle(adj, root):
    """Follow a loop from ``root``, preferring 4-neighbors so diagonals do not cut corners."""
    path, cur, seen = [root], root, {root}
    while True:
        nxt = sorted((q for q in adj[cur] if q not in seen),
                     key=lambda q: (abs(q[0] - cur[0]) + abs(q[1] - cur[1]), q))
        if not nxt:
            break
        cur = nxt[0]
        seen.add(cur)
        path.append(cur)
    return path + [root] if len(path) > 3 and root in adj[path[-1]] else path


def decode_map(raster: BevRaster, spec: BevGridSpec | None = None, threshold: float = 0.5,
               min_cells: int = 3, simplify_eps: float | None = None,
               classes=CLASSES) -> list[MapElement]:
    """Vectorize per-class channels (the first ``len(classes)`` channels) into elements."""
    spec = spec or raster.spec
    eps = spec.resolution if simplify_eps is None else simplify_eps
    out = []
    for ci, cls in enumerate(classes):
        ch = np.clip(raster.data[..., ci], 0.0, 1.0)
        mask = ch > threshold
        if not mask.any():
            continue
        lab, n = ndimage.label(mask, structure=_EIGHT)
        sizes = np.bincount(lab.ravel(), minlength=n + 1)
        keep = sizes >= min_cells
        keep[0] = False
        mask = keep[lab]
        skel = skeletonize(mask) & mask
        slab = lab * skel
        for comp in range(1, n + 1):
            if not keep[comp]:
                continue
            rr, cc = np.nonzero(slab == comp)
            if len(rr) < 2:
                continue
            path = trace_skeleton(list(zip(rr.tolist(), cc.tolist())))
            if len(path) < 2:
                continue
            idx = np.array(path, dtype=np.float64)
            conf = float(np.mean(ch[idx[:, 0].astype(int), idx[:, 1].astype(int)]))
            xy = np.stack([spec.x_range[0] + (idx[:, 0] + 0.5) * spec.resolution,
                           spec.y_range[0] + (idx[:, 1] + 0.5) * spec.resolution], axis=1)
            if eps > 0:
                xy = np.asarray(LineString(xy).simplify(eps, preserve_topology=False).coords)
            xy = dedupe_points(xy)
            if len(xy) >= 2:
                out.append(MapElement(cls, xy, min(max(conf, 0.0), 1.0)))
    return out
