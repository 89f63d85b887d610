"""Independent reference implementations shared by unit and acceptance tests."""
import itertools

import numpy as np

from mvfuse.fusion.lss import FrustumTensor
from mvfuse.geom import MapElement
from mvfuse.metrics import ap_from_tp


def seg(x0, y0, x1, y1, cls="divider", conf=1.0):
    return MapElement(cls, [[x0, y0], [x1, y1]], conf)


def exhaustive_ap(conf, dist, thr):
    """Best AP over every injective pred->GT assignment that respects the threshold."""
    P, G = dist.shape
    order = np.argsort(-np.asarray(conf), kind="stable")
    best = ap_from_tp([], G) if P == 0 else 0.0
    for assign in itertools.product(*[[None] + [g for g in range(G) if dist[p, g] < thr]
                                      for p in range(P)]):
        used = [a for a in assign if a is not None]
        if len(used) != len(set(used)):
            continue
        tp = [assign[p] is not None for p in order]
        best = max(best, ap_from_tp(tp, G))
    return best


def metric_fixture(rng, P, G, unambiguous):
    """Parallel GT dividers 4 m apart with offset predictions of random confidence."""
    gts = [seg(0, 4.0 * g, 10, 4.0 * g) for g in range(G)]
    preds = []
    for _ in range(P):
        g = int(rng.integers(G)) if G else 0
        off = float(rng.uniform(0, 1.8))
        preds.append(seg(0, 4.0 * g + off, 10, 4.0 * g + off, conf=float(rng.uniform(0.05, 1))))
    if not unambiguous:
        return preds, gts
    # collapse duplicates so every GT has at most one candidate within 1.5 m
    seen, out = set(), []
    for p in preds:
        g = int(round(p.points[0, 1] / 4.0))
        if g in seen:
            continue
        seen.add(g)
        out.append(p)
    return out, gts


def brute_force_uncertainty(points, u, spec, d):
    vals = np.zeros(spec.shape)
    cov = np.zeros(spec.shape, dtype=bool)
    xs, ys = spec.x_centers(), spec.y_centers()
    for i in range(spec.H):
        for j in range(spec.W):
            hits = [uu for (px, py), uu in zip(points, u)
                    if (xs[i] - px) ** 2 + (ys[j] - py) ** 2 <= d * d]
            if hits:
                cov[i, j] = True
                vals[i, j] = sum(hits) / len(hits)
    return vals, cov


def random_frustum(rng, spec, R, D, C, onehot=False, n_cells=None):
    if onehot:
        feats = np.eye(C)[rng.integers(C, size=(R, D))]
    else:
        feats = rng.normal(size=(R, D, C))
    p = rng.random((R, D)) + 1e-3
    p /= p.sum(axis=1, keepdims=True)
    hi = n_cells or spec.H
    cells = rng.integers(0, hi, size=(R, D, 2))
    return FrustumTensor(feats, p, cells)


def check_hard_non_mixing(f, out, C):
    """Every nonempty cell holds exactly one member vector with the cell's max probability."""
    members = {tuple(v) for v in f.features.reshape(-1, C)}
    conf = out[..., C]
    for i, j in zip(*np.nonzero(conf > 0)):
        if tuple(out[i, j, :C]) not in members:
            return False
        hits = np.all(f.cells == (i, j), axis=-1)
        if conf[i, j] != f.depth_prob[hits].max():
            return False
    hit = np.zeros(out.shape[:2], dtype=bool)
    hit[f.cells[..., 0].ravel(), f.cells[..., 1].ravel()] = True
    return bool(np.all(out[~hit] == 0))
