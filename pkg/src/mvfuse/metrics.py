"""Chamfer-based instance matching and AP/mAP for vectorized map elements."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geom import CLASSES, DEFAULT_SPEC, BevGridSpec, MapElement, clip_to_range, resample_polyline

THRESHOLDS = (0.5, 1.0, 1.5)
N_RESAMPLE = 100
CSV_COLUMNS = ("AP_div", "AP_ped", "AP_bnd", "mAP")


def _as_points(e) -> np.ndarray:
    pts = e.points if isinstance(e, MapElement) else np.asarray(e, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise InvalidInputError("chamfer distance needs polylines with at least 2 points")
    return pts


def _resampled(elements, n: int) -> np.ndarray:
    if not elements:
        return np.zeros((0, n, 2))
    return np.stack([resample_polyline(_as_points(e), n) for e in elements])


def _pairwise(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Chamfer matrix between stacks of resampled polylines (P, n, 2) x (G, n, 2)."""
    if len(pa) == 0 or len(pb) == 0:
        return np.zeros((len(pa), len(pb)))
    d = np.sqrt(((pa[:, None, :, None, :] - pb[None, :, None, :, :]) ** 2).sum(-1))
    return 0.5 * (d.min(axis=3).mean(axis=2) + d.min(axis=2).mean(axis=2))


def chamfer_distance(a, b, n: int = N_RESAMPLE) -> float:
    """Symmetric mean nearest-point distance between two resampled polylines."""
    pa = resample_polyline(_as_points(a), n)
    pb = resample_polyline(_as_points(b), n)
    return float(_pairwise(pa[None], pb[None])[0, 0])


def chamfer_matrix(preds, gts, n: int = N_RESAMPLE) -> np.ndarray:
    return _pairwise(_resampled(preds, n), _resampled(gts, n))


def match_greedy(conf, dist: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Confidence-ordered matching; returns the processing order and per-step TP flags."""
    conf = np.asarray(conf, dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    taken = np.zeros(dist.shape[1], dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    for k, p in enumerate(order):
        if dist.shape[1] == 0:
            break
        d = np.where(taken | (dist[p] >= threshold), np.inf, dist[p])
        g = int(np.argmin(d))
        if np.isfinite(d[g]):
            taken[g] = True
            tp[k] = True
    return order, tp


def ap_from_tp(tp, n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    tp = np.asarray(tp, dtype=bool)
    if n_gt == 0:
        return 1.0 if len(tp) == 0 else 0.0
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def compute_ap(preds, gts, threshold: float, dist: np.ndarray | None = None) -> float:
    """AP of one class at one Chamfer threshold (strict ``<`` match test)."""
    if dist is None:
        dist = chamfer_matrix(preds, gts)
    _, tp = match_greedy([p.confidence for p in preds], dist, threshold)
    return ap_from_tp(tp, len(gts))


@dataclass(frozen=True)
class EvalReport:
    ap: dict
    n_pred: dict
    n_gt: dict
    thresholds: tuple = THRESHOLDS
    ap_class: dict = field(init=False)
    mAP: float = field(init=False)

    def __post_init__(self):
        ac = {c: float(np.mean([self.ap[c][t] for t in self.thresholds])) for c in CLASSES}
        object.__setattr__(self, "ap_class", ac)
        object.__setattr__(self, "mAP", float(np.mean([ac[c] for c in CLASSES])))

    def to_dict(self) -> dict:
        return {"ap": {c: {str(t): self.ap[c][t] for t in self.thresholds} for c in CLASSES},
                "ap_class": dict(self.ap_class), "mAP": self.mAP,
                "n_pred": dict(self.n_pred), "n_gt": dict(self.n_gt)}

    def csv_row(self) -> tuple[float, ...]:
        return tuple(self.ap_class[c] for c in CLASSES) + (self.mAP,)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        buf.write(",".join(f"{v:.6f}" for v in self.csv_row()) + "\n")
        return buf.getvalue()


def evaluate(preds, gts, spec: BevGridSpec = DEFAULT_SPEC, thresholds=THRESHOLDS) -> EvalReport:
    """Clip both sets to the grid extent and score every class and threshold."""
    preds = clip_to_range(preds, spec)
    gts = clip_to_range(gts, spec)
    ap, n_pred, n_gt = {}, {}, {}
    for c in CLASSES:
        pc = [e for e in preds if e.cls == c]
        gc = [e for e in gts if e.cls == c]
        dist = chamfer_matrix(pc, gc)
        ap[c] = {t: compute_ap(pc, gc, t, dist) for t in thresholds}
        n_pred[c], n_gt[c] = len(pc), len(gc)
    return EvalReport(ap, n_pred, n_gt, tuple(thresholds))
