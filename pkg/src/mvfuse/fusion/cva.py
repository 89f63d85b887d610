"""Deformable cross-view alignment: adaptive offsets and weights sampling a value raster."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameterError
from ..geom import BevRaster, bilinear_sample
from ..io import load_arrays, save_arrays

PARAM_NAMES = ("offset_w", "offset_b", "weight_w", "weight_b", "value_w")


@dataclass(frozen=True, eq=False)
class CvaParams:
    """Affine offset/weight heads on ``[Q ∥ V]`` plus a value projection.

    Offset ``i`` occupies rows ``2i`` (row shift) and ``2i + 1`` (column
    shift) of ``offset_w``/``offset_b``; shifts are in cell units.
    """

    offset_w: np.ndarray
    offset_b: np.ndarray
    weight_w: np.ndarray
    weight_b: np.ndarray
    value_w: np.ndarray

    def __post_init__(self):
        arrs = {k: np.array(getattr(self, k), dtype=np.float64) for k in PARAM_NAMES}
        n = arrs["weight_b"].shape[0] if arrs["weight_b"].ndim == 1 else 0
        c = arrs["value_w"].shape[0] if arrs["value_w"].ndim == 2 else 0
        expect = {"offset_w": (2 * n, 2 * c), "offset_b": (2 * n,), "weight_w": (n, 2 * c),
                  "weight_b": (n,), "value_w": (c, c)}
        if n < 1 or c < 1 or any(arrs[k].shape != expect[k] for k in PARAM_NAMES):
            raise InvalidParameterError("inconsistent CVA parameter shapes")
        for k in PARAM_NAMES:
            if not np.all(np.isfinite(arrs[k])):
                raise InvalidParameterError(f"non-finite CVA parameter {k}")
            arrs[k].setflags(write=False)
            object.__setattr__(self, k, arrs[k])

    @property
    def n_off(self) -> int:
        return self.weight_b.shape[0]

    @property
    def channels(self) -> int:
        return self.value_w.shape[0]

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def replace(self, **kw) -> "CvaParams":
        a = self.arrays()
        a.update(kw)
        return CvaParams(**a)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_NAMES])

    def from_vector(self, v) -> "CvaParams":
        v = np.asarray(v, dtype=np.float64)
        out, k0 = {}, 0
        for k in PARAM_NAMES:
            a = getattr(self, k)
            out[k] = v[k0:k0 + a.size].reshape(a.shape)
            k0 += a.size
        return CvaParams(**out)


def identity_cva(channels: int, n_off: int = 4, ring: float = 1.0) -> CvaParams:
    """Zero weight head (exact identity) with offset biases on a ring of ``ring`` cells."""
    a = 2 * math.pi * np.arange(n_off) / n_off
    ob = np.round(np.stack([ring * np.cos(a), ring * np.sin(a)], axis=1), 12).ravel()
    return CvaParams(np.zeros((2 * n_off, 2 * channels)), ob, np.zeros((n_off, 2 * channels)),
                     np.zeros(n_off), np.eye(channels))


def random_cva(channels: int, rng: np.random.Generator, n_off: int = 4,
               scale: float = 0.1) -> CvaParams:
    return CvaParams(scale * rng.standard_normal((2 * n_off, 2 * channels)),
                     scale * rng.standard_normal(2 * n_off),
                     scale * rng.standard_normal((n_off, 2 * channels)),
                     scale * rng.standard_normal(n_off),
                     np.eye(channels) + scale * rng.standard_normal((channels, channels)))


def cva_apply(Q: np.ndarray, V: np.ndarray, p: CvaParams, ref=None) -> np.ndarray:
    """Array form of the layer: ``Q + Σ_i W_i · bilinear(V W_vᵀ, ref + O_i)`` (zero padded)."""
    Q = np.asarray(Q, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Q.shape != V.shape or Q.ndim != 3 or Q.shape[2] != p.channels:
        raise InvalidParameterError(
            f"query {Q.shape} / value {V.shape} incompatible with {p.channels}-channel params")
    H, W, _ = Q.shape
    if ref is None:
        rr, cc = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64),
                             indexing="ij")
    else:
        ref = np.asarray(ref, dtype=np.float64)
        if ref.shape != (H, W, 2):
            raise InvalidParameterError("reference points must be (H, W, 2)")
        rr, cc = ref[..., 0], ref[..., 1]
    out = Q.copy()
    if not (p.weight_w.any() or p.weight_b.any()):
        return out
    X = np.concatenate([Q, V], axis=2)
    wts = X @ p.weight_w.T + p.weight_b
    offs = X @ p.offset_w.T + p.offset_b
    vv = V @ p.value_w.T
    for i in range(p.n_off):
        w = wts[..., i]
        if not w.any():
            continue
        s = bilinear_sample(vv, rr + offs[..., 2 * i], cc + offs[..., 2 * i + 1], mode="zero")
        out += w[..., None] * s
    return out


def cva_layer(Q_in: BevRaster, V: BevRaster, params: CvaParams, R=None) -> BevRaster:
    if Q_in.spec != V.spec:
        raise InvalidParameterError("query and value rasters use different grids")
    return Q_in.with_data(cva_apply(Q_in.data, V.data, params, R))


def _layers(params):
    if isinstance(params, CvaParams):
        return params, params
    first, second = params
    return first, second


def align_fuse(B_e: BevRaster, B_v: BevRaster, params) -> BevRaster:
    """Two nested layers, ``F(F(B_e, B_v), B_v)``; ``params`` is one set or a pair."""
    p1, p2 = _layers(params)
    return cva_layer(cva_layer(B_e, B_v, p1), B_v, p2)


def self_enhance(B_e: BevRaster, params) -> BevRaster:
    return align_fuse(B_e, B_e, params)


def fd_gradient(loss, theta: np.ndarray, h: float = 1e-5, mask=None) -> np.ndarray:
    """Central-difference gradient of ``loss`` over the coordinates selected by ``mask``."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros_like(theta)
    idx = np.arange(theta.size) if mask is None else np.flatnonzero(mask)
    for k in idx:
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (loss(theta + e) - loss(theta - e)) / (2 * h)
    return g


def trainable_mask(template: CvaParams, names=None, offsets=None) -> np.ndarray:
    """Boolean mask over the flat parameter vector.

    ``names`` restricts to parameter groups; ``offsets`` (indices) further
    restricts offset/weight rows to the listed sampling offsets.
    """
    parts = []
    for k in PARAM_NAMES:
        a = getattr(template, k)
        on = np.full(a.shape, names is None or k in names)
        if offsets is not None and k != "value_w":
            rows = np.zeros(a.shape[0], dtype=bool)
            for i in offsets:
                if k.startswith("offset"):
                    rows[2 * i:2 * i + 2] = True
                else:
                    rows[i] = True
            on &= rows.reshape((-1,) + (1,) * (a.ndim - 1))
        parts.append(on.ravel())
    return np.concatenate(parts)


def _as_triples(pairs):
    out = []
    for pr in pairs:
        tgt, mis = pr[0], pr[1]
        q = pr[2] if len(pr) > 2 else mis
        if not (tgt.spec == mis.spec == q.spec):
            raise InvalidParameterError("fit pairs must share one grid")
        out.append((tgt.data, mis.data, q.data))
    return out


def fit_cva(pairs, params_init: CvaParams, steps: int = 200, step_size: float = 0.1,
            trainable=None, h: float = 1e-5, return_trace: bool = False, weights=None):
    """Backtracking finite-difference descent on the mean squared alignment error.

    Each pair is ``(B_target, B_misaligned)`` or ``(B_target, B_misaligned,
    B_query)``; the query defaults to the misaligned raster. ``weights``
    optionally gives one (H, W) cell weighting per pair. Accepted steps never
    increase the loss, so the returned trace is non-increasing.
    """
    data = _as_triples(pairs)
    if weights is None:
        wts = [None] * len(data)
    else:
        wts = [np.asarray(w, dtype=np.float64)[..., None] for w in weights]

    def err(t, m, q, w, p):
        d = (cva_apply(q, m, p) - t) ** 2
        return np.mean(d) if w is None else np.mean(w * d)

    def loss(v):
        p = params_init.from_vector(v)
        return float(np.mean([err(t, m, q, w, p) for (t, m, q), w in zip(data, wts)]))

    theta = params_init.to_vector()
    cur = loss(theta)
    trace = [cur]
    eta = float(step_size)
    for _ in range(max(0, int(steps))):
        g = fd_gradient(loss, theta, h, trainable)
        if not np.any(g):
            trace.append(cur)
            continue
        for _ in range(40):
            cand = theta - eta * g
            lc = loss(cand)
            if lc <= cur:
                theta, cur = cand, lc
                eta *= 1.5
                break
            eta *= 0.5
        trace.append(cur)
    out = params_init.from_vector(theta) if steps > 0 else params_init
    return (out, trace) if return_trace else out


def save_cva_params(path, p: CvaParams):
    return save_arrays(path, p.arrays(), {"kind": "cva", "n_off": p.n_off, "channels": p.channels})


def load_cva_params(path) -> CvaParams:
    arrays, _ = load_arrays(path)
    return CvaParams(**{k: arrays[k] for k in PARAM_NAMES})
