"""Helper-view selection: baseline policies, greedy coverage, learned scorer, mAP oracle."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import BudgetExceededError, InvalidParameterError
from .fusion.cva import PARAM_NAMES, CvaParams, cva_apply, fd_gradient, random_cva
from .geom import Pose2
from .io import load_arrays, save_arrays
from .nn import conv2d, relu, softmax
from .uncertainty import CandidateSet, UncertaintyMap, warp_effective

DEFAULT_K = 2
DEFAULT_BUDGET = 500
BCE_EPS = 1e-7


@dataclass(frozen=True)
class Selection:
    ids: tuple[str, ...]
    shortfall: bool = False


@dataclass(frozen=True)
class SelectionScore:
    vehicle_id: str
    s: float

    def __post_init__(self):
        if not math.isfinite(self.s):
            raise InvalidParameterError("selection logits must be finite")


@dataclass(frozen=True)
class SelectionLabel:
    vehicle_id: str
    y: int


def _clip_k(n: int, K: int) -> tuple[int, bool]:
    if K < 0:
        raise InvalidParameterError("K must be non-negative")
    return (n, True) if K > n else (K, False)


def select_random(cs: CandidateSet, K: int, rng: np.random.Generator) -> Selection:
    k, short = _clip_k(len(cs), K)
    pick = np.sort(rng.choice(len(cs), size=k, replace=False)) if k else []
    return Selection(tuple(cs.candidates[i].id for i in pick), short)


def select_closest(cs: CandidateSet, K: int) -> Selection:
    k, short = _clip_k(len(cs), K)
    ranked = sorted(cs.candidates, key=lambda c: (c.pose.distance_to(cs.ego_pose), c.id))
    return Selection(tuple(c.id for c in ranked[:k]), short)


def warped_candidate_maps(cs: CandidateSet) -> dict:
    """Effective candidate uncertainty resampled into the ego frame (unseen cells = 1)."""
    return {c.id: warp_effective(c.umap, c.pose, cs.ego_pose) for c in cs.candidates}


def coverage_gain(u_ego: np.ndarray, u_cand: np.ndarray, covered: np.ndarray) -> float:
    return float(np.sum(np.maximum(0.0, u_ego - u_cand)[~covered]))


def select_greedy_coverage(cs: CandidateSet, K: int, warped: dict | None = None) -> Selection:
    """Greedy marginal reduction of ego uncertainty over not-yet-covered cells."""
    if cs.ego_map is None or any(c.umap is None for c in cs.candidates) and warped is None:
        raise InvalidParameterError("greedy selection needs ego and candidate uncertainty maps")
    k, short = _clip_k(len(cs), K)
    warped = warped if warped is not None else warped_candidate_maps(cs)
    u_e = cs.ego_map.values
    covered = np.zeros(u_e.shape, dtype=bool)
    remaining = sorted(cs.ids)
    chosen = []
    for _ in range(k):
        best, best_gain = None, -1.0
        for cid in remaining:
            g = coverage_gain(u_e, warped[cid], covered)
            if g > best_gain:
                best, best_gain = cid, g
        chosen.append(best)
        remaining.remove(best)
        covered |= warped[best] < u_e
    return Selection(tuple(chosen), short)


def select_topk(scores, K: int) -> Selection:
    k, short = _clip_k(len(scores), K)
    ranked = sorted(scores, key=lambda s: (-s.s, s.vehicle_id))
    return Selection(tuple(s.vehicle_id for s in ranked[:k]), short)


# --- learned scorer ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OvsScorerParams:
    """Stride-2 conv encoder, one CVA layer, sinusoidal pose query, 2-layer MLP."""

    encoder: tuple
    cva: CvaParams
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __post_init__(self):
        enc = tuple((np.asarray(k, dtype=np.float64), np.asarray(b, dtype=np.float64))
                    for k, b in self.encoder)
        if not enc:
            raise InvalidParameterError("encoder needs at least one layer")
        cin = enc[0][0].shape[1]
        for k, b in enc:
            if k.ndim != 4 or k.shape[1] != cin or b.shape != (k.shape[0],):
                raise InvalidParameterError("encoder layer shapes are inconsistent")
            cin = k.shape[0]
        w1 = np.asarray(self.w1, dtype=np.float64)
        b1 = np.asarray(self.b1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64).reshape(-1)
        if self.cva.channels != cin or w1.shape[1] != cin or b1.shape != (w1.shape[0],) \
                or w2.shape != (w1.shape[0],):
            raise InvalidParameterError("scorer head shapes do not match encoder width")
        arrays = [a for kb in enc for a in kb] + [w1, b1, w2, np.array([self.b2])]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidParameterError("non-finite scorer parameters")
        object.__setattr__(self, "encoder", enc)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", float(self.b2))

    @property
    def embed_dim(self) -> int:
        return self.encoder[-1][0].shape[0]

    def mlp_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def with_mlp_vector(self, v) -> "OvsScorerParams":
        v = np.asarray(v, dtype=np.float64)
        h, d = self.w1.shape
        w1 = v[:h * d].reshape(h, d)
        b1 = v[h * d:h * d + h]
        w2 = v[h * d + h:h * d + 2 * h]
        return OvsScorerParams(self.encoder, self.cva, w1, b1, w2, float(v[h * d + 2 * h]))

    def n_params(self) -> int:
        return (sum(k.size + b.size for k, b in self.encoder) + self.cva.to_vector().size
                + self.mlp_vector().size)


def init_scorer_params(rng: np.random.Generator, in_channels: int = 1, channels=(8, 16),
                       hidden: int = 16, n_off: int = 4) -> OvsScorerParams:
    enc, cin = [], in_channels
    for c in channels:
        enc.append((rng.standard_normal((c, cin, 3, 3)) * math.sqrt(2.0 / (9 * cin)),
                    np.zeros(c)))
        cin = c
    d = channels[-1]
    return OvsScorerParams(tuple(enc), random_cva(d, rng, n_off),
                           rng.standard_normal((hidden, d)) * math.sqrt(2.0 / d),
                           np.zeros(hidden), rng.standard_normal(hidden) / math.sqrt(hidden), 0.0)


def position_embedding(rel, dim: int) -> np.ndarray:
    """Fixed sinusoids of ``(Δx/60, Δy/60, Δyaw/π)``; frequencies double every 3 pairs."""
    if isinstance(rel, Pose2):
        rel = rel.as_tuple()
    dx, dy, dyaw = (float(v) for v in rel)
    u = np.array([dx / 60.0, dy / 60.0, dyaw / math.pi])
    k = np.arange(dim)
    f = k // 2
    arg = math.pi * (2.0 ** (f // 3)) * u[f % 3]
    return np.where(k % 2 == 0, np.sin(arg), np.cos(arg))


def _map_array(m) -> np.ndarray:
    a = m.values if isinstance(m, UncertaintyMap) else np.asarray(m, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def encode(u: np.ndarray, params: OvsScorerParams) -> np.ndarray:
    x = u
    for k, b in params.encoder:
        x = relu(conv2d(x, k, b, stride=2, pad=1))
    return x


def scorer_features(U_e, U_v, rel, params: OvsScorerParams) -> np.ndarray:
    """Cross-attention output: pose query attending over the aligned uncertainty features."""
    a, b = _map_array(U_e), _map_array(U_v)
    if a.shape != b.shape:
        raise InvalidParameterError(f"uncertainty maps differ in shape: {a.shape} vs {b.shape}")
    fe, fv = encode(a, params), encode(b, params)
    fused = cva_apply(fe, fv, params.cva)
    X = fused.reshape(-1, fused.shape[2])
    q = position_embedding(rel, params.embed_dim)
    att = softmax(X @ q / math.sqrt(params.embed_dim), axis=0)
    return att @ X


def mlp_logit(z: np.ndarray, params: OvsScorerParams) -> float:
    return float(params.w2 @ relu(params.w1 @ z + params.b1) + params.b2)


def ovs_score_forward(U_e, U_v, rel_pose, params: OvsScorerParams) -> float:
    """Suitability logit of one candidate whose map ``U_v`` is already in the ego frame."""
    return mlp_logit(scorer_features(U_e, U_v, rel_pose, params), params)


def score_candidates(cs: CandidateSet, params: OvsScorerParams, warped: dict | None = None):
    warped = warped if warped is not None else warped_candidate_maps(cs)
    return [SelectionScore(c.id, ovs_score_forward(cs.ego_map, warped[c.id],
                                                   cs.relative(c.id), params))
            for c in cs.candidates]


def save_scorer_params(path, p: OvsScorerParams):
    arrays = {}
    for i, (k, b) in enumerate(p.encoder):
        arrays[f"enc{i}_kernel"], arrays[f"enc{i}_bias"] = k, b
    for name in PARAM_NAMES:
        arrays[f"cva_{name}"] = getattr(p.cva, name)
    arrays.update(w1=p.w1, b1=p.b1, w2=p.w2, b2=np.array([p.b2]))
    return save_arrays(path, arrays, {"kind": "ovs_scorer", "layers": len(p.encoder)})


def load_scorer_params(path) -> OvsScorerParams:
    a, meta = load_arrays(path)
    enc = tuple((a[f"enc{i}_kernel"], a[f"enc{i}_bias"]) for i in range(int(meta["layers"])))
    cva = CvaParams(**{n: a[f"cva_{n}"] for n in PARAM_NAMES})
    return OvsScorerParams(enc, cva, a["w1"], a["b1"], a["w2"], float(a["b2"][0]))


# --- oracle, labels and loss ------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    subset: tuple[str, ...]
    score: float
    table: tuple
    shortfall: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("subset,mAP,selected\n")
        for ids, v in self.table:
            buf.write(f"{';'.join(ids)},{v:.6f},{int(ids == self.subset)}\n")
        return buf.getvalue()


def oracle_select(cs: CandidateSet, K: int, pipeline, budget: int = DEFAULT_BUDGET,
                  executor=None) -> OracleResult:
    """Exhaustively score every K-subset; ties go to the lexicographically smallest ids.

    ``pipeline`` maps a tuple of candidate ids to an mAP (or an object with
    ``.mAP``). An optional ``executor`` (``map``-capable) evaluates subsets
    concurrently; results are reduced in subset order either way.
    """
    k, short = _clip_k(len(cs), K)
    subsets = list(combinations(sorted(cs.ids), k))
    if len(subsets) > budget:
        raise BudgetExceededError(
            f"{len(subsets)} subsets exceed the evaluation budget of {budget}")
    results = list(executor.map(pipeline, subsets) if executor is not None
                   else map(pipeline, subsets))
    scores = [float(getattr(r, "mAP", r)) for r in results]
    best = int(np.argmax(scores))
    return OracleResult(subsets[best], scores[best], tuple(zip(subsets, scores)), short)


def make_labels(subset, cs: CandidateSet) -> list[SelectionLabel]:
    subset = set(subset)
    unknown = subset - set(cs.ids)
    if unknown:
        raise InvalidParameterError(f"subset ids not among candidates: {sorted(unknown)}")
    return [SelectionLabel(c.id, int(c.id in subset)) for c in cs.candidates]


def labels_csv(labels) -> str:
    return "vehicle_id,y\n" + "".join(f"{l.vehicle_id},{l.y}\n" for l in labels)


def bce_terms(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-element BCE; the likelihood of the labelled outcome is floored at ``BCE_EPS``."""
    # log σ(s) = -logaddexp(0, -s); log(1 - σ(s)) = -logaddexp(0, s)
    nll = np.where(y == 1, np.logaddexp(0.0, -s), np.logaddexp(0.0, s))
    return np.minimum(nll, -math.log(BCE_EPS))


def ovs_bce_loss(scores, labels) -> float:
    sd = {s.vehicle_id: s.s for s in scores}
    ld = {l.vehicle_id: l.y for l in labels}
    if set(sd) != set(ld) or len(sd) != len(scores) or len(ld) != len(labels):
        raise InvalidParameterError("scores and labels must cover the same vehicle ids")
    if not sd:
        raise InvalidParameterError("loss needs at least one candidate")
    ids = sorted(sd)
    return float(np.mean(bce_terms(np.array([sd[i] for i in ids]),
                                   np.array([ld[i] for i in ids]))))


def fit_scorer(examples, params: OvsScorerParams, steps: int = 100, step_size: float = 0.5,
               h: float = 1e-5, return_trace: bool = False):
    """Fit the MLP head on ``(U_e, U_v_in_ego_frame, rel_pose, y)`` examples.

    Encoder and alignment weights stay fixed, so the attention features are
    computed once; the head is updated by backtracking finite-difference
    descent on the mean BCE.
    """
    feats = np.stack([scorer_features(ue, uv, rel, params) for ue, uv, rel, _ in examples])
    ys = np.array([int(y) for *_, y in examples])

    def loss(v):
        p = params.with_mlp_vector(v)
        s = relu(feats @ p.w1.T + p.b1) @ p.w2 + p.b2
        return float(np.mean(bce_terms(s, ys)))

    theta = params.mlp_vector()
    cur = loss(theta)
    trace = [cur]
    eta = step_size
    for _ in range(max(0, steps)):
        g = fd_gradient(loss, theta, h)
        for _ in range(40):
            cand = theta - eta * g
            lc = loss(cand)
            if lc <= cur:
                theta, cur = cand, lc
                eta *= 1.5
                break
            eta *= 0.5
        trace.append(cur)
    out = params.with_mlp_vector(theta)
    return (out, trace) if return_trace else out
