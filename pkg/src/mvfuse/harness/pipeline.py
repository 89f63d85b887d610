"""Select-then-fuse pipeline over one ego frame, with per-scene caching."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import InvalidParameterError, StageError
from ..fusion.cva import (CvaParams, align_fuse, cva_apply, fit_cva, identity_cva,
                          self_enhance, trainable_mask)
from ..fusion.decode import decode_map
from ..fusion.snf import SnfParams, default_snf_params, snf_combine, snf_scores
from ..geom import (DEFAULT_SPEC, BevGridSpec, BevRaster, Pose2, clip_to_range,
                    inject_pose_noise, transform_element, warp_raster)
from ..metrics import EvalReport, evaluate
from ..ovs import (OvsScorerParams, Selection, init_scorer_params, oracle_select, score_candidates,
                   select_closest, select_greedy_coverage, select_random, select_topk,
                   warped_candidate_maps)
from ..scene import Scene, SensorModel, associate_helpers, observe
from ..uncertainty import partition_candidates, rasterize_uncertainty

POLICIES = ("random", "closest", "greedy", "scorer", "oracle")
FUSION_MODES = ("warp", "cva", "fitted")
N_FEAT = 4
SEM = slice(0, 3)
EGO_STREAM = 1_000_003


@dataclass(frozen=True)
class RegistrationConfig:
    """Test-time offset fit used by the ``fitted`` fusion mode."""

    search_radius: int = 6
    blur_sigma: float = 1.0
    steps: int = 12
    step_size: float = 2.0
    min_gain: float = 0.05
    min_shift: float = 1.0
    covis: float = 0.25
    snap: bool = True


@dataclass(frozen=True, eq=False)
class PipelineParams:
    """Everything that shapes a pipeline run besides the scene itself."""

    spec: BevGridSpec = DEFAULT_SPEC
    sensor: SensorModel = field(default_factory=SensorModel)
    snf: SnfParams = field(default_factory=default_snf_params)
    ego_cva: tuple | None = None
    helper_cva: tuple | None = None
    scorer: OvsScorerParams | None = None
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    uncertainty_radius: float = 1.5
    n_h: int = 2
    n_w: int = 4
    decode_threshold: float = 0.5
    fusion: str = "warp"
    oracle_budget: int = 500
    noise_on_ego: bool = True

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise InvalidParameterError(f"unknown fusion mode {self.fusion!r}")

    def scorer_params(self) -> OvsScorerParams:
        if self.scorer is not None:
            return self.scorer
        return init_scorer_params(np.random.default_rng(0))


def _identity_pair():
    p = identity_cva(N_FEAT)
    return (p, p)


def _stage(name, timings, fn, *a, **kw):
    t0 = time.perf_counter()
    try:
        return fn(*a, **kw)
    except StageError:
        raise
    except Exception as exc:  # annotate and re-raise with the stage name
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def registration_params(shift, n_off: int = 4) -> CvaParams:
    """Offset 0 samples at ``shift`` with weight +1, offset 1 at the cell itself with -1.

    Applied with the helper raster as both query and value this layer returns
    the helper resampled at ``shift``.
    """
    p = identity_cva(N_FEAT, n_off)
    ob = np.array(p.offset_b)
    ob[0:2] = shift
    ob[2:4] = 0.0
    wb = np.zeros(n_off)
    wb[0], wb[1] = 1.0, -1.0
    return p.replace(offset_b=ob, weight_b=wb)


def _shift(a: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """``out[i, j] = a[i + dr, j + dc]`` with zero fill."""
    H, W = a.shape[:2]
    out = np.zeros_like(a)
    rs, re = max(0, -dr), min(H, H - dr)
    cs, ce = max(0, -dc), min(W, W - dc)
    if rs < re and cs < ce:
        out[rs:re, cs:ce] = a[rs + dr:re + dr, cs + dc:ce + dc]
    return out


def register_helper(B_e: BevRaster, B_v: BevRaster, cfg: RegistrationConfig) -> tuple:
    """Estimate the constant cell offset aligning helper semantics to the ego's.

    The alignment error is measured on cells both views see (visibility above
    ``covis``). An integer search seeds a finite-difference refinement of the
    offset bias, whose result is rounded to whole cells when ``snap`` is set.
    A component whose removal costs less than ``min_gain`` is zeroed, and the
    shift is kept only when it lowers the error by ``min_gain`` and moves at
    least ``min_shift`` cells. Returns ``(layer params, shift, relative gain)``.
    """
    sig = (cfg.blur_sigma, cfg.blur_sigma, 0)
    tgt = np.zeros_like(B_e.data)
    mis = np.zeros_like(B_v.data)
    tgt[..., SEM] = gaussian_filter(B_e.data[..., SEM], sig)
    mis[..., SEM] = gaussian_filter(B_v.data[..., SEM], sig)
    w = ((B_e.data[..., 3] > cfg.covis) & (B_v.data[..., 3] > cfg.covis)).astype(float)
    if not w.any():
        return identity_cva(N_FEAT), (0.0, 0.0), 0.0
    w3 = w[..., None]
    base = float(np.mean(w3 * (mis - tgt) ** 2))
    best, best_err = (0, 0), base
    r = cfg.search_radius
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            e = float(np.mean(w3 * (_shift(mis, dr, dc) - tgt) ** 2))
            if e < best_err - 1e-15:
                best, best_err = (dr, dc), e
    fitted = registration_params(np.array(best, dtype=float))
    if cfg.steps > 0:
        T, M = B_e.with_data(tgt, ()), B_v.with_data(mis, ())
        mask = trainable_mask(fitted, names=("offset_b",), offsets=(0,))
        fitted = fit_cva([(T, M)], fitted, cfg.steps, cfg.step_size, trainable=mask,
                         weights=[w])

    def err(shift):
        p = registration_params(shift)
        return float(np.mean(w3 * (cva_apply(mis, mis, p) - tgt) ** 2))

    shift = np.array(fitted.offset_b[0:2], dtype=float)
    if cfg.snap:  # whole-cell moves keep thin lines sharp; bilinear sub-cell shifts blur them
        shift = np.round(shift)
    e = err(shift)
    # elements running along one axis leave the error flat along it; drop such components
    for a in (0, 1):
        if shift[a] != 0.0:
            trial = shift.copy()
            trial[a] = 0.0
            e_a = err(trial)
            if base <= 0 or (e_a - e) / base < cfg.min_gain:
                shift, e = trial, e_a
    fitted = registration_params(shift)
    gain = (base - e) / base if base > 0 else 0.0
    if gain < cfg.min_gain or np.hypot(*shift) < cfg.min_shift:
        return identity_cva(N_FEAT), (0.0, 0.0), gain
    return fitted, tuple(float(v) for v in shift), gain


class SceneContext:
    """Per-ego-frame cache: observations, candidates, warps, noise scores and evaluations."""

    def __init__(self, scene: Scene, params: PipelineParams = PipelineParams(),
                 ego_frame: tuple[str, Pose2] | None = None, seed: int = 0):
        self.scene = scene
        self.params = params
        self.seed = int(seed)
        self.timings: dict = {}
        spec, sm = params.spec, params.sensor
        self.ego_id, self.ego_pose = ego_frame or scene.ego_frame()
        self.gt = _stage("gt", self.timings, lambda: clip_to_range(
            [transform_element(g, Pose2(0.0, 0.0, 0.0), self.ego_pose)
             for g in scene.gt_elements], spec))
        self.ego_obs = _stage("observe", self.timings, observe, scene, self.ego_pose, sm,
                              None, self.ego_id, spec)
        self.association = _stage("associate", self.timings, associate_helpers,
                                  scene.trajectories, (self.ego_id, self.ego_pose))
        cs = _stage("partition", self.timings, partition_candidates,
                    (self.ego_id, self.ego_pose),
                    [(f.view_id, f.pose) for f in self.association], spec,
                    params.n_h, params.n_w)
        self.obs = {}
        for c in cs.candidates:
            self.obs[c.id] = _stage("observe", self.timings, observe, scene, c.pose, sm,
                                    None, c.id, spec)
        maps = {cid: _stage("uncertainty", self.timings, rasterize_uncertainty,
                            *o.uncertainty_points(), spec, params.uncertainty_radius)
                for cid, o in self.obs.items()}
        ego_map = _stage("uncertainty", self.timings, rasterize_uncertainty,
                         *self.ego_obs.uncertainty_points(), spec, params.uncertainty_radius)
        self.candidates = cs.with_maps(ego_map, maps)
        self._warped_u = None
        self._warped = {}
        self._scores = {}
        self._memo = {}
        self._ego_feature = None

    # -- cached pieces -------------------------------------------------------
    def warped_uncertainty(self) -> dict:
        if self._warped_u is None:
            self._warped_u = _stage("select", self.timings, warped_candidate_maps,
                                    self.candidates)
        return self._warped_u

    def ego_feature(self) -> BevRaster:
        if self._ego_feature is None:
            B_e = self.ego_obs.raster
            if self.params.ego_cva is not None:
                B_e = _stage("cva", self.timings, self_enhance, B_e, self.params.ego_cva)
            self._ego_feature = B_e
        return self._ego_feature

    def helper_raster(self, cid: str, pose: Pose2, ego_pose: Pose2 | None = None) -> BevRaster:
        """Helper observation warped into the ego frame (visibility zeroed where invalid).

        ``pose``/``ego_pose`` are the (possibly perturbed) poses used for the
        warp; the raster content always comes from the true helper view.
        """
        w = warp_raster(self.obs[cid].raster, pose, ego_pose or self.ego_pose).data
        return BevRaster(self.params.spec, w[..., :N_FEAT], self.obs[cid].raster.channel_names)

    def noisy_pose(self, cid: str, rot_std: float, trans_std: float) -> Pose2:
        """Perturbed helper pose. Draws depend only on (seed, candidate slot), so
        every noise level scales the same standard-normal sample."""
        idx = self.candidates.ids.index(cid)
        rng = np.random.default_rng([self.seed, idx])
        return inject_pose_noise(self.candidates.get(cid).pose, rot_std, trans_std, rng)

    def noisy_ego_pose(self, rot_std: float, trans_std: float) -> Pose2:
        if not self.params.noise_on_ego:
            return self.ego_pose
        rng = np.random.default_rng([self.seed, EGO_STREAM])
        return inject_pose_noise(self.ego_pose, rot_std, trans_std, rng)

    def scores_for(self, key, feature: BevRaster) -> np.ndarray:
        if key not in self._scores:
            self._scores[key] = snf_scores(feature, feature.with_data(feature.data[..., SEM], ()),
                                           self.params.snf)
        return self._scores[key]

    # -- fusion --------------------------------------------------------------
    def fused_helper(self, cid: str, noise=(0.0, 0.0), mode: str | None = None,
                     trace: dict | None = None) -> BevRaster:
        mode = mode or self.params.fusion
        rot, trans = noise
        key = (cid, float(rot), float(trans), mode)
        if key in self._warped:
            return self._warped[key]
        pose = self.noisy_pose(cid, rot, trans)
        B_v = _stage("warp", self.timings, self.helper_raster, cid, pose,
                     self.noisy_ego_pose(rot, trans))
        if mode == "cva":
            layers = self.params.helper_cva or _identity_pair()
            B_e = self.ego_feature()
            out = _stage("cva", self.timings, align_fuse, B_e, B_v, layers)
            B_v = B_v.with_data(B_v.data + (out.data - B_e.data))
        elif mode == "fitted":
            layer, shift, gain = _stage("cva", self.timings, register_helper,
                                        self.ego_feature(), B_v, self.params.registration)
            if shift != (0.0, 0.0):
                B_v = B_v.with_data(cva_apply(B_v.data, B_v.data, layer))
            if trace is not None:
                trace.setdefault("registration", {})[cid] = {"shift": list(shift),
                                                            "gain": gain}
        self._warped[key] = B_v
        return B_v

    def fuse(self, ids, noise=(0.0, 0.0), mode: str | None = None,
             trace: dict | None = None) -> BevRaster:
        B_e = self.ego_feature()
        feats = [B_e.data]
        scores = [self.scores_for("ego", B_e)]
        for cid in ids:
            B_v = self.fused_helper(cid, noise, mode, trace)
            feats.append(B_v.data)
            key = (cid, float(noise[0]), float(noise[1]), mode or self.params.fusion)
            scores.append(self.scores_for(key, B_v))
        B, S = _stage("snf", self.timings, snf_combine, feats, scores)
        if trace is not None:
            trace["snf_weight_mean"] = [float(s.mean()) for s in S]
        return B_e.with_data(B)

    def evaluate_subset(self, ids, noise=(0.0, 0.0), mode: str | None = None,
                        trace: dict | None = None) -> EvalReport:
        mode = mode or self.params.fusion
        key = (tuple(sorted(ids)), float(noise[0]), float(noise[1]), mode)
        if key in self._memo and trace is None:
            return self._memo[key]
        B_f = self.fuse(tuple(sorted(ids)), noise, mode, trace)
        preds = _stage("decode", self.timings, decode_map, B_f, self.params.spec,
                       self.params.decode_threshold)
        rep = _stage("evaluate", self.timings, evaluate, preds, self.gt, self.params.spec)
        if trace is not None:
            trace["n_predictions"] = len(preds)
        self._memo[key] = rep
        return rep

    def subset_map(self, ids) -> float:
        return self.evaluate_subset(ids).mAP

    # -- selection -----------------------------------------------------------
    def select(self, policy: str, K: int, trial: int = 0, noise=(0.0, 0.0), trace=None):
        cs = self.candidates
        if policy == "random":
            rng = np.random.default_rng([self.seed, 7919, trial])
            return select_random(cs, K, rng)
        if policy == "closest":
            return select_closest(cs, K)
        if policy == "greedy":
            return select_greedy_coverage(cs, K, self.warped_uncertainty())
        if policy == "scorer":
            scores = score_candidates(cs, self.params.scorer_params(), self.warped_uncertainty())
            if trace is not None:
                trace["scores"] = {s.vehicle_id: s.s for s in scores}
            return select_topk(scores, K)
        if policy == "oracle":
            res = oracle_select(cs, K, lambda ids: self.evaluate_subset(ids, noise).mAP,
                                self.params.oracle_budget)
            if trace is not None:
                trace["oracle_table"] = [[list(s), v] for s, v in res.table]
            return Selection(res.subset, res.shortfall)
        raise InvalidParameterError(f"unknown policy {policy!r}")


def run_pipeline(scene: Scene, ego_frame=None, policy: str = "greedy", K: int = 2,
                 noise=(0.0, 0.0), params: PipelineParams = PipelineParams(), seed: int = 0,
                 context: SceneContext | None = None):
    """Observe, select, perturb, warp, align, gate, decode and score one ego frame.

    Returns ``(EvalReport, trace)``; the trace lists the candidate set, the
    chosen subset, optional scores and per-stage wall times.
    """
    ctx = context or SceneContext(scene, params, ego_frame, seed)
    trace: dict = {"policy": policy, "K": K, "noise": list(noise)}
    trace["candidates"] = [{"id": c.id, "region": c.region_index,
                            "distance": c.pose.distance_to(ctx.ego_pose)}
                           for c in ctx.candidates.candidates]
    sel = _stage("select", ctx.timings, ctx.select, policy, K, 0, (0.0, 0.0), trace)
    trace["selected"] = list(sel.ids)
    trace["shortfall"] = sel.shortfall
    rep = ctx.evaluate_subset(sel.ids, noise, trace=trace)
    trace["timings"] = dict(ctx.timings)
    return rep, trace


def ego_only_report(scene: Scene, params: PipelineParams = PipelineParams(),
                    ego_frame=None) -> EvalReport:
    """Direct observe → decode → evaluate path without any selection or fusion."""
    spec = params.spec
    eid, pose = ego_frame or scene.ego_frame()
    obs = observe(scene, pose, params.sensor, None, eid, spec)
    gt = clip_to_range([transform_element(g, Pose2(0.0, 0.0, 0.0), pose)
                        for g in scene.gt_elements], spec)
    return evaluate(decode_map(obs.raster, spec, params.decode_threshold), gt, spec)
