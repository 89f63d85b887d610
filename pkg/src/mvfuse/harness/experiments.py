"""Benchmark experiments: policy comparison, helper-budget sweep, pose-noise grid."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidConfigError
from ..geom import CLASSES
from ..scene import ScenarioConfig, generate_scene, load_scenario_config
from .pipeline import POLICIES, PipelineParams, SceneContext

VARIANTS = ("warp", "fitted")
_SHORT = {"divider": "AP_div", "ped_crossing": "AP_ped", "boundary": "AP_bnd"}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Benchmark definition; ``scenario`` may be a config object or a path to one."""

    scenario: ScenarioConfig | str | Path = field(default_factory=ScenarioConfig)
    n_scenes: int = 100
    policy: str = "greedy"
    K: int = 2
    k_list: tuple = (0, 1, 2, 3, 4, 5)
    rot_stds: tuple = (0.0,)
    trans_stds: tuple = (0.0, 0.1, 0.5, 1.0)
    trials: int = 10
    seed: int = 0
    out_dir: str | None = None
    workers: int = 1
    params: PipelineParams = field(default_factory=PipelineParams)

    def __post_init__(self):
        if isinstance(self.scenario, (str, Path)):
            if not Path(self.scenario).exists():
                raise InvalidConfigError(f"scenario config {self.scenario} does not exist")
            object.__setattr__(self, "scenario", load_scenario_config(self.scenario))
        if self.K < 0 or any(k < 0 for k in self.k_list):
            raise InvalidConfigError("K must be non-negative")
        if self.trials < 1:
            raise InvalidConfigError("trials must be at least 1")
        if self.n_scenes < 0 or self.workers < 1:
            raise InvalidConfigError("n_scenes must be >= 0 and workers >= 1")
        if self.policy not in POLICIES:
            raise InvalidConfigError(f"unknown policy {self.policy!r}")
        if any(s < 0 for s in tuple(self.rot_stds) + tuple(self.trans_stds)):
            raise InvalidConfigError("noise levels must be non-negative")

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "n_scenes": self.n_scenes,
                "policy": self.policy, "K": self.K, "k_list": list(self.k_list),
                "rot_stds": list(self.rot_stds), "trans_stds": list(self.trans_stds),
                "trials": self.trials, "seed": self.seed}


@dataclass
class SweepReport:
    """One row per configuration cell; ``per_scene`` keeps the raw mAP samples."""

    kind: str
    key_columns: tuple
    rows: list
    per_scene: dict
    wall_time: dict
    config: dict

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"kind": self.kind, "key_columns": list(self.key_columns), "rows": self.rows,
             "per_scene": self.per_scene, "config": self.config}
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def row(self, **keys) -> dict:
        for r in self.rows:
            if all(r.get(k) == v for k, v in keys.items()):
                return r
        raise KeyError(keys)


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def make_context(cfg: ExperimentConfig, index: int) -> SceneContext:
    s = scene_seed(cfg.seed, index)
    return SceneContext(generate_scene(cfg.scenario, s), cfg.params, seed=s)


class _Mean:
    """Mean of several EvalReports exposed with the same attributes."""

    def __init__(self, reports):
        self.mAP = float(np.mean([r.mAP for r in reports]))
        self.ap_class = {c: float(np.mean([r.ap_class[c] for r in reports])) for c in CLASSES}


def _map_scenes(cfg: ExperimentConfig, fn, extra):
    args = [(cfg, i, extra) for i in range(cfg.n_scenes)]
    if cfg.workers > 1 and cfg.n_scenes > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(fn, args))
    return [fn(a) for a in args]


def _timed(fn):
    t0 = time.perf_counter()
    rep = fn()
    return rep.mAP, dict(rep.ap_class), time.perf_counter() - t0


def _rows(results, labels, key_fn):
    rows, per_scene, wall = [], {}, {}
    for lab in labels:
        cells = [r[lab] for r in results]
        maps = [c[0] for c in cells]
        row = dict(key_fn(lab))
        row["mean_mAP"] = float(np.mean(maps)) if maps else 0.0
        row["std_mAP"] = float(np.std(maps)) if maps else 0.0
        for c in CLASSES:
            row[_SHORT[c]] = float(np.mean([x[1][c] for x in cells])) if maps else 0.0
        row["n_scenes"] = len(maps)
        rows.append(row)
        name = lab if isinstance(lab, str) else ":".join(str(v) for v in lab)
        per_scene[name] = [float(m) for m in maps]
        wall[name] = float(sum(c[2] for c in cells))
    return rows, per_scene, wall


def _policy_task(arg):
    cfg, i, pols = arg
    ctx = make_context(cfg, i)
    out = {}
    for pol in pols:
        if pol == "random":
            out[pol] = _timed(lambda: _Mean([ctx.evaluate_subset(ctx.select("random", cfg.K, t).ids)
                                             for t in range(cfg.trials)]))
        elif pol == "ego_only":
            out[pol] = _timed(lambda: ctx.evaluate_subset(()))
        else:
            out[pol] = _timed(lambda: ctx.evaluate_subset(ctx.select(pol, cfg.K).ids))
    return out


def run_policy_comparison(cfg: ExperimentConfig,
                          policies=("random", "closest", "greedy", "oracle"),
                          include_ego: bool = True) -> SweepReport:
    """One row per selection policy at fixed ``K``; random averages ``trials`` draws."""
    for p in policies:
        if p not in POLICIES:
            raise InvalidConfigError(f"unknown policy {p!r}")
    pols = (("ego_only",) if include_ego else ()) + tuple(policies)
    results = _map_scenes(cfg, _policy_task, pols)
    rows, per_scene, wall = _rows(
        results, pols, lambda p: {"policy": p, "K": 0 if p == "ego_only" else cfg.K})
    return SweepReport("policy_comparison", ("policy", "K"), rows, per_scene, wall,
                       cfg.to_dict())


def _k_task(arg):
    cfg, i, (ks, policy) = arg
    ctx = make_context(cfg, i)
    return {str(k): _timed(lambda: ctx.evaluate_subset(ctx.select(policy, k).ids)) for k in ks}


def run_k_sweep(cfg: ExperimentConfig, K_list=None, policy: str = "oracle") -> SweepReport:
    """One row per helper budget ``K`` under ``policy`` (oracle by default)."""
    ks = tuple(int(k) for k in (cfg.k_list if K_list is None else K_list))
    if any(k < 0 for k in ks) or policy not in POLICIES:
        raise InvalidConfigError("K values must be non-negative and the policy known")
    results = _map_scenes(cfg, _k_task, (ks, policy))
    rows, per_scene, wall = _rows(results, [str(k) for k in ks],
                                  lambda k: {"policy": policy, "K": int(k)})
    return SweepReport("k_sweep", ("policy", "K"), rows, per_scene, wall,
                       dict(cfg.to_dict(), k_list=list(ks), sweep_policy=policy))


def noise_cells(rot_stds, trans_stds) -> list:
    """(axis, rot_std, trans_std) cells; each axis varies one noise component."""
    cells = [("translation", 0.0, float(t)) for t in trans_stds]
    cells += [("rotation", float(r), 0.0) for r in rot_stds if r > 0]
    return cells


def _noise_label(axis, rot, trans, variant):
    return (axis, trans if axis == "translation" else rot, variant)


def _noise_task(arg):
    cfg, i, cells = arg
    ctx = make_context(cfg, i)
    ids = ctx.select(cfg.policy, cfg.K).ids
    out = {}
    for axis, rot, trans in cells:
        for variant in VARIANTS:
            out[_noise_label(axis, rot, trans, variant)] = _timed(
                lambda: ctx.evaluate_subset(ids, (rot, trans), variant))
    return out


def run_noise_robustness(cfg: ExperimentConfig, rot_stds=None, trans_stds=None) -> SweepReport:
    """Warp-only vs fitted-alignment fusion under perturbed poses.

    Translation levels run with zero rotation noise and rotation levels with
    zero translation noise; helpers are chosen noise-free by ``cfg.policy``.
    ``retention`` is a row's mAP over its variant's zero-noise mAP.
    """
    rot = tuple(cfg.rot_stds if rot_stds is None else rot_stds)
    trans = tuple(cfg.trans_stds if trans_stds is None else trans_stds)
    if any(s < 0 for s in rot + trans):
        raise InvalidConfigError("noise levels must be non-negative")
    cells = noise_cells(rot, trans)
    results = _map_scenes(cfg, _noise_task, cells)
    labels = [_noise_label(a, r, t, v) for a, r, t in cells for v in VARIANTS]
    rows, per_scene, wall = _rows(
        results, labels, lambda lab: {"axis": lab[0], "level": lab[1], "variant": lab[2]})
    base = {r["variant"]: r["mean_mAP"] for r in rows if r["level"] == 0.0}
    for r in rows:
        b = base.get(r["variant"])
        r["retention"] = r["mean_mAP"] / b if b else None
    return SweepReport("noise_robustness", ("axis", "level", "variant"), rows, per_scene, wall,
                       dict(cfg.to_dict(), rot_stds=list(rot), trans_stds=list(trans)))
