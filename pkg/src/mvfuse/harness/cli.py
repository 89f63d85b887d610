"""Command-line entry point; every command writes its outputs under ``--out``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .. import io as mio
from ..errors import MvfuseError
from ..fusion.decode import decode_map
from ..geom import DEFAULT_SPEC
from ..metrics import evaluate
from ..ovs import labels_csv, make_labels, oracle_select
from ..scene import (Scene, ScenarioConfig, generate_scene, helper_availability_stats,
                     load_scenario_config, observe)
from .experiments import (ExperimentConfig, run_k_sweep, run_noise_robustness,
                          run_policy_comparison, scene_seed)
from .pipeline import FUSION_MODES, POLICIES, PipelineParams, SceneContext, run_pipeline
from .report import emit_report, emit_timing, report_from_dict, report_svg


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _scenario(args) -> ScenarioConfig:
    return load_scenario_config(args.config) if args.config else ScenarioConfig()


def _params(args) -> PipelineParams:
    return PipelineParams(fusion=getattr(args, "fusion", "warp"))


def _experiment(args) -> ExperimentConfig:
    return ExperimentConfig(
        scenario=args.config or ScenarioConfig(), n_scenes=args.n_scenes, policy=args.policy,
        K=args.K, k_list=args.k_list, rot_stds=args.rot_stds, trans_stds=args.trans_stds,
        trials=args.trials, seed=args.seed, out_dir=args.out, workers=args.workers,
        params=_params(args))


def _scene(args) -> tuple[Scene, int]:
    """Scene from ``--scene`` JSON, else generated from ``--seed`` / ``--index``."""
    if args.scene:
        return Scene.from_dict(mio.read_json(args.scene)), int(args.seed)
    s = scene_seed(args.seed, args.index)
    return generate_scene(_scenario(args), s), s


def _strip_timing(trace: dict) -> dict:
    return {k: v for k, v in trace.items() if k != "timings"}


# -- commands ------------------------------------------------------------------

def cmd_generate(args, out: Path):
    cfg = _scenario(args)
    manifest = []
    for i in range(args.n_scenes):
        s = scene_seed(args.seed, i)
        p = mio.write_json(out / "scenes" / f"scene_{i:03d}.json", generate_scene(cfg, s).to_dict())
        manifest.append({"index": i, "seed": s, "path": str(p.relative_to(out))})
    mio.write_json(out / "generate.json", {"scenario": cfg.to_dict(), "scenes": manifest})


def cmd_observe(args, out: Path):
    scene, _ = _scene(args)
    vid, pose = scene.ego_frame()
    if args.vehicle:
        k = scene.session_index(args.vehicle)
        if k is None:
            raise MvfuseError(f"unknown vehicle {args.vehicle!r}")
        frame = int(args.vehicle.split(":")[1]) if ":" in args.vehicle else 0
        vid, pose = args.vehicle, scene.trajectories[k].frames[frame]
    obs = observe(scene, pose, PipelineParams().sensor, None, vid, DEFAULT_SPEC)
    mio.write_json(out / "observation.json", obs.to_dict())
    mio.save_raster(out / "observation.bevr", obs.raster)


def cmd_select(args, out: Path):
    scene, s = _scene(args)
    ctx = SceneContext(scene, _params(args), seed=s)
    trace: dict = {"policy": args.policy, "K": args.K}
    sel = ctx.select(args.policy, args.K, 0, (0.0, 0.0), trace)
    trace["selected"] = list(sel.ids)
    trace["shortfall"] = sel.shortfall
    trace["candidates"] = list(ctx.candidates.ids)
    mio.write_json(out / "selection.json", trace)
    (out / "labels.csv").write_text(labels_csv(make_labels(sel.ids, ctx.candidates)))
    if args.policy == "oracle":
        res = oracle_select(ctx.candidates, args.K, ctx.subset_map, ctx.params.oracle_budget)
        (out / "oracle_table.csv").write_text(res.to_csv())


def cmd_fuse(args, out: Path):
    scene, s = _scene(args)
    ctx = SceneContext(scene, _params(args), seed=s)
    noise = (args.rot_std, args.trans_std)
    rep, trace = run_pipeline(scene, policy=args.policy, K=args.K, noise=noise,
                              params=ctx.params, seed=s, context=ctx)
    B_f = ctx.fuse(tuple(sorted(trace["selected"])), noise)
    mio.save_raster(out / "fused.bevr", B_f)
    mio.save_elements(out / "predictions.json",
                      decode_map(B_f, ctx.params.spec, ctx.params.decode_threshold))
    mio.save_elements(out / "ground_truth.json", ctx.gt)
    body = _strip_timing(trace)
    mio.write_json(out / "fuse.json", {"trace": body, "report": rep.to_dict()})
    (out / "eval.csv").write_text(rep.to_csv())
    if args.timing:
        mio.write_json(out / "fuse_timing.json", trace["timings"])


def cmd_eval(args, out: Path):
    rep = evaluate(mio.load_elements(args.pred), mio.load_elements(args.gt), DEFAULT_SPEC)
    mio.write_json(out / "eval.json", rep.to_dict())
    (out / "eval.csv").write_text(rep.to_csv())


def _emit(report, args, out: Path):
    emit_report(report, out)
    if args.timing:
        emit_timing(report, out)


def cmd_compare(args, out: Path):
    _emit(run_policy_comparison(_experiment(args)), args, out)


def cmd_sweep_k(args, out: Path):
    _emit(run_k_sweep(_experiment(args), args.k_list, args.sweep_policy), args, out)


def cmd_noise(args, out: Path):
    _emit(run_noise_robustness(_experiment(args)), args, out)


def cmd_stats(args, out: Path):
    cfg = _scenario(args)
    st = helper_availability_stats(generate_scene(cfg, scene_seed(args.seed, i))
                                   for i in range(args.n_scenes))
    mio.write_json(out / "stats.json", st.to_dict())
    lines = ["bin_lo,bin_hi," + ",".join(f"k>={k}" for k in st.ks)]
    for (lo, hi), row in zip(st.bins, st.counts):
        lines.append(f"{lo:g},{hi:g}," + ",".join(str(c) for c in row))
    (out / "stats.csv").write_text("\n".join(lines) + "\n")


def cmd_plot(args, out: Path):
    rep = report_from_dict(mio.read_json(args.report))
    (out / f"{Path(args.report).stem}.svg").write_text(report_svg(rep))


# -- parser --------------------------------------------------------------------

def _common(p, scene_input=False):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="scenario config file (key = value)")
    p.add_argument("--seed", type=int, default=0)
    if scene_input:
        p.add_argument("--scene", default=None, help="scene JSON written by 'generate'")
        p.add_argument("--index", type=int, default=0, help="scene index when generating")


def _experiment_flags(p):
    p.add_argument("--n-scenes", type=int, default=100)
    p.add_argument("--policy", choices=POLICIES, default="greedy")
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--k-list", type=_ints, default=(0, 1, 2, 3, 4, 5))
    p.add_argument("--rot-stds", type=_floats, default=(0.0,))
    p.add_argument("--trans-stds", type=_floats, default=(0.0, 0.1, 0.5, 1.0))
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--fusion", choices=FUSION_MODES, default="warp")
    p.add_argument("--timing", action="store_true", help="also write wall-time JSON")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvfuse", description="select-then-fuse map benchmark")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write seeded synthetic scenes")
    _common(p)
    p.add_argument("--n-scenes", type=int, default=100)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("observe", help="observe one vehicle view")
    _common(p, True)
    p.add_argument("--vehicle", default=None, help="trajectory id or view id 'v03:017'")
    p.set_defaults(fn=cmd_observe)

    for name, fn, hlp in (("select", cmd_select, "select helpers for the ego frame"),
                          ("fuse", cmd_fuse, "select, fuse, decode and score one ego frame")):
        p = sub.add_parser(name, help=hlp)
        _common(p, True)
        p.add_argument("--policy", choices=POLICIES, default="greedy")
        p.add_argument("--K", type=int, default=2)
        p.add_argument("--fusion", choices=FUSION_MODES, default="warp")
        p.add_argument("--rot-std", type=float, default=0.0)
        p.add_argument("--trans-std", type=float, default=0.0)
        p.add_argument("--timing", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="score predicted elements against ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare-policies", help="policy comparison at fixed K")
    _common(p)
    _experiment_flags(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sweep-k", help="helper-budget sweep")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--sweep-policy", choices=POLICIES, default="oracle")
    p.set_defaults(fn=cmd_sweep_k)

    p = sub.add_parser("noise-grid", help="pose-noise robustness grid")
    _common(p)
    _experiment_flags(p)
    p.set_defaults(fn=cmd_noise)

    p = sub.add_parser("stats", help="helper availability statistics")
    _common(p)
    p.add_argument("--n-scenes", type=int, default=100)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("plot", help="render a report JSON as SVG")
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        args.fn(args, out)
    except MvfuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
