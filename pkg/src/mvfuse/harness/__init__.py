"""Pipeline runner, benchmark experiments, reports and CLI."""
from .experiments import (ExperimentConfig, SweepReport, run_k_sweep, run_noise_robustness,
                          run_policy_comparison)
from .pipeline import PipelineParams, SceneContext, ego_only_report, run_pipeline
from .report import emit_report

__all__ = ["ExperimentConfig", "SweepReport", "run_k_sweep", "run_noise_robustness",
           "run_policy_comparison", "PipelineParams", "SceneContext", "ego_only_report",
           "run_pipeline", "emit_report"]
