"""Select-then-fuse multi-vehicle vectorized map toolkit on a synthetic benchmark."""
from .errors import (BudgetExceededError, InvalidConfigError, InvalidInputError,
                     InvalidParameterError, MvfuseError, StageError)
from .geom import (CLASSES, DEFAULT_SPEC, BevGridSpec, BevRaster, MapElement, Pose2,
                   bilinear_sample, clip_to_range, compose_pose, inject_pose_noise,
                   inverse_pose, relative_pose, resample_polyline, transform_element,
                   warp_raster)
from .metrics import EvalReport, chamfer_distance, compute_ap, evaluate, match_greedy
from .scene import (Observation, ScenarioConfig, Scene, SensorModel, associate_helpers,
                    generate_scene, helper_availability_stats, observe)
from .uncertainty import (Candidate, CandidateSet, UncertaintyMap, partition_candidates,
                          rasterize_uncertainty)

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError", "InvalidConfigError", "InvalidInputError", "InvalidParameterError",
    "MvfuseError", "StageError",
    "CLASSES", "DEFAULT_SPEC", "BevGridSpec", "BevRaster", "MapElement", "Pose2",
    "bilinear_sample", "clip_to_range", "compose_pose", "inject_pose_noise", "inverse_pose",
    "relative_pose", "resample_polyline", "transform_element", "warp_raster",
    "EvalReport", "chamfer_distance", "compute_ap", "evaluate", "match_greedy",
    "Observation", "ScenarioConfig", "Scene", "SensorModel", "associate_helpers",
    "generate_scene", "helper_availability_stats", "observe",
    "Candidate", "CandidateSet", "UncertaintyMap", "partition_candidates",
    "rasterize_uncertainty",
]
