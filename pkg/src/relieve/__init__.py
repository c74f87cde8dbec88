"""Multi-view registration of monocular depth maps from sparse matches.

Jointly optimizes per-view camera poses and depth-map deformations given
only relative (pseudo) monocular depths and sparse pixel correspondences,
by minimizing a confidence-weighted scale-invariant depth term plus an
angular reprojection term. Ships a synthetic-scene oracle, the evaluation
metric suite, and a CLI (``relieve``) over bit-exact file formats.
"""

from .geometry import (
    CameraIntrinsics,
    GeometryError,
    PoseSE3,
    backproject,
    camera_center,
    project,
    se3_exp,
    se3_log,
    to_world,
)
from .losses import (
    LossBreakdown,
    depth_loss,
    finite_difference_check,
    registration_loss,
    total_loss,
    vector_angle,
)
from .metrics import EvalReport, Sim3, ate, depth_rel_tau, pointmap_rel_tau, pose_auc, umeyama_align
from .optim import AdamMoments, NumericalError, OptimConfig, Solution, export_pointmap, solve, step
from .robust import weighted_median, wmad_normalize
from .sim import (
    CorruptionConfig,
    GroundTruthScene,
    MatchNoiseConfig,
    build_problem,
    corrupt_depth,
    generate_scene,
    sample_correspondences,
)
from .state import (
    CorrespondenceSet,
    HyperParams,
    Problem,
    SceneState,
    ValidationError,
    apply_gauge_fix,
    init_state,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "PoseSE3",
    "GeometryError",
    "backproject",
    "project",
    "to_world",
    "camera_center",
    "se3_exp",
    "se3_log",
    "weighted_median",
    "wmad_normalize",
    "HyperParams",
    "CorrespondenceSet",
    "Problem",
    "SceneState",
    "ValidationError",
    "LossBreakdown",
    "depth_loss",
    "vector_angle",
    "registration_loss",
    "total_loss",
    "finite_difference_check",
    "init_state",
    "apply_gauge_fix",
    "step",
    "solve",
    "export_pointmap",
    "AdamMoments",
    "OptimConfig",
    "Solution",
    "NumericalError",
    "GroundTruthScene",
    "CorruptionConfig",
    "MatchNoiseConfig",
    "generate_scene",
    "corrupt_depth",
    "sample_correspondences",
    "build_problem",
    "Sim3",
    "EvalReport",
    "umeyama_align",
    "ate",
    "pose_auc",
    "depth_rel_tau",
    "pointmap_rel_tau",
    "__version__",
]
