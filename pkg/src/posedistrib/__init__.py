"""posedistrib: 6D pose distribution estimation from ambiguous 2D-3D
correspondences on analytically constructed symmetry-aware object models."""

__version__ = "0.1.0"

from .rotkit import CameraIntrinsics, Pose, Rotation, compose_frames, d_ang, project  # noqa: F401
from .symmodel import SymmetrySpec, SymModel, build_symmodel, eval_losses  # noqa: F401
from .meshes import TriMesh  # noqa: F401
from .obsgen import Observation, ScenarioConfig, render, visible_points  # noqa: F401
from .matcher import all_hypotheses, match_pixel  # noqa: F401
from .estimator import (  # noqa: F401
    EstimatorParams,
    PoseDistribution,
    ScoredPose,
    estimate_distribution,
    p3p_solve,
    pnp_ransac,
    score_pose,
)
from .so3grid import So3Grid, bin_of, build_grid, density  # noqa: F401
from .metrics import GtPoseSet, PRReport, gt_pose_set, mspd, mssd, pr_report  # noqa: F401
