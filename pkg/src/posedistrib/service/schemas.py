"""Pydantic request/response models for the estimation service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

PRIMITIVES = ("cylinder", "hex_prism", "cube_with_corner", "prism_with_marker", "sphere")


class MeshSpec(BaseModel):
    """Either a bundled primitive (with optional size overrides) or a PLY."""

    primitive: Optional[Literal[PRIMITIVES]] = None
    radius: Optional[float] = None
    height: Optional[float] = None
    edge: Optional[float] = None
    ply_path: Optional[str] = None
    ply_text: Optional[str] = None


class SymmetryModel(BaseModel):
    kind: Literal["asymmetric", "discrete", "continuous"]
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    n: int = 1


class BuildModelRequest(BaseModel):
    mesh: MeshSpec
    symmetry: Optional[SymmetryModel] = None  # default: the primitive's natural group
    max_points: int = 4000
    descriptor_dim: int = 12
    seed: int = 0


class BuildModelResponse(BaseModel):
    model_b64: str
    sha256: str
    n_points: int
    descriptor_dim: int
    symmetry: SymmetryModel
    spacing_m: float
    diameter_m: float


class CameraModel(BaseModel):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int


class PoseModel(BaseModel):
    rotvec: tuple[float, float, float]
    translation_m: tuple[float, float, float]


class NoiseModel(BaseModel):
    descriptor_rad: float = 0.0
    frame_rad: float = 0.0
    mask_erosion_px: int = 0


class ScenarioModel(BaseModel):
    camera: CameraModel
    gt_pose: PoseModel
    noise: NoiseModel = Field(default_factory=NoiseModel)
    occluder_polygon_px: Optional[list[tuple[float, float]]] = None
    outlier_rate: float = 0.0
    seed: int = 0


class RansacModel(BaseModel):
    iterations: int = 200
    inlier_px: float = 2.0
    min_inliers: int = 6


class RefineModel(BaseModel):
    enabled: bool = True
    max_iterations: int = 20


class EstimatorModel(BaseModel):
    grid_level: int = 4
    tau_desc: float = 0.65
    tau_dens: int = 10
    tau_score: float = 0.9
    ransac: RansacModel = Field(default_factory=RansacModel)
    refine: RefineModel = Field(default_factory=RefineModel)
    seed: int = 0
    parallel: bool = False


class MetricsModel(BaseModel):
    mspd_fractions: tuple[float, ...] = (0.01, 0.02, 0.05, 0.10)
    mssd_fractions: tuple[float, ...] = (0.01, 0.02, 0.05, 0.10)
    gt_step_deg: float = 1.0
    occlusion_aware: bool = True


class RunRequest(BaseModel):
    model_b64: Optional[str] = None
    model_path: Optional[str] = None
    scenario: ScenarioModel
    estimator: EstimatorModel = Field(default_factory=EstimatorModel)
    metrics: MetricsModel = Field(default_factory=MetricsModel)
    dump_stages: bool = False
    dump_hypotheses: bool = False


class RunResponse(BaseModel):
    status: str
    distribution: dict
    pr_report: Optional[dict]
    pr_curves_csv: Optional[str]
    mollweide_svg: str
    stage_svgs: Optional[dict[str, str]] = None
    hypotheses: Optional[list[dict]] = None
    provenance: dict


class SweepRequest(BaseModel):
    base: RunRequest
    axis: Literal["k", "tau_corr", "tau_dens", "tau_score"]
    values: list[float]


class SweepRow(BaseModel):
    value: float
    status: str
    n_poses: int
    precision_mpd: float
    recall_mpd: float
    precision_msd: float
    recall_msd: float
    precision_msd_avg: float
    recall_msd_avg: float


class SweepResponse(BaseModel):
    axis: str
    rows: list[SweepRow]
    csv: str
    provenance: dict


class LossesRequest(BaseModel):
    model_b64: Optional[str] = None
    model_path: Optional[str] = None
    scenario: ScenarioModel
    count: int = 1
    vary_pose_seed: Optional[int] = None


class LossesResponse(BaseModel):
    l_desc: float
    l_lf_rad: float
    n_observations: int
    n_pixels: int
    provenance: dict


class GtSetRequest(BaseModel):
    model_b64: Optional[str] = None
    model_path: Optional[str] = None
    scenario: ScenarioModel
    occlusion_aware: bool = True
    step_deg: float = 1.0


class GtSetResponse(BaseModel):
    gt_set: dict
    n_poses: int
    provenance: dict


class HealthResponse(BaseModel):
    status: str
    name: str
    version: str
