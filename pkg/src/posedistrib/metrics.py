"""Ground-truth pose sets and distribution precision/recall.

The ground-truth set is generated from the declared symmetry (continuous
orbits discretized at a configurable step). With occlusion awareness, a
symmetry image survives only if its score on the actual observation matches
the true pose's score, which is how hidden disambiguating features enlarge
the valid pose set.

Distances are the classic max-over-model-points measures: surface distance
(meters, 3D displacement) and projective distance (pixels, reprojection
displacement), evaluated on a fixed deterministic subsample of the model.
Set-level precision/recall matches each pose to its nearest counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimator import PoseDistribution, score_pose
from .obsgen import Observation
from .rotkit import CameraIntrinsics, Pose
from .symmodel import SymmetrySpec, SymModel

__all__ = [
    "GtPoseSet",
    "PRReport",
    "EmptyGt",
    "gt_pose_set",
    "mspd",
    "mssd",
    "pr_report",
    "DEFAULT_MSPD_FRACTIONS",
    "DEFAULT_MSSD_FRACTIONS",
    "SCORE_EQUIVALENCE_TOL",
]

METRIC_SUBSAMPLE = 1000
METRIC_SUBSAMPLE_SEED = 12345
SCORE_EQUIVALENCE_TOL = 1e-3

# threshold ladders as fractions of the crop diagonal / object diameter;
# the scalar report reads the 0.05 rung
DEFAULT_MSPD_FRACTIONS = (0.01, 0.02, 0.05, 0.10)
DEFAULT_MSSD_FRACTIONS = (0.01, 0.02, 0.05, 0.10)
DEFAULT_FRACTION = 0.05


class EmptyGt(ValueError):
    """A report needs a non-empty ground-truth pose set."""


@dataclass(frozen=True)
class GtPoseSet:
    poses: tuple[Pose, ...]
    symmetry: SymmetrySpec
    occlusion_aware: bool
    step_deg: float

    def __len__(self) -> int:
        return len(self.poses)

    def to_dict(self) -> dict:
        return {
            "symmetry": self.symmetry.to_dict(),
            "occlusion_aware": self.occlusion_aware,
            "step_deg": self.step_deg,
            "poses": [
                {
                    "quaternion_wxyz": [float(v) for v in p.rotation.quat],
                    "translation_m": [float(v) for v in p.translation],
                }
                for p in self.poses
            ],
        }


@dataclass(frozen=True)
class PRReport:
    precision_mpd: float
    recall_mpd: float
    precision_msd: float
    recall_msd: float
    mpd_thresholds_px: tuple[float, ...]
    msd_thresholds_m: tuple[float, ...]
    precision_mpd_curve: tuple[float, ...]
    recall_mpd_curve: tuple[float, ...]
    precision_msd_curve: tuple[float, ...]
    recall_msd_curve: tuple[float, ...]

    @property
    def recall_msd_avg(self) -> float:
        """Recall averaged over the threshold ladder (sensitive to coverage)."""
        return float(np.mean(self.recall_msd_curve))

    @property
    def precision_msd_avg(self) -> float:
        return float(np.mean(self.precision_msd_curve))

    def to_dict(self) -> dict:
        return {
            "precision_mpd": self.precision_mpd,
            "recall_mpd": self.recall_mpd,
            "precision_msd": self.precision_msd,
            "recall_msd": self.recall_msd,
            "mpd_thresholds_px": list(self.mpd_thresholds_px),
            "msd_thresholds_m": list(self.msd_thresholds_m),
            "precision_mpd_curve": list(self.precision_mpd_curve),
            "recall_mpd_curve": list(self.recall_mpd_curve),
            "precision_msd_curve": list(self.precision_msd_curve),
            "recall_msd_curve": list(self.recall_msd_curve),
            "precision_msd_avg": self.precision_msd_avg,
            "recall_msd_avg": self.recall_msd_avg,
        }

    def curves_csv(self) -> str:
        lines = ["metric,threshold,precision,recall"]
        for t, p, r in zip(self.mpd_thresholds_px, self.precision_mpd_curve, self.recall_mpd_curve):
            lines.append(f"mpd,{t:.6g},{p:.6g},{r:.6g}")
        for t, p, r in zip(self.msd_thresholds_m, self.precision_msd_curve, self.recall_msd_curve):
            lines.append(f"msd,{t:.6g},{p:.6g},{r:.6g}")
        return "\n".join(lines) + "\n"


def _metric_points(model: SymModel) -> np.ndarray:
    rng = np.random.default_rng(METRIC_SUBSAMPLE_SEED)
    n = len(model)
    if n <= METRIC_SUBSAMPLE:
        return model.points
    idx = rng.choice(n, size=METRIC_SUBSAMPLE, replace=False)
    return model.points[np.sort(idx)]


def gt_pose_set(
    model: SymModel,
    gt_pose: Pose,
    symmetry: SymmetrySpec | None = None,
    occlusion_aware: bool = False,
    obs: Observation | None = None,
    step_deg: float = 1.0,
) -> GtPoseSet:
    """All poses equivalent to gt_pose under the (possibly occlusion-enlarged)
    symmetry group.

    Without occlusion awareness this is the declared group's orbit. With it,
    a group element survives only when scoring the transformed pose on the
    observation is indistinguishable (within 1e-3) from the true pose, so
    elements whose disambiguating evidence is hidden are kept and the rest
    are dropped.
    """
    if step_deg <= 0:
        raise ValueError("step_deg must be positive")
    symmetry = symmetry if symmetry is not None else model.symmetry
    candidates = [gt_pose.compose_rotation(S) for S in symmetry.group_rotations(step_deg)]
    if occlusion_aware:
        if obs is None:
            raise ValueError("occlusion-aware ground truth needs an observation")
        base = score_pose(obs, model, gt_pose, obs.camera)[0]
        kept = []
        for p in candidates:
            s = score_pose(obs, model, p, obs.camera)[0]
            if abs(s - base) <= SCORE_EQUIVALENCE_TOL:
                kept.append(p)
        candidates = kept
    return GtPoseSet(tuple(candidates), symmetry, occlusion_aware, step_deg)


def mssd(model: SymModel, pose_a: Pose, pose_b: Pose) -> float:
    """Max 3D displacement of sampled model points between the two poses."""
    pts = _metric_points(model)
    return float(np.linalg.norm(pose_a.apply(pts) - pose_b.apply(pts), axis=1).max())


def mspd(model: SymModel, K: CameraIntrinsics, pose_a: Pose, pose_b: Pose) -> float:
    """Max reprojection displacement (pixels) of sampled model points."""
    from .rotkit import project_points

    pts = _metric_points(model)
    uva, _ = project_points(K, pose_a, pts)
    uvb, _ = project_points(K, pose_b, pts)
    return float(np.linalg.norm(uva - uvb, axis=1).max())


def _pairwise_distance_matrix(
    model: SymModel, K: CameraIntrinsics, preds: list[Pose], gts: list[Pose]
) -> tuple[np.ndarray, np.ndarray]:
    """(mspd, mssd) matrices of shape (n_pred, n_gt) over the metric subsample."""
    pts = _metric_points(model)
    from .rotkit import project_points

    pred_xyz = np.stack([p.apply(pts) for p in preds]) if preds else np.zeros((0, len(pts), 3))
    gt_xyz = np.stack([g.apply(pts) for g in gts])
    d_sur = np.empty((len(preds), len(gts)))
    d_prj = np.empty((len(preds), len(gts)))
    gt_uv = []
    for g in range(len(gts)):
        uv, _ = project_points(K, gts[g], pts)
        gt_uv.append(uv)
    for i in range(len(preds)):
        uv_i, _ = project_points(K, preds[i], pts)
        for g in range(len(gts)):
            d_sur[i, g] = np.linalg.norm(pred_xyz[i] - gt_xyz[g], axis=1).max()
            d_prj[i, g] = np.linalg.norm(uv_i - gt_uv[g], axis=1).max()
    return d_prj, d_sur


def pr_report(
    dist: PoseDistribution,
    gt: GtPoseSet,
    model: SymModel,
    K: CameraIntrinsics,
    mspd_fractions: tuple[float, ...] = DEFAULT_MSPD_FRACTIONS,
    mssd_fractions: tuple[float, ...] = DEFAULT_MSSD_FRACTIONS,
) -> PRReport:
    """Nearest-neighbor precision/recall of a pose distribution.

    Precision: fraction of predicted poses within the threshold of some
    ground-truth pose. Recall: fraction of ground-truth poses within the
    threshold of some prediction. Thresholds are fractions of the crop
    diagonal (projective) and the object diameter (surface); the scalar
    fields report the 0.05 rung and curves cover the whole ladder. An empty
    prediction scores zero on both, by convention.
    """
    if len(gt) == 0:
        raise EmptyGt("ground-truth pose set is empty")
    diag = float(np.hypot(K.width, K.height))
    thr_px = tuple(f * diag for f in mspd_fractions)
    thr_m = tuple(f * model.diameter for f in mssd_fractions)

    preds = [sp.pose for sp in dist.poses]
    if not preds:
        zeros = tuple(0.0 for _ in mspd_fractions)
        return PRReport(
            0.0, 0.0, 0.0, 0.0, thr_px, thr_m, zeros, zeros,
            tuple(0.0 for _ in mssd_fractions), tuple(0.0 for _ in mssd_fractions),
        )

    d_prj, d_sur = _pairwise_distance_matrix(model, K, preds, list(gt.poses))
    pred_min_prj = d_prj.min(axis=1)
    gt_min_prj = d_prj.min(axis=0)
    pred_min_sur = d_sur.min(axis=1)
    gt_min_sur = d_sur.min(axis=0)

    p_mpd = tuple(float((pred_min_prj <= t).mean()) for t in thr_px)
    r_mpd = tuple(float((gt_min_prj <= t).mean()) for t in thr_px)
    p_msd = tuple(float((pred_min_sur <= t).mean()) for t in thr_m)
    r_msd = tuple(float((gt_min_sur <= t).mean()) for t in thr_m)

    i_px = mspd_fractions.index(DEFAULT_FRACTION) if DEFAULT_FRACTION in mspd_fractions else -1
    i_m = mssd_fractions.index(DEFAULT_FRACTION) if DEFAULT_FRACTION in mssd_fractions else -1
    return PRReport(
        p_mpd[i_px], r_mpd[i_px], p_msd[i_m], r_msd[i_m],
        thr_px, thr_m, p_mpd, r_mpd, p_msd, r_msd,
    )
