"""Back end: density pruning, grouping, PnP-RANSAC, scoring, score filter.

Rotation hypotheses are histogrammed on the SO(3) grid and only hypotheses in
bins denser than tau_dens survive. Surviving correspondences are grouped per
bin; each group runs an independent, deterministically seeded PnP-RANSAC
(three-point minimal solver + consensus + reprojection refinement). Every
recovered pose is scored by descriptor support and mask agreement of its
visible model points, and poses below tau_score times the best score are
discarded. Each group contributes at most one pose.

Per-group random streams derive from (seed, bin index), so parallel and
sequential execution produce identical output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .matcher import DEFAULT_TAU_DESC, RotationHypothesisSet, all_hypotheses
from .obsgen import Observation, visible_points
from .rotkit import (
    CameraIntrinsics,
    Pose,
    Rotation,
    d_ang_quat,
    matrix_to_quat,
    project_points,
    rotvec_to_quat,
    quat_mul,
)
from .so3grid import So3Grid, build_grid, density
from .symmodel import SymModel

__all__ = [
    "EstimatorParams",
    "RansacParams",
    "RefineParams",
    "ScoredPose",
    "PoseDistribution",
    "CollinearPoints",
    "NoRealSolution",
    "TooFewCorrespondences",
    "NoVisiblePoints",
    "p3p_solve",
    "pnp_ransac",
    "refine_pose",
    "score_pose",
    "prune_hypotheses",
    "group_by_bin",
    "estimate_distribution",
]


class CollinearPoints(ValueError):
    """P3P needs three non-collinear 3D points."""


class NoRealSolution(ValueError):
    """The P3P quartic has no usable real root."""


class TooFewCorrespondences(ValueError):
    """PnP-RANSAC needs at least three correspondences."""


class NoVisiblePoints(ValueError):
    """Scoring found no visible model point under the pose."""


# fraction-of-best similarity a projected point must reach to earn descriptor
# credit; sharper than the matching ratio so that scores separate sub-pixel
# consistent poses from drifted ones
SCORE_SUPPORT_RATIO = 0.85
# consensus loop works on at most this many correspondences (refinement and
# the reported inlier count still use the whole group)
MAX_CONSENSUS_ROWS = 512


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 200
    inlier_px: float = 2.0
    min_inliers: int = 6


@dataclass(frozen=True)
class RefineParams:
    enabled: bool = True
    max_iterations: int = 20


@dataclass(frozen=True)
class EstimatorParams:
    grid_level: int = 4
    tau_desc: float = DEFAULT_TAU_DESC
    tau_dens: int = 10
    tau_score: float = 0.9
    ransac: RansacParams = field(default_factory=RansacParams)
    refine: RefineParams = field(default_factory=RefineParams)
    seed: int = 0
    parallel: bool = False

    def __post_init__(self):
        if not (0 < self.tau_score <= 1.0):
            raise ValueError("tau_score must be in (0, 1]")
        if self.tau_dens < 0 or self.ransac.inlier_px <= 0 or self.ransac.iterations <= 0:
            raise ValueError("thresholds must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorParams":
        d = dict(d)
        if "ransac" in d:
            d["ransac"] = RansacParams(**d["ransac"])
        if "refine" in d:
            d["refine"] = RefineParams(**d["refine"])
        return cls(**d)


@dataclass(frozen=True)
class ScoredPose:
    pose: Pose
    score: float
    score_desc: float
    score_mask: float
    cell: int
    inliers: int

    def to_dict(self) -> dict:
        return {
            "quaternion_wxyz": [float(v) for v in self.pose.rotation.quat],
            "translation_m": [float(v) for v in self.pose.translation],
            "gamma": float(self.score),
            "gamma_desc": float(self.score_desc),
            "gamma_mask": float(self.score_mask),
            "bin": int(self.cell),
            "inliers": int(self.inliers),
        }


@dataclass
class PoseDistribution:
    """Scored pose set; empty only when status reports no pose found."""

    poses: list[ScoredPose]
    params: EstimatorParams
    status: str = "ok"  # "ok" | "no_pose_found"
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "poses": [p.to_dict() for p in self.poses],
            "params": self.params.to_dict(),
            "diagnostics": self.diagnostics,
            "provenance": self.provenance,
        }


# ---------------------------------------------------------------------------
# Minimal solver
# ---------------------------------------------------------------------------

def _cubic_real_root(b: float, c: float, d: float) -> float:
    """One real root of x^3 + b x^2 + c x + d (Cardano, trig branch)."""
    p = c - b * b / 3.0
    q = 2.0 * b**3 / 27.0 - b * c / 3.0 + d
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc >= 0:
        s = np.sqrt(disc)
        u = np.cbrt(-q / 2.0 + s)
        v = np.cbrt(-q / 2.0 - s)
        y = u + v
    else:
        r = np.sqrt(-(p**3) / 27.0)
        phi = np.arccos(np.clip(-q / (2.0 * r), -1.0, 1.0))
        y = 2.0 * np.cbrt(r) * np.cos(phi / 3.0)
    return float(y - b / 3.0)


def _quartic_roots(coeffs: np.ndarray) -> np.ndarray:
    """Real roots of a quartic by Ferrari's resolvent; eigenvalue fallback.

    Roots only seed a Newton polish downstream, so moderate accuracy is fine.
    """
    q4, q3, q2, q1, q0 = (float(v) for v in coeffs)
    amax = max(abs(q4), abs(q3), abs(q2), abs(q1), abs(q0))
    if abs(q4) < 1e-11 * amax:
        r = np.roots(coeffs)
        return r[np.abs(r.imag) <= 1e-6 * (1.0 + np.abs(r.real))].real
    b, c, d, e = q3 / q4, q2 / q4, q1 / q4, q0 / q4
    # depressed quartic y^4 + p y^2 + q y + r with x = y - b/4
    p = c - 3.0 * b * b / 8.0
    q = d - b * c / 2.0 + b**3 / 8.0
    r = e - b * d / 4.0 + b * b * c / 16.0 - 3.0 * b**4 / 256.0
    if abs(q) < 1e-12 * (1.0 + abs(p) + abs(r)):
        # biquadratic
        roots = []
        disc = p * p - 4.0 * r
        if disc >= 0:
            for z in (-p + np.sqrt(disc), -p - np.sqrt(disc)):
                if z >= 0:
                    roots += [np.sqrt(z / 2.0), -np.sqrt(z / 2.0)]
        return np.array(roots) - b / 4.0
    m = _cubic_real_root(p, p * p / 4.0 - r, -q * q / 8.0)
    if m <= 1e-14:
        r2 = np.roots(coeffs)
        return r2[np.abs(r2.imag) <= 1e-6 * (1.0 + np.abs(r2.real))].real
    s = np.sqrt(2.0 * m)
    roots = []
    for sign in (1.0, -1.0):
        a2 = -(2.0 * p + 2.0 * m + sign * 2.0 * q / s)
        if a2 >= 0:
            sa = np.sqrt(a2) / 2.0
            base = sign * s / 2.0
            roots += [base + sa, base - sa]
    return np.array(roots) - b / 4.0


def _solve3(J: np.ndarray, r: np.ndarray) -> np.ndarray | None:
    """Cramer's rule for a 3x3 system (avoids numpy.linalg call overhead)."""
    a, b, c = J[0]
    d, e, f = J[1]
    g, h, i = J[2]
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    if abs(det) < 1e-300:
        return None
    x0, x1, x2 = r
    dx = x0 * (e * i - f * h) - b * (x1 * i - f * x2) + c * (x1 * h - e * x2)
    dy = a * (x1 * i - f * x2) - x0 * (d * i - f * g) + c * (d * x2 - x1 * g)
    dz = a * (e * x2 - x1 * h) - b * (d * x2 - x1 * g) + x0 * (d * h - e * g)
    return np.array([dx, dy, dz]) / det


def _pixel_rays(K: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    rays = np.stack(
        [
            (pixels[:, 0] - K.cx) / K.fx,
            (pixels[:, 1] - K.cy) / K.fy,
            np.ones(len(pixels)),
        ],
        axis=1,
    )
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def _kabsch(obj: np.ndarray, cam: np.ndarray) -> Pose:
    co, cc = obj.mean(axis=0), cam.mean(axis=0)
    H = (obj - co).T @ (cam - cc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(Rotation.from_matrix(R), cc - R @ co)


def _polish_distances(s: np.ndarray, dd: np.ndarray, cosines: np.ndarray) -> np.ndarray:
    """Newton-polish camera distances on the three law-of-cosines equations.

    dd = (a^2, b^2, c^2) squared inter-point distances, cosines = (cos_alpha,
    cos_beta, cos_gamma) of the ray pair angles opposite to them.
    """
    ca, cb, cg = cosines
    for _ in range(12):
        s1, s2, s3 = s
        r = np.array(
            [
                s2 * s2 + s3 * s3 - 2 * s2 * s3 * ca - dd[0],
                s1 * s1 + s3 * s3 - 2 * s1 * s3 * cb - dd[1],
                s1 * s1 + s2 * s2 - 2 * s1 * s2 * cg - dd[2],
            ]
        )
        J = np.array(
            [
                [0.0, 2 * s2 - 2 * s3 * ca, 2 * s3 - 2 * s2 * ca],
                [2 * s1 - 2 * s3 * cb, 0.0, 2 * s3 - 2 * s1 * cb],
                [2 * s1 - 2 * s2 * cg, 2 * s2 - 2 * s1 * cg, 0.0],
            ]
        )
        step = _solve3(J, -r)
        if step is None:
            break
        s = s + step
        if np.max(np.abs(step)) < 1e-14 * max(1.0, np.max(np.abs(s))):
            break
    return s


def p3p_solve(K: CameraIntrinsics, world: np.ndarray, pixels: np.ndarray) -> list[Pose]:
    """Up to four camera poses putting three object points onto three pixels.

    Grunert's quartic in the distance ratios, roots polished to machine
    precision, absolute orientation by Kabsch alignment. Solutions place all
    three points at positive depth.
    """
    world = np.asarray(world, dtype=np.float64).reshape(3, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(3, 2)
    scale = np.abs(world).max() + 1e-12

    cross = np.cross(world[1] - world[0], world[2] - world[0])
    if np.linalg.norm(cross) < 1e-10 * scale * scale:
        raise CollinearPoints("the three object points are collinear")
    if len({(round(p[0], 9), round(p[1], 9)) for p in pixels}) < 3:
        raise ValueError("pixels must be distinct")

    rays = _pixel_rays(K, pixels)
    a2 = float(((world[1] - world[2]) ** 2).sum())
    b2 = float(((world[0] - world[2]) ** 2).sum())
    c2 = float(((world[0] - world[1]) ** 2).sum())
    ca = float(rays[1] @ rays[2])
    cb = float(rays[0] @ rays[2])
    cg = float(rays[0] @ rays[1])

    A = (a2 - c2) / b2
    B = (a2 + c2) / b2
    q4 = (A - 1.0) ** 2 - 4.0 * (c2 / b2) * ca * ca
    q3 = 4.0 * (A * (1.0 - A) * cb - (1.0 - B) * ca * cg + 2.0 * (c2 / b2) * ca * ca * cb)
    q2 = 2.0 * (
        A * A
        - 1.0
        + 2.0 * A * A * cb * cb
        + 2.0 * ((b2 - c2) / b2) * ca * ca
        - 4.0 * B * ca * cb * cg
        + 2.0 * ((b2 - a2) / b2) * cg * cg
    )
    q1 = 4.0 * (-A * (1.0 + A) * cb + 2.0 * (a2 / b2) * cg * cg * cb - (1.0 - B) * ca * cg)
    q0 = (1.0 + A) ** 2 - 4.0 * (a2 / b2) * cg * cg

    coeffs = np.array([q4, q3, q2, q1, q0])
    if np.all(np.abs(coeffs) < 1e-14):
        raise NoRealSolution("degenerate configuration: vanishing quartic")
    roots = _quartic_roots(coeffs)

    dd = np.array([a2, b2, c2])
    poses: list[Pose] = []
    seen: list[np.ndarray] = []
    for root in roots:
        v = float(root)
        if v <= 0:
            continue
        denom = 2.0 * (cg - v * ca)
        u_cands = []
        if abs(denom) > 1e-9:
            u_cands.append(((-1.0 + A) * v * v - 2.0 * A * cb * v + 1.0 + A) / denom)
        else:
            # fall back to the circle relation between u and v
            s1sq = b2 / (1.0 + v * v - 2.0 * v * cb)
            disc = cg * cg - (1.0 - c2 / s1sq)
            if disc >= 0:
                u_cands.extend([cg + np.sqrt(disc), cg - np.sqrt(disc)])
        for u in u_cands:
            if u <= 0:
                continue
            s1 = np.sqrt(b2 / max(1.0 + v * v - 2.0 * v * cb, 1e-300))
            s = _polish_distances(np.array([s1, u * s1, v * s1]), dd, np.array([ca, cb, cg]))
            if np.any(~np.isfinite(s)) or np.any(s <= 0):
                continue
            resid = np.array(
                [
                    s[1] ** 2 + s[2] ** 2 - 2 * s[1] * s[2] * ca - a2,
                    s[0] ** 2 + s[2] ** 2 - 2 * s[0] * s[2] * cb - b2,
                    s[0] ** 2 + s[1] ** 2 - 2 * s[0] * s[1] * cg - c2,
                ]
            )
            if np.max(np.abs(resid)) > 1e-6 * max(a2, b2, c2):
                continue
            if any(np.allclose(s, t, rtol=1e-7, atol=0) for t in seen):
                continue
            seen.append(s)
            cam_pts = s[:, None] * rays
            poses.append(_kabsch(world, cam_pts))
    if not poses:
        raise NoRealSolution("no valid real root of the pose quartic")
    return poses


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

def refine_pose(
    K: CameraIntrinsics,
    world: np.ndarray,
    targets: np.ndarray,
    pose: Pose,
    max_iterations: int = 20,
) -> Pose:
    """Gauss-Newton minimization of total squared reprojection error over the
    six pose parameters (left-perturbation rotation vector + translation)."""
    R = pose.rotation.as_matrix()
    t = pose.translation.copy()
    world = np.asarray(world, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    lam = 1e-9
    for _ in range(max_iterations):
        p = world @ R.T + t
        z = p[:, 2]
        if np.any(z <= 1e-9):
            break
        proj = np.stack([K.fx * p[:, 0] / z + K.cx, K.fy * p[:, 1] / z + K.cy], axis=1)
        r = (proj - targets).ravel()
        n = len(world)
        a = K.fx / z
        b = -K.fx * p[:, 0] / z**2
        c = K.fy / z
        e = -K.fy * p[:, 1] / z**2
        rx = p - t  # rotated points; dp/dw = -[rx]_x for left perturbation
        r0, r1, r2 = rx[:, 0], rx[:, 1], rx[:, 2]
        zero = np.zeros(n)
        # rows of d_proj @ (-skew(rx)) followed by d_proj, expanded by hand
        J = np.empty((n, 2, 6))
        J[:, 0, 0] = b * r1
        J[:, 0, 1] = a * r2 - b * r0
        J[:, 0, 2] = -a * r1
        J[:, 0, 3] = a
        J[:, 0, 4] = zero
        J[:, 0, 5] = b
        J[:, 1, 0] = -(c * r2 - e * r1)
        J[:, 1, 1] = -e * r0
        J[:, 1, 2] = c * r0
        J[:, 1, 3] = zero
        J[:, 1, 4] = c
        J[:, 1, 5] = e
        J = J.reshape(2 * n, 6)
        A = J.T @ J + lam * np.eye(6)
        g = J.T @ r
        try:
            step = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            break
        dq = rotvec_to_quat(step[:3])
        R = Rotation.from_quat(quat_mul(dq, matrix_to_quat(R))).as_matrix()
        t = t + step[3:]
        if np.max(np.abs(step)) < 1e-12:
            break
    return Pose(Rotation.from_matrix(R), t)


# ---------------------------------------------------------------------------
# PnP-RANSAC
# ---------------------------------------------------------------------------

def _reproj_residuals(K: CameraIntrinsics, pose: Pose, world: np.ndarray, targets: np.ndarray):
    uv, z = project_points(K, pose, world)
    res = np.linalg.norm(uv - targets, axis=1)
    res[z <= 0] = np.inf
    return res


def pnp_ransac(
    K: CameraIntrinsics,
    world: np.ndarray,
    targets: np.ndarray,
    params: "EstimatorParams",
    rng: np.random.Generator,
    rotation_gate: tuple[np.ndarray, float] | None = None,
) -> tuple[Pose, int] | None:
    """Consensus pose from 2D-3D correspondences; None when support is weak.

    `rotation_gate` (reference quaternion, max angle) rejects minimal-sample
    candidates inconsistent with the group's grid cell. Deterministic for a
    given generator state.
    """
    world = np.asarray(world, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    n = len(world)
    if n < 3:
        raise TooFewCorrespondences("PnP needs at least 3 correspondences")

    # the consensus loop statistics survive subsampling; full data returns
    # for refinement and the reported support
    if n > MAX_CONSENSUS_ROWS:
        sub = np.sort(rng.choice(n, size=MAX_CONSENSUS_ROWS, replace=False))
        w_sub, t_sub = world[sub], targets[sub]
    else:
        w_sub, t_sub = world, targets
    m = len(w_sub)

    rs = params.ransac
    best = None  # (count, -resid_sum, iteration, pose, inlier_mask)
    needed = rs.iterations
    for it in range(rs.iterations):
        if it >= needed:
            break
        sel = rng.choice(m, size=3, replace=False)
        tgt = t_sub[sel]
        if (
            (tgt[0, 0] == tgt[1, 0] and tgt[0, 1] == tgt[1, 1])
            or (tgt[0, 0] == tgt[2, 0] and tgt[0, 1] == tgt[2, 1])
            or (tgt[1, 0] == tgt[2, 0] and tgt[1, 1] == tgt[2, 1])
        ):
            continue
        try:
            cands = p3p_solve(K, w_sub[sel], tgt)
        except (CollinearPoints, NoRealSolution, ValueError):
            continue
        for pose in cands:
            if rotation_gate is not None:
                ref_q, max_ang = rotation_gate
                if float(d_ang_quat(pose.rotation.quat, ref_q)) > max_ang:
                    continue
            res = _reproj_residuals(K, pose, w_sub, t_sub)
            inl = res <= rs.inlier_px
            cnt = int(inl.sum())
            if cnt < 3:
                continue
            key = (cnt, -float(res[inl].sum()), -it)
            if best is None or key > best[0]:
                best = (key, pose, inl)
                # adaptive stopping at 99.9% confidence of having seen
                # one all-inlier minimal sample
                w = cnt / m
                miss = 1.0 - min(w, 0.999999) ** 3
                if miss <= 1e-12:
                    needed = it + 1
                else:
                    needed = min(rs.iterations, int(np.ceil(np.log(1e-3) / np.log(miss))))
    if best is None:
        return None

    _, pose, _ = best
    res = _reproj_residuals(K, pose, world, targets)
    inl = res <= rs.inlier_px
    if params.refine.enabled:
        # locally optimized consensus: re-fit and re-select until the inlier
        # set stops moving, so the minimal sample's bias does not stick
        for _ in range(6):
            refined = refine_pose(K, world[inl], targets[inl], pose, params.refine.max_iterations)
            res_r = _reproj_residuals(K, refined, world, targets)
            inl_r = res_r <= rs.inlier_px
            if int(inl_r.sum()) < 3:
                break
            moved = not np.array_equal(inl_r, inl)
            pose, inl = refined, inl_r
            if not moved:
                break
    if rotation_gate is not None:
        ref_q, max_ang = rotation_gate
        if float(d_ang_quat(pose.rotation.quat, ref_q)) > max_ang:
            return None
    if int(inl.sum()) < rs.min_inliers:
        return None
    return pose, int(inl.sum())


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def score_pose(
    obs: Observation,
    model: SymModel,
    pose: Pose,
    K: CameraIntrinsics,
    support_ratio: float = SCORE_SUPPORT_RATIO,
) -> tuple[float, float, float]:
    """(gamma, gamma_desc, gamma_mask) for a candidate pose.

    Both terms average over the model points visible under the pose. A point
    earns mask credit when its projection lands on a mask pixel (nearest
    pixel; outside the crop counts zero) and descriptor credit when its
    descriptor similarity at that pixel reaches `support_ratio` times the
    pixel's best similarity. The shared softmax log-denominator cancels in
    that ratio; the per-pixel best comes from the cached normalizer map.
    """
    vis = visible_points(model, K, pose)
    if len(vis) == 0:
        raise NoVisiblePoints("no model point is visible under this pose")
    uv, z = project_points(K, pose, model.points[vis])
    H, W = obs.mask.shape
    px = np.floor(uv[:, 0]).astype(int)
    py = np.floor(uv[:, 1]).astype(int)
    in_crop = (z > 0) & (px >= 0) & (px < W) & (py >= 0) & (py < H)

    mask_credit = np.zeros(len(vis), dtype=bool)
    mask_credit[in_crop] = obs.mask[py[in_crop], px[in_crop]]

    desc_credit = np.zeros(len(vis), dtype=bool)
    if mask_credit.any():
        sel = np.nonzero(mask_credit)[0]
        dmax = obs.descriptor_max_map(model)[py[sel], px[sel]]
        dots = np.einsum(
            "ij,ij->i", obs.descriptors[py[sel], px[sel]], model.descriptors[vis[sel]]
        )
        desc_credit[sel] = dots >= np.minimum(support_ratio * dmax, dmax)

    gamma_mask = float(mask_credit.mean())
    gamma_desc = float(desc_credit.mean())
    return gamma_desc + gamma_mask, gamma_desc, gamma_mask


# ---------------------------------------------------------------------------
# Pruning, grouping, the full chain
# ---------------------------------------------------------------------------

def prune_hypotheses(
    H: RotationHypothesisSet, grid: So3Grid, tau_dens: int
) -> RotationHypothesisSet:
    """Keep hypotheses whose grid cell holds more than tau_dens hypotheses;
    survivors carry their cell index."""
    if len(H) == 0:
        return H.with_cells(np.empty(0, dtype=np.int64))
    cells = grid.bin_of_quats(H.quats)
    hist = density(grid, H.quats)
    dense_cells = hist.cells[hist.counts > tau_dens]
    keep = np.isin(cells, dense_cells)
    return H.take(np.nonzero(keep)[0]).with_cells(cells[keep])


def group_by_bin(H_pruned: RotationHypothesisSet) -> dict[int, np.ndarray]:
    """Partition surviving correspondence rows by grid cell, deterministically
    ordered (rows are already canonical; keys sorted ascending)."""
    if H_pruned.cells is None:
        raise ValueError("hypotheses carry no cell indices; run prune_hypotheses first")
    out: dict[int, np.ndarray] = {}
    order = np.argsort(H_pruned.cells, kind="stable")
    cells_sorted = H_pruned.cells[order]
    bounds = np.nonzero(np.diff(cells_sorted))[0] + 1
    for seg in np.split(order, bounds):
        if len(seg):
            out[int(H_pruned.cells[seg[0]])] = np.sort(seg)
    return out


def _solve_group(
    cell: int,
    rows: np.ndarray,
    H: RotationHypothesisSet,
    obs: Observation,
    model: SymModel,
    K: CameraIntrinsics,
    params: EstimatorParams,
    grid: So3Grid,
    gate_radius: float,
):
    world = model.points[H.point_index[rows]]
    targets = np.stack([H.pix_x[rows] + 0.5, H.pix_y[rows] + 0.5], axis=1).astype(np.float64)
    rng = np.random.default_rng([params.seed, cell])
    rep = grid.representative_quats(np.array([cell]))[0]
    try:
        got = pnp_ransac(K, world, targets, params, rng, rotation_gate=(rep, gate_radius))
    except TooFewCorrespondences:
        return None
    if got is None:
        return None
    pose, inliers = got
    try:
        gamma, gdesc, gmask = score_pose(obs, model, pose, K)
    except NoVisiblePoints:
        return None
    return ScoredPose(pose, gamma, gdesc, gmask, cell, inliers)


def estimate_distribution(
    obs: Observation,
    model: SymModel,
    K: CameraIntrinsics,
    params: EstimatorParams | None = None,
    hypotheses: RotationHypothesisSet | None = None,
) -> PoseDistribution:
    """Run the full chain from per-pixel fields to a scored pose set.

    `hypotheses` lets a caller that already ran the matcher reuse its output;
    it must come from the same observation, model, and tau_desc.
    """
    params = params or EstimatorParams()
    grid = build_grid(params.grid_level)

    H = hypotheses if hypotheses is not None else all_hypotheses(obs, model, params.tau_desc)
    Hp = prune_hypotheses(H, grid, params.tau_dens)
    diagnostics = {
        "n_hypotheses": len(H),
        "n_pruned_hypotheses": len(Hp),
        "max_density": int(density(grid, H.quats).counts.max()) if len(H) else 0,
    }
    if len(Hp) == 0:
        return PoseDistribution([], params, status="no_pose_found", diagnostics=diagnostics)

    groups = group_by_bin(Hp)
    diagnostics["n_bins"] = len(groups)
    gate_radius = grid.adjacency_radius()

    results: dict[int, ScoredPose | None] = {}
    if params.parallel:
        with ThreadPoolExecutor() as pool:
            futs = {
                cell: pool.submit(
                    _solve_group, cell, rows, Hp, obs, model, K, params, grid, gate_radius
                )
                for cell, rows in groups.items()
            }
            results = {cell: f.result() for cell, f in futs.items()}
    else:
        for cell, rows in groups.items():
            results[cell] = _solve_group(cell, rows, Hp, obs, model, K, params, grid, gate_radius)

    scored = [results[c] for c in sorted(results) if results[c] is not None]
    diagnostics["n_candidate_poses"] = len(scored)
    diagnostics["max_inliers"] = max((s.inliers for s in scored), default=0)
    if not scored:
        return PoseDistribution([], params, status="no_pose_found", diagnostics=diagnostics)

    score_max = max(s.score for s in scored)
    diagnostics["score_max"] = score_max
    kept = [s for s in scored if s.score >= params.tau_score * score_max]
    kept.sort(key=lambda s: (-s.score, s.cell))
    return PoseDistribution(kept, params, status="ok", diagnostics=diagnostics)
