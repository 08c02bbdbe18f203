"""Synthetic observation generator.

Stands in for the per-pixel inference networks: renders ground truth from a
pose with a z-buffer rasterizer over the model's source mesh, then emits the
per-pixel fields the online pipeline consumes (mask, descriptor image, local
frame image), optionally corrupted by calibrated noise, boundary erosion, an
occluder polygon, and outlier pixels.

Noiselessly, for every mask pixel x:

    frame_image(x) · P_f(h(x)) == gt_rotation     (frame field consistency)
    descriptor_image(x) · P_d(h(x)) == 1          (descriptor consistency)

which is exactly the fixed point the training objectives define.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .meshes import TriMesh
from .rotkit import CameraIntrinsics, Pose, Rotation, cross3, quat_conj, quat_mul
from .symmodel import SymModel

__all__ = [
    "ScenarioConfig",
    "Observation",
    "ObjectOutOfFrame",
    "EmptyMaskAfterOcclusion",
    "render",
    "render_mask_only",
    "visible_points",
    "rasterize",
]


class ObjectOutOfFrame(ValueError):
    """The pose does not place the whole object inside the crop."""


class EmptyMaskAfterOcclusion(ValueError):
    """The occluder polygon removed every mask pixel."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to synthesize one observation deterministically."""

    camera: CameraIntrinsics
    gt_pose: Pose
    noise_desc: float = 0.0   # folded-normal sigma, radians on the descriptor sphere
    noise_frame: float = 0.0  # folded-normal sigma, radians on SO(3)
    noise_mask: int = 0       # boundary erosion, pixels
    occluder: tuple | None = None  # polygon [(x, y), ...] in pixel coords
    outlier_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_desc < 0 or self.noise_frame < 0 or self.noise_mask < 0:
            raise ValueError("noise parameters must be non-negative")
        if not (0.0 <= self.outlier_rate < 1.0):
            raise ValueError("outlier_rate must be in [0, 1)")


@dataclass
class Observation:
    """Per-pixel network-output stand-ins plus the hidden ground-truth block.

    The estimator may only read mask/descriptors/frame_quats; point_index,
    hit_points, and gt_pose exist for losses and metrics.
    """

    mask: np.ndarray          # (H, W) bool
    descriptors: np.ndarray   # (H, W, D) float64, zero off-mask
    frame_quats: np.ndarray   # (H, W, 4) float64, identity off-mask
    point_index: np.ndarray   # (H, W) int32 index into model points, -1 off-mask
    hit_points: np.ndarray    # (H, W, 3) object-frame surface hits (ground truth)
    gt_pose: Pose
    camera: CameraIntrinsics
    config: ScenarioConfig
    _desc_stats: dict = field(default_factory=dict, repr=False)

    @property
    def n_mask(self) -> int:
        return int(self.mask.sum())

    def descriptor_max_map(self, model: SymModel) -> np.ndarray:
        """Per-pixel best descriptor dot product against the whole model.

        This is the shared per-pixel normalizer of the similarity softmax
        (its log-denominator offsets cancel in ratios); cached per model.
        """
        key = id(model)
        if key not in self._desc_stats:
            ys, xs = np.nonzero(self.mask)
            dmax = np.full(self.mask.shape, -np.inf)
            chunk = max(1, int(2e7) // max(len(model), 1))
            for s in range(0, len(ys), chunk):
                block = self.descriptors[ys[s:s + chunk], xs[s:s + chunk]] @ model.descriptors.T
                dmax[ys[s:s + chunk], xs[s:s + chunk]] = block.max(axis=1)
            self._desc_stats[key] = dmax
        return self._desc_stats[key]


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def rasterize(
    mesh: TriMesh, camera: CameraIntrinsics, pose: Pose, require_in_frame: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Z-buffer the mesh; returns (depth (H,W) with inf off-mask, hit_obj (H,W,3)).

    Pixel (r, c) is sampled at continuous image coordinates (c+0.5, r+0.5).
    Camera-space hits are interpolated perspective-correctly and returned in
    object coordinates.
    """
    H, W = camera.height, camera.width
    verts_cam = pose.apply(mesh.vertices)
    z = verts_cam[:, 2]
    if np.any(z <= 0):
        raise ObjectOutOfFrame("object extends behind the camera")
    u = camera.fx * verts_cam[:, 0] / z + camera.cx
    v = camera.fy * verts_cam[:, 1] / z + camera.cy
    if require_in_frame and (u.min() < 0 or u.max() >= W or v.min() < 0 or v.max() >= H):
        raise ObjectOutOfFrame("object projects outside the crop")

    zbuf = np.full((H, W), np.inf)
    hit_cam = np.zeros((H, W, 3))
    uv = np.stack([u, v], axis=1)
    inv_z = 1.0 / z

    for tri in mesh.triangles:
        p0, p1, p2 = uv[tri[0]], uv[tri[1]], uv[tri[2]]
        area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if abs(area2) < 1e-12:
            continue
        lo = np.maximum(np.floor(np.minimum(np.minimum(p0, p1), p2) - 0.5).astype(int), 0)
        hi = np.minimum(
            np.ceil(np.maximum(np.maximum(p0, p1), p2) + 0.5).astype(int),
            [W - 1, H - 1],
        )
        if np.any(hi < lo):
            continue
        xs = np.arange(lo[0], hi[0] + 1) + 0.5
        ys = np.arange(lo[1], hi[1] + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w0 = (p1[0] - p0[0]) * (gy - p0[1]) - (p1[1] - p0[1]) * (gx - p0[0])
        w1 = (p2[0] - p1[0]) * (gy - p1[1]) - (p2[1] - p1[1]) * (gx - p1[0])
        w2 = (p0[0] - p2[0]) * (gy - p2[1]) - (p0[1] - p2[1]) * (gx - p2[0])
        if area2 > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        if not inside.any():
            continue
        # barycentric w.r.t. (p1,p2,p0)->(v2,v0,v1): w1 pairs with vertex 2's
        # opposite corner; use standard association l0=w1/area2 etc.
        l0 = w1 / area2
        l1 = w2 / area2
        l2 = w0 / area2
        iz = l0 * inv_z[tri[0]] + l1 * inv_z[tri[1]] + l2 * inv_z[tri[2]]
        depth = 1.0 / iz
        rows = np.arange(lo[1], hi[1] + 1)[:, None] * np.ones_like(gx, dtype=int)
        cols = np.ones_like(gy, dtype=int) * np.arange(lo[0], hi[0] + 1)[None, :]
        upd = inside & (depth < zbuf[lo[1] : hi[1] + 1, lo[0] : hi[0] + 1])
        if not upd.any():
            continue
        num = (
            l0[..., None] * (verts_cam[tri[0]] * inv_z[tri[0]])
            + l1[..., None] * (verts_cam[tri[1]] * inv_z[tri[1]])
            + l2[..., None] * (verts_cam[tri[2]] * inv_z[tri[2]])
        )
        hits = num / iz[..., None]
        r_sel, c_sel = rows[upd], cols[upd]
        zbuf[r_sel, c_sel] = depth[upd]
        hit_cam[r_sel, c_sel] = hits[upd]

    hit_obj = np.zeros_like(hit_cam)
    on = np.isfinite(zbuf)
    if on.any():
        hit_obj[on] = pose.inverse_apply(hit_cam[on])
    return zbuf, hit_obj


def _boundary_coverage(
    mesh: TriMesh, camera: CameraIntrinsics, pose: Pose, center_mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Conservative coverage for pixels whose center ray misses the surface.

    Pixels adjacent to the center-sampled mask get four subpixel rays; any
    hit makes the pixel part of the mask, with the closest hit providing its
    surface point. Keeps silhouette points from projecting into off-mask
    pixels while interior pixels stay exactly center-sampled.

    Returns (extra_mask (H,W) bool, extra_hit_obj (H,W,3)).
    """
    ring = ndimage.binary_dilation(center_mask, structure=np.ones((3, 3), bool)) & ~center_mask
    H, W = center_mask.shape
    extra_mask = np.zeros_like(center_mask)
    extra_hit = np.zeros((H, W, 3))
    ys, xs = np.nonzero(ring)
    if len(ys) == 0:
        return extra_mask, extra_hit

    verts_cam = pose.apply(mesh.vertices)
    offsets = [
        (ox, oy)
        for ox in (-0.45, 0.0, 0.45)
        for oy in (-0.45, 0.0, 0.45)
        if (ox, oy) != (0.0, 0.0)
    ]
    best_t = np.full(len(ys), np.inf)
    best_pt = np.zeros((len(ys), 3))
    for ox, oy in offsets:
        u = xs + 0.5 + ox
        v = ys + 0.5 + oy
        dirs = np.stack(
            [(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)],
            axis=1,
        )
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t_hit = _ray_first_hit(dirs, verts_cam, mesh.triangles)
        closer = t_hit < best_t
        best_t[closer] = t_hit[closer]
        best_pt[closer] = dirs[closer] * t_hit[closer, None]
    hit = np.isfinite(best_t)
    if hit.any():
        extra_mask[ys[hit], xs[hit]] = True
        extra_hit[ys[hit], xs[hit]] = pose.inverse_apply(best_pt[hit])
    return extra_mask, extra_hit


def _ray_tables(verts_cam: np.ndarray, tris: np.ndarray):
    """Per-triangle constants reducing origin-ray Moller-Trumbore tests to
    three matmuls: with tvec = -v0, det = d.(e2 x e1), u det = d.(e2 x tvec),
    v det = d.(tvec x e1), and t det = e2.(tvec x e1) (ray-independent)."""
    v0 = verts_cam[tris[:, 0]]
    e1 = verts_cam[tris[:, 1]] - v0
    e2 = verts_cam[tris[:, 2]] - v0
    tvec = -v0
    A = cross3(e2, e1)
    B = cross3(e2, tvec)
    C = cross3(tvec, e1)
    k = np.einsum("tj,tj->t", e2, C)
    return A, B, C, k


def _ray_first_hit(dirs: np.ndarray, verts_cam: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Distance to the first surface hit along each unit ray from the origin.

    Single precision: the visibility tolerance (1e-4 of the diameter) is
    orders of magnitude above float32 resolution at scene scale.
    """
    A, B, C, k = _ray_tables(verts_cam, tris)
    scale = float(np.abs(k).max() + 1e-30)
    A32 = (A / scale).astype(np.float32)
    B32 = (B / scale).astype(np.float32)
    C32 = (C / scale).astype(np.float32)
    k32 = (k / scale).astype(np.float32)
    d32 = dirs.astype(np.float32)
    n = len(dirs)
    t_min = np.full(n, np.inf)
    chunk = max(1, int(6e6) // max(len(k), 1))
    tol = np.float32(1e-6)
    for s in range(0, n, chunk):
        d = d32[s : s + chunk]
        det = d @ A32.T
        good = np.abs(det) > tol
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            inv_det = np.where(good, np.float32(1.0) / det, np.float32(0.0))
            uu = (d @ B32.T) * inv_det
            vv = (d @ C32.T) * inv_det
            tt = k32[None, :] * inv_det
        hit = good & (uu >= -tol) & (vv >= -tol) & (uu + vv <= 1 + tol) & (tt > 0)
        tt = np.where(hit, tt, np.float32(np.inf))
        t_min[s : s + chunk] = tt.min(axis=1).astype(np.float64)
    return t_min


def _apply_mask_noise_and_occluder(mask: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    out = mask
    if config.noise_mask > 0:
        out = ndimage.binary_erosion(out, iterations=int(config.noise_mask))
    if config.occluder is not None:
        poly = np.asarray(config.occluder, dtype=np.float64).reshape(-1, 2)
        H, W = mask.shape
        gx, gy = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
        out = out & ~_points_in_polygon(gx, gy, poly)
    return out


def _points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorized over a pixel grid."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < x_at)
    return inside


def _random_unit(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _perturb_descriptors(desc: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate each unit descriptor by a folded-normal angle toward a random
    orthogonal direction (great-circle step on the hypersphere)."""
    if sigma == 0:
        return desc
    n, d = desc.shape
    ang = np.abs(rng.normal(0.0, sigma, size=n))[:, None]
    u = rng.standard_normal((n, d))
    u -= (u * desc).sum(axis=1, keepdims=True) * desc
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    out = desc * np.cos(ang) + u * np.sin(ang)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _random_rot_quats(rng: np.random.Generator, n: int, sigma: float | None) -> np.ndarray:
    """Uniform-axis rotation noise quaternions; folded-normal angle when sigma
    is given, else Haar-uniform rotations."""
    if sigma is not None:
        axis = _random_unit(rng, (n, 3))
        ang = np.abs(rng.normal(0.0, sigma, size=n))[:, None]
        return np.concatenate([np.cos(ang / 2), axis * np.sin(ang / 2)], axis=1)
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _geometric_mask_and_hits(
    model: SymModel, camera: CameraIntrinsics, pose: Pose
) -> tuple[np.ndarray, np.ndarray]:
    zbuf, hit_obj = rasterize(model.mesh, camera, pose)
    center_mask = np.isfinite(zbuf)
    if not center_mask.any():
        raise ObjectOutOfFrame("object does not cover any pixel")
    extra_mask, extra_hit = _boundary_coverage(model.mesh, camera, pose, center_mask)
    hit_obj = np.where(extra_mask[..., None], extra_hit, hit_obj)
    return center_mask | extra_mask, hit_obj


def render(model: SymModel, config: ScenarioConfig) -> Observation:
    """Rasterize the scenario and synthesize the per-pixel fields."""
    cam = config.camera
    geo_mask, hit_obj = _geometric_mask_and_hits(model, cam, config.gt_pose)
    mask = _apply_mask_noise_and_occluder(geo_mask, config)
    if not mask.any():
        raise EmptyMaskAfterOcclusion("no mask pixels remain after occlusion")

    H, W = mask.shape
    ys, xs = np.nonzero(mask)
    n = len(ys)
    rng = np.random.default_rng(config.seed)

    point_index = np.full((H, W), -1, dtype=np.int32)
    idx = model.nearest_point(hit_obj[ys, xs]).astype(np.int32)
    point_index[ys, xs] = idx

    desc = model.descriptors[idx]
    desc = _perturb_descriptors(desc, config.noise_desc, rng)

    gt_q = config.gt_pose.rotation.quat
    frame_q = quat_mul(np.broadcast_to(gt_q, (n, 4)), quat_conj(model.frame_quats[idx]))
    if config.noise_frame > 0:
        noise = _random_rot_quats(rng, n, config.noise_frame)
        frame_q = quat_mul(noise, frame_q)

    if config.outlier_rate > 0:
        n_out = int(round(config.outlier_rate * n))
        if n_out:
            sel = rng.choice(n, size=n_out, replace=False)
            desc[sel] = _random_unit(rng, (n_out, model.descriptor_dim))
            frame_q[sel] = _random_rot_quats(rng, n_out, None)

    descriptors = np.zeros((H, W, model.descriptor_dim))
    descriptors[ys, xs] = desc
    frame_quats = np.zeros((H, W, 4))
    frame_quats[..., 0] = 1.0
    frame_quats[ys, xs] = frame_q

    hit = np.zeros((H, W, 3))
    hit[ys, xs] = hit_obj[ys, xs]
    return Observation(
        mask=mask,
        descriptors=descriptors,
        frame_quats=frame_quats,
        point_index=point_index,
        hit_points=hit,
        gt_pose=config.gt_pose,
        camera=cam,
        config=config,
    )


def render_mask_only(
    model: SymModel,
    camera: CameraIntrinsics,
    pose: Pose,
    noise_mask: int = 0,
    occluder=None,
) -> np.ndarray:
    """The mask channel of `render`, on the same rasterization path."""
    geo_mask, _ = _geometric_mask_and_hits(model, camera, pose)
    cfg = ScenarioConfig(camera, pose, noise_mask=noise_mask, occluder=occluder)
    mask = _apply_mask_noise_and_occluder(geo_mask, cfg)
    if not mask.any():
        raise EmptyMaskAfterOcclusion("no mask pixels remain after occlusion")
    return mask


# ---------------------------------------------------------------------------
# Visibility
# ---------------------------------------------------------------------------

def visible_points(model: SymModel, camera: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Indices of model points not self-occluded under the pose.

    A point is visible when no mesh triangle intersects the camera ray to it
    closer than the point itself (tolerance 1e-4 of the object diameter).
    Points behind the camera are never visible. Purely geometric: points
    projecting outside the crop are still reported.
    """
    pts_cam = pose.apply(model.points)
    tvis = _ray_visibility(pts_cam, pose.apply(model.mesh.vertices), model.mesh.triangles,
                           eps=1e-4 * model.diameter)
    return np.nonzero(tvis)[0]


def _ray_visibility(pts_cam: np.ndarray, verts_cam: np.ndarray, tris: np.ndarray, eps: float) -> np.ndarray:
    """Moller-Trumbore occlusion test from the origin to each point."""
    dist = np.linalg.norm(pts_cam, axis=1)
    ok = pts_cam[:, 2] > 0
    dirs = pts_cam / np.maximum(dist, 1e-300)[:, None]
    t_min = _ray_first_hit(dirs, verts_cam, tris)
    return ok & (t_min >= dist - eps)
