"""Rotation and camera algebra used by every other module.

Rotations are stored as unit quaternions (w, x, y, z) and exposed in three
interchangeable forms: 3x3 matrix, quaternion, and angle-axis vector (the
vector's direction is the rotation axis, its magnitude the angle in radians).
Quaternions are the internal composition representation; angle-axis is the
canonical external/serialized one.

All values are immutable; every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Rotation",
    "Pose",
    "CameraIntrinsics",
    "NonPositiveDepth",
    "d_ang",
    "compose_frames",
    "project",
    "project_points",
    "allo_to_ego",
    "ego_to_allo",
    "quat_mul",
    "quat_conj",
    "quat_rotate",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_to_rotvec",
    "rotvec_to_quat",
    "d_ang_quat",
    "random_rotations",
    "align_z_to",
]


class NonPositiveDepth(ValueError):
    """Raised when a point to be projected has camera depth <= 0."""


# ---------------------------------------------------------------------------
# Batch quaternion helpers. Quaternions are (..., 4) arrays, scalar first.
# ---------------------------------------------------------------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b; composing rotations so that (a*b) acts as a∘b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def _normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Component-wise cross product; avoids np.cross's dispatch overhead."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply rotation q to 3-vectors v (broadcasting over leading dims)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * cross3(qv, v)
    return v + w * t + cross3(qv, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = _normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def _matrix_to_quat_scalar(m: np.ndarray) -> np.ndarray:
    m00, m01, m02 = m[0]
    m10, m11, m12 = m[1]
    m20, m21, m22 = m[2]
    t = (1.0 + m00 + m11 + m22, 1.0 + m00 - m11 - m22,
         1.0 - m00 + m11 - m22, 1.0 - m00 - m11 + m22)
    c = max(range(4), key=t.__getitem__)
    s = 2.0 * np.sqrt(max(t[c], 1e-300))
    if c == 0:
        q = (s / 4.0, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
    elif c == 1:
        q = ((m21 - m12) / s, s / 4.0, (m01 + m10) / s, (m02 + m20) / s)
    elif c == 2:
        q = ((m02 - m20) / s, (m01 + m10) / s, s / 4.0, (m12 + m21) / s)
    else:
        q = ((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, s / 4.0)
    out = np.array(q)
    if out[0] < 0:
        out = -out
    return out / np.linalg.norm(out)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method: branch on the numerically dominant component."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 2:
        return _matrix_to_quat_scalar(m)
    single = m.ndim == 2
    m = m.reshape((-1, 3, 3))
    n = m.shape[0]
    q = np.empty((n, 4), dtype=np.float64)

    t = np.stack(
        [
            1.0 + m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2],
            1.0 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2],
            1.0 - m[:, 0, 0] + m[:, 1, 1] - m[:, 2, 2],
            1.0 - m[:, 0, 0] - m[:, 1, 1] + m[:, 2, 2],
        ],
        axis=1,
    )
    choice = np.argmax(t, axis=1)
    s = 2.0 * np.sqrt(np.maximum(t[np.arange(n), choice], 1e-300))

    for c in range(4):
        idx = choice == c
        if not np.any(idx):
            continue
        mi, si = m[idx], s[idx]
        if c == 0:
            comps = [
                si / 4.0,
                (mi[:, 2, 1] - mi[:, 1, 2]) / si,
                (mi[:, 0, 2] - mi[:, 2, 0]) / si,
                (mi[:, 1, 0] - mi[:, 0, 1]) / si,
            ]
        elif c == 1:
            comps = [
                (mi[:, 2, 1] - mi[:, 1, 2]) / si,
                si / 4.0,
                (mi[:, 0, 1] + mi[:, 1, 0]) / si,
                (mi[:, 0, 2] + mi[:, 2, 0]) / si,
            ]
        elif c == 2:
            comps = [
                (mi[:, 0, 2] - mi[:, 2, 0]) / si,
                (mi[:, 0, 1] + mi[:, 1, 0]) / si,
                si / 4.0,
                (mi[:, 1, 2] + mi[:, 2, 1]) / si,
            ]
        else:
            comps = [
                (mi[:, 1, 0] - mi[:, 0, 1]) / si,
                (mi[:, 0, 2] + mi[:, 2, 0]) / si,
                (mi[:, 1, 2] + mi[:, 2, 1]) / si,
                si / 4.0,
            ]
        q[idx] = np.stack(comps, axis=1)

    q[q[:, 0] < 0] *= -1.0
    q = _normalize(q)
    return q[0] if single else q


def rotvec_to_quat(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    angle = np.linalg.norm(r, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle[..., 0] < 1e-8
    # sin(half)/angle with series fallback near zero
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(angle > 0, np.sin(half) / np.where(angle > 0, angle, 1.0), 0.5)
    k = np.where(small[..., None], 0.5 - angle * angle / 48.0, k)
    q = np.concatenate([np.cos(half), r * k], axis=-1)
    return _normalize(q)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = _normalize(q)
    q = np.where(q[..., :1] < 0, -q, q)
    sin_half = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(sin_half[..., 0], q[..., 0])[..., None]
    small = sin_half[..., 0] < 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(sin_half > 0, angle / np.where(sin_half > 0, sin_half, 1.0), 2.0)
    scale = np.where(small[..., None], 2.0 + angle * angle / 12.0, scale)
    return q[..., 1:] * scale


def d_ang_quat(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Relative rotation angle in [0, pi] between quaternion arrays.

    Uses atan2 on the relative quaternion rather than arccos of the dot
    product: accurate at both ends of the range (the dot-product form loses
    ~sqrt(eps) precision near 0).
    """
    rel = quat_mul(quat_conj(qa), qb)
    return 2.0 * np.arctan2(np.linalg.norm(rel[..., 1:], axis=-1), np.abs(rel[..., 0]))


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """n uniform (Haar) random rotations as quaternions."""
    q = rng.standard_normal((n, 4))
    return _normalize(q)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rotation:
    """An element of SO(3). Construct via the from_* classmethods."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        q = _normalize(np.asarray(self.quat, dtype=np.float64).reshape(4))
        if q[0] < 0:
            q = -q
        q.setflags(write=False)
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_quat(cls, q) -> "Rotation":
        return cls(np.asarray(q, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        return cls(matrix_to_quat(np.asarray(m, dtype=np.float64)))

    @classmethod
    def from_rotvec(cls, r) -> "Rotation":
        return cls(rotvec_to_quat(np.asarray(r, dtype=np.float64).reshape(3)))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        return cls.from_rotvec(axis * float(angle))

    def as_quat(self) -> np.ndarray:
        return self.quat.copy()

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def as_rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.quat)

    def inverse(self) -> "Rotation":
        return Rotation(quat_conj(self.quat))

    def compose(self, other: "Rotation") -> "Rotation":
        """self ∘ other (apply `other` first)."""
        return Rotation(quat_mul(self.quat, other.quat))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return quat_rotate(self.quat, np.asarray(v, dtype=np.float64))

    def angle_to(self, other: "Rotation") -> float:
        return float(d_ang_quat(self.quat, other.quat))

    def __repr__(self) -> str:  # pragma: no cover
        w, x, y, z = self.quat
        return f"Rotation(quat=[{w:.6f}, {x:.6f}, {y:.6f}, {z:.6f}])"


@dataclass(frozen=True)
class Pose:
    """Rigid transform from object frame to camera frame: X_cam = R X + t."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return self.rotation.apply(pts) + self.translation

    def compose_rotation(self, s: Rotation) -> "Pose":
        """Pose acting as self ∘ s on object points (same translation)."""
        return Pose(self.rotation @ s, self.translation)

    def inverse_apply(self, pts_cam: np.ndarray) -> np.ndarray:
        return self.rotation.inverse().apply(np.asarray(pts_cam) - self.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def d_ang(a: Rotation, b: Rotation) -> float:
    """Distance between two rotations: the relative rotation angle, in [0, pi]."""
    return a.angle_to(b)


def compose_frames(cam_from_local: Rotation, local_from_object: Rotation) -> Rotation:
    """Chain a camera-from-local-frame and local-frame-from-object rotation."""
    return cam_from_local @ local_from_object


def project(K: CameraIntrinsics, pose: Pose, X: np.ndarray) -> np.ndarray:
    """Pinhole projection of object point X under pose; raises on depth <= 0."""
    p = pose.apply(np.asarray(X, dtype=np.float64).reshape(3))
    if p[2] <= 0:
        raise NonPositiveDepth(f"point projects behind the camera (z={p[2]:.6g})")
    return np.array([K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy])


def project_points(K: CameraIntrinsics, pose: Pose, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batch projection: returns (uv (N,2), depth (N,)). No depth guard."""
    p = pose.apply(np.asarray(X, dtype=np.float64).reshape(-1, 3))
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * p[:, 0] / z + K.cx, K.fy * p[:, 1] / z + K.cy], axis=1)
    return uv, z


def align_z_to(ray: np.ndarray) -> Rotation:
    """Minimal rotation taking the optical axis (0,0,1) to `ray` (zero roll)."""
    v = np.asarray(ray, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if n == 0 or v[2] <= 0:
        raise ValueError("ray must have a positive z (depth) component")
    v = v / n
    z = np.array([0.0, 0.0, 1.0])
    c = np.cross(z, v)
    s = np.linalg.norm(c)
    if s < 1e-15:
        return Rotation.identity()
    axis = c / s
    angle = np.arctan2(s, v[2])
    return Rotation.from_axis_angle(axis, angle)


def allo_to_ego(allocentric: Rotation, ray_to_object_center: np.ndarray) -> Rotation:
    """Convert a viewing-ray-relative (allocentric) rotation to camera axes."""
    return align_z_to(ray_to_object_center) @ allocentric


def ego_to_allo(egocentric: Rotation, ray_to_object_center: np.ndarray) -> Rotation:
    """Inverse of allo_to_ego for the same viewing ray."""
    return align_z_to(ray_to_object_center).inverse() @ egocentric
