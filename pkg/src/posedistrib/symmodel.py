"""Discretized symmetry-aware object models.

A model is an evenly sampled surface point cloud where each point carries a
unit descriptor and a local-frame rotation. Both fields are constructed
analytically from the declared symmetry so that they are exact fixed points
of the consistency objectives a learned system would converge to:

* symmetric surface points share descriptors exactly, because descriptors
  embed symmetry-quotient coordinates;
* local frames are symmetry-equivariant exactly: frame(S·X) = frame(X)·S^-1
  for every group element S.

Sampling is symmetry-closed: discrete n-fold models sample one point per
orbit and replicate it with the group, continuous models sample whole rings
around the axis, so looking up the image of a symmetric counterpart always
lands on a point with identical quotient coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .meshes import DegenerateMesh, MarkerRegion, TriMesh
from .rotkit import Rotation, d_ang_quat, quat_conj, quat_mul

__all__ = [
    "SymmetrySpec",
    "SymModel",
    "DescriptorEmbedding",
    "OnAxisPoint",
    "EmptyMask",
    "sample_surface",
    "canonical_descriptor",
    "canonical_local_frame",
    "build_symmodel",
    "eval_losses",
]

MAX_MODEL_POINTS = 50_000
AXIS_EXCLUSION_FRACTION = 1e-6  # of diameter; local frames degenerate on the axis
DESCRIPTOR_LENGTHSCALE_SPACINGS = 1.5  # RFF kernel width, in units of point spacing


class OnAxisPoint(ValueError):
    """Local frame requested for a point on the symmetry axis."""


class EmptyMask(ValueError):
    """An operation needed mask pixels but none were available."""


@dataclass(frozen=True)
class SymmetrySpec:
    """Proper symmetry group of an object: trivial, n-fold discrete, or axial.

    `axis` must be unit-norm; it is ignored for asymmetric objects.
    """

    kind: str  # "asymmetric" | "discrete" | "continuous"
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    n: int = 1

    def __post_init__(self):
        if self.kind not in ("asymmetric", "discrete", "continuous"):
            raise ValueError(f"unknown symmetry kind {self.kind!r}")
        a = np.asarray(self.axis, dtype=np.float64)
        norm = np.linalg.norm(a)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("symmetry axis must be unit-norm")
        if self.kind == "discrete" and self.n < 2:
            raise ValueError("discrete symmetry needs fold count n >= 2")

    @property
    def axis_vec(self) -> np.ndarray:
        return np.asarray(self.axis, dtype=np.float64)

    @property
    def order(self) -> int:
        """Group order for the discretized representation (1 for asymmetric)."""
        return self.n if self.kind == "discrete" else 1

    def group_rotations(self, continuous_step_deg: float = 1.0) -> list[Rotation]:
        """The symmetry group, discretizing a continuous axis at the given step."""
        if self.kind == "asymmetric":
            return [Rotation.identity()]
        if self.kind == "discrete":
            return [
                Rotation.from_axis_angle(self.axis_vec, 2 * np.pi * i / self.n)
                for i in range(self.n)
            ]
        steps = max(1, int(round(360.0 / continuous_step_deg)))
        return [
            Rotation.from_axis_angle(self.axis_vec, 2 * np.pi * i / steps)
            for i in range(steps)
        ]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "axis": [float(x) for x in self.axis], "n": int(self.n)}

    @classmethod
    def from_dict(cls, d: dict) -> "SymmetrySpec":
        return cls(kind=d["kind"], axis=tuple(d.get("axis", (0, 0, 1))), n=int(d.get("n", 1)))


# ---------------------------------------------------------------------------
# Quotient coordinates and the descriptor embedding
# ---------------------------------------------------------------------------

def _axis_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal pair perpendicular to `axis`."""
    probe = np.array([1.0, 0.0, 0.0])
    if abs(axis @ probe) > 0.9:
        probe = np.array([0.0, 1.0, 0.0])
    e1 = probe - (probe @ axis) * axis
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def _cylindrical(symmetry: SymmetrySpec, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = symmetry.axis_vec
    e1, e2 = _axis_basis(a)
    h = pts @ a
    rho = pts - h[:, None] * a
    r = np.linalg.norm(rho, axis=1)
    theta = np.arctan2(rho @ e2, rho @ e1)
    return r, h, theta


def quotient_coords(symmetry: SymmetrySpec, pts: np.ndarray, angular_scale: float) -> np.ndarray:
    """Coordinates invariant under the declared symmetry group.

    Discrete n-fold: (r, h, cos(n theta), sin(n theta)) with the angular pair
    scaled to arc-length units so one kernel lengthscale fits all coordinates.
    Continuous: (r, h). Asymmetric: the point itself.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if symmetry.kind == "asymmetric":
        return pts.copy()
    r, h, theta = _cylindrical(symmetry, pts)
    if symmetry.kind == "continuous":
        return np.stack([r, h], axis=1)
    n = symmetry.n
    s = angular_scale / n
    return np.stack([r, h, s * np.cos(n * theta), s * np.sin(n * theta)], axis=1)


@dataclass(frozen=True)
class DescriptorEmbedding:
    """Seeded random Fourier feature map onto the unit sphere in R^dim."""

    weights: np.ndarray  # (dim, m)
    phases: np.ndarray   # (dim,)

    @classmethod
    def create(cls, dim: int, n_coords: int, lengthscale: float, seed: int) -> "DescriptorEmbedding":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((dim, n_coords)) / lengthscale
        b = rng.uniform(0.0, 2 * np.pi, size=dim)
        return cls(w, b)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def embed(self, coords: np.ndarray) -> np.ndarray:
        feats = np.cos(coords @ self.weights.T + self.phases)
        return feats / np.linalg.norm(feats, axis=-1, keepdims=True)


def canonical_descriptor(
    symmetry: SymmetrySpec,
    X: np.ndarray,
    embedding: DescriptorEmbedding,
    angular_scale: float = 1.0,
) -> np.ndarray:
    """Unit descriptor embedding the symmetry-quotient coordinates of X."""
    coords = quotient_coords(symmetry, X, angular_scale)
    out = embedding.embed(coords)
    return out[0] if np.asarray(X).ndim == 1 else out


# ---------------------------------------------------------------------------
# Local frames
# ---------------------------------------------------------------------------

def _frames_for(symmetry: SymmetrySpec, pts: np.ndarray, diameter: float) -> np.ndarray:
    """Local-frame quaternions R_(L_X <- O) for each point (rows are axes)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if symmetry.kind == "asymmetric":
        return np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    a = symmetry.axis_vec
    h = pts @ a
    rho = pts - h[:, None] * a
    r = np.linalg.norm(rho, axis=1)
    if np.any(r < AXIS_EXCLUSION_FRACTION * diameter):
        raise OnAxisPoint("local frame undefined within the axis exclusion zone")
    x = rho / r[:, None]
    z = np.broadcast_to(a, x.shape)
    y = np.cross(z, x)
    mats = np.stack([x, y, z], axis=1)  # rows: frame axes in object coords
    from .rotkit import matrix_to_quat

    return matrix_to_quat(mats)


def canonical_local_frame(symmetry: SymmetrySpec, X: np.ndarray, diameter: float = 1.0) -> Rotation:
    """Frame with z along the symmetry axis and x along the radial direction.

    Identity for asymmetric objects. Exactly equivariant: for S = rot(axis, t),
    frame(S·X) = frame(X)·S^-1.
    """
    q = _frames_for(symmetry, np.asarray(X, dtype=np.float64).reshape(1, 3), diameter)
    return Rotation.from_quat(q[0])


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------

def _area_uniform_candidates(mesh: TriMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise DegenerateMesh("mesh has zero surface area")
    tri = rng.choice(len(areas), size=count, p=areas / total)
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def _farthest_point_subset(
    candidates: np.ndarray, count: int, rng: np.random.Generator, images=None
) -> np.ndarray:
    """Greedy farthest-point selection; `images` maps a point to its orbit
    (list of transforms) for quotient-metric selection."""
    m = len(candidates)
    count = min(count, m)
    start = int(rng.integers(m))
    mind = np.full(m, np.inf)
    chosen = np.empty(count, dtype=np.int64)
    last = start
    for i in range(count):
        chosen[i] = last
        p = candidates[last]
        orbit = [p] if images is None else images(p)
        for img in orbit:
            d = ((candidates - img) ** 2).sum(1)
            np.minimum(mind, d, out=mind)
        last = int(np.argmax(mind))
    return chosen


def sample_surface(mesh: TriMesh, max_points: int, seed: int) -> np.ndarray:
    """Evenly spaced surface points: area-uniform candidates thinned by
    farthest-point selection. Deterministic for a given seed."""
    if max_points <= 0:
        raise ValueError("max_points must be positive")
    rng = np.random.default_rng(seed)
    n_cand = min(max(8 * max_points, 1000), 500_000)
    cand = _area_uniform_candidates(mesh, n_cand, rng)
    if max_points >= len(cand):
        return cand
    idx = _farthest_point_subset(cand, max_points, rng)
    return cand[idx]


def _sample_discrete(
    mesh: TriMesh, symmetry: SymmetrySpec, max_points: int, rng: np.random.Generator, diameter: float
) -> tuple[np.ndarray, np.ndarray]:
    """Orbit-closed sampling: FPS in the quotient metric, replicate by group.

    Returns (points (n*g, 3), orbit_root (n*g,) index of each point's root).
    """
    g = symmetry.n
    per_orbit = max(1, max_points // g)
    n_cand = min(max(8 * per_orbit * g, 1000), 500_000)
    cand = _area_uniform_candidates(mesh, n_cand, rng)
    r, _, _ = _cylindrical(symmetry, cand)
    cand = cand[r > AXIS_EXCLUSION_FRACTION * diameter]
    group = [S.as_matrix() for S in symmetry.group_rotations()]

    def images(p):
        return [m @ p for m in group]

    roots_idx = _farthest_point_subset(cand, per_orbit, rng, images=images)
    roots = cand[roots_idx]
    pts = np.concatenate([roots @ m.T for m in group], axis=0)
    root_of = np.tile(np.arange(len(roots)), g)
    return pts, root_of


def _sample_continuous(
    mesh: TriMesh, symmetry: SymmetrySpec, max_points: int, rng: np.random.Generator, diameter: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ring (lathe) sampling for surfaces of revolution.

    Rings are actual surface points swept about the axis; each ring carries at
    least m_min points so that the angular gap stays within the frame
    consistency tolerance. Rings too close to the axis to hold m_min points at
    reasonable spacing are dropped.

    Returns (points, ring_id per point, ring_root_index per ring).
    """
    area = mesh.area
    if area <= 0:
        raise DegenerateMesh("mesh has zero surface area")
    spacing = float(np.sqrt(2.0 * area / (np.sqrt(3.0) * max_points)))

    for _ in range(3):
        m_min = int(np.ceil(1.15 * np.pi * diameter / (2.0 * spacing)))
        r_keep = 0.6 * spacing * m_min / (2.0 * np.pi)
        n_cand = min(max(40 * int(area / spacing**2), 2000), 300_000)
        cand = _area_uniform_candidates(mesh, n_cand, rng)
        r, h, _ = _cylindrical(symmetry, cand)
        keep = r >= r_keep
        cand, r, h = cand[keep], r[keep], h[keep]
        if len(cand) == 0:
            raise DegenerateMesh("no surface remains outside the axis exclusion zone")
        # FPS in the quotient (profile) plane picks the ring roots
        rh = np.stack([r, h], axis=1)
        n_rings_cap = max(2, int(2.2 * np.sqrt(area) / spacing * 4))
        mind = np.full(len(cand), np.inf)
        order = []
        last = int(rng.integers(len(cand)))
        while True:
            order.append(last)
            d = ((rh - rh[last]) ** 2).sum(1)
            np.minimum(mind, d, out=mind)
            nxt = int(np.argmax(mind))
            if mind[nxt] < (0.95 * spacing) ** 2 or len(order) >= n_rings_cap:
                break
            last = nxt
        ring_roots = np.array(order, dtype=np.int64)
        m_ring = np.maximum(np.round(2 * np.pi * r[ring_roots] / spacing).astype(int), m_min)
        total = int(m_ring.sum())
        if total <= max_points:
            break
        spacing *= float(np.sqrt(total / max_points)) * 1.02

    axis = symmetry.axis_vec
    pts_list, ring_id = [], []
    for k, root in enumerate(ring_roots):
        m = int(m_ring[k])
        phase = rng.uniform(0.0, 2 * np.pi)
        angles = phase + 2 * np.pi * np.arange(m) / m
        rots = np.stack([_axis_rotation_matrix(axis, a) for a in angles])
        pts_list.append(np.einsum("mij,j->mi", rots, cand[root]))
        ring_id.append(np.full(m, k))
    return np.concatenate(pts_list), np.concatenate(ring_id), ring_roots


def _axis_rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    ax = np.asarray(axis, dtype=np.float64)
    K = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
    return c * np.eye(3) + s * K + (1 - c) * np.outer(ax, ax)


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------

class SymModel:
    """Point cloud + descriptor field + local-frame field + symmetry."""

    def __init__(
        self,
        points: np.ndarray,
        descriptors: np.ndarray,
        frame_quats: np.ndarray,
        symmetry: SymmetrySpec,
        mesh: TriMesh,
        seed: int,
        embedding: DescriptorEmbedding,
        marker: MarkerRegion | None = None,
        marker_embedding: DescriptorEmbedding | None = None,
        angular_scale: float = 1.0,
    ):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.descriptors = np.ascontiguousarray(descriptors, dtype=np.float64)
        self.frame_quats = np.ascontiguousarray(frame_quats, dtype=np.float64)
        self.symmetry = symmetry
        self.mesh = mesh
        self.seed = int(seed)
        self.embedding = embedding
        self.marker = marker
        self.marker_embedding = marker_embedding
        self.angular_scale = float(angular_scale)
        if len(self.points) > MAX_MODEL_POINTS:
            raise ValueError(f"model exceeds {MAX_MODEL_POINTS} points")
        self._kdtree: cKDTree | None = None
        self._spacing: float | None = None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def diameter(self) -> float:
        return self.mesh.diameter

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]

    @property
    def kdtree(self) -> cKDTree:
        if self._kdtree is None:
            self._kdtree = cKDTree(self.points)
        return self._kdtree

    @property
    def spacing(self) -> float:
        """Median nearest-neighbor distance of the sampled points."""
        if self._spacing is None:
            d, _ = self.kdtree.query(self.points, k=2)
            self._spacing = float(np.median(d[:, 1]))
        return self._spacing

    def nearest_point(self, X: np.ndarray) -> np.ndarray:
        """Index of the nearest sampled point for each query point."""
        _, idx = self.kdtree.query(np.asarray(X, dtype=np.float64))
        return idx

    def frame(self, index: int) -> Rotation:
        return Rotation.from_quat(self.frame_quats[index])


def build_symmodel(
    mesh: TriMesh,
    symmetry: SymmetrySpec,
    max_points: int = MAX_MODEL_POINTS,
    descriptor_dim: int = 12,
    seed: int = 0,
    marker: MarkerRegion | None = None,
) -> SymModel:
    """Assemble sampling, descriptor field, and local-frame field.

    With `marker`, points inside the region get descriptors from an
    independent position embedding, modeling a disambiguating texture patch
    on an otherwise symmetric object.
    """
    if max_points > MAX_MODEL_POINTS:
        raise ValueError(f"max_points may not exceed {MAX_MODEL_POINTS}")
    diameter = mesh.diameter
    rng = np.random.default_rng(seed)

    if symmetry.kind == "discrete":
        pts, root_of = _sample_discrete(mesh, symmetry, max_points, rng, diameter)
    elif symmetry.kind == "continuous":
        pts, ring_id, _ = _sample_continuous(mesh, symmetry, max_points, rng, diameter)
    else:
        pts = sample_surface_with_rng(mesh, max_points, rng)

    # point spacing estimate for the descriptor kernel width
    tree = cKDTree(pts)
    dnn, _ = tree.query(pts, k=2)
    spacing = float(np.median(dnn[:, 1]))
    lengthscale = DESCRIPTOR_LENGTHSCALE_SPACINGS * spacing

    r_med = 1.0
    if symmetry.kind == "discrete":
        r, _, _ = _cylindrical(symmetry, pts)
        r_med = float(np.median(r))
    n_coords = {"asymmetric": 3, "discrete": 4, "continuous": 2}[symmetry.kind]
    embedding = DescriptorEmbedding.create(descriptor_dim, n_coords, lengthscale, seed)

    if symmetry.kind == "discrete":
        # compute per orbit root, tile exactly over the group
        n_roots = int(root_of.max()) + 1
        root_pts = pts[:n_roots]
        root_desc = canonical_descriptor(symmetry, root_pts, embedding, angular_scale=r_med)
        descriptors = np.tile(root_desc, (symmetry.n, 1))
        frames = _frames_for(symmetry, pts, diameter)
    elif symmetry.kind == "continuous":
        uniq = np.unique(ring_id)
        ring_first = np.searchsorted(ring_id, uniq)  # rings are contiguous
        ring_desc = canonical_descriptor(symmetry, pts[ring_first], embedding)
        descriptors = ring_desc[ring_id]
        frames = _frames_for(symmetry, pts, diameter)
    else:
        descriptors = canonical_descriptor(symmetry, pts, embedding)
        frames = _frames_for(symmetry, pts, diameter)

    marker_embedding = None
    if marker is not None:
        marker_embedding = DescriptorEmbedding.create(descriptor_dim, 3, lengthscale, seed + 1)
        inside = marker.contains(pts)
        if np.any(inside):
            descriptors = descriptors.copy()
            descriptors[inside] = marker_embedding.embed(pts[inside])

    return SymModel(
        pts, descriptors, frames, symmetry, mesh, seed, embedding,
        marker=marker, marker_embedding=marker_embedding, angular_scale=r_med,
    )


def sample_surface_with_rng(mesh: TriMesh, max_points: int, rng: np.random.Generator) -> np.ndarray:
    n_cand = min(max(8 * max_points, 1000), 500_000)
    cand = _area_uniform_candidates(mesh, n_cand, rng)
    if max_points >= len(cand):
        return cand
    return cand[_farthest_point_subset(cand, max_points, rng)]


# ---------------------------------------------------------------------------
# Training-objective evaluation on observations
# ---------------------------------------------------------------------------

def sim_desc_all(model: SymModel, pixel_descriptors: np.ndarray) -> np.ndarray:
    """Log-softmax similarity of each pixel descriptor against all model
    points: sim[i, j] = d_ij - logsumexp_j(d_ij) with d the dot products."""
    sims = np.empty((len(pixel_descriptors), len(model)), dtype=np.float64)
    chunk = max(1, int(2e7) // max(len(model), 1))
    for s in range(0, len(pixel_descriptors), chunk):
        block = pixel_descriptors[s : s + chunk] @ model.descriptors.T
        m = block.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(block - m).sum(axis=1, keepdims=True))
        sims[s : s + chunk] = block - lse
    return sims


def eval_losses(model: SymModel, observations) -> tuple[float, float]:
    """Descriptor InfoNCE loss and local-frame angular loss over observations.

    Both are averaged over all mask pixels of all observations. The descriptor
    loss is the negated mean log-softmax of the true point's similarity; the
    frame loss is the mean angular distance between the ground-truth rotation
    and the composed per-pixel camera-from-local and local-from-object frames.
    """
    desc_terms: list[np.ndarray] = []
    frame_terms: list[np.ndarray] = []
    for obs in observations:
        ys, xs = np.nonzero(obs.mask)
        if len(ys) == 0:
            raise EmptyMask("observation has no mask pixels")
        h_idx = obs.point_index[ys, xs]
        pix_desc = obs.descriptors[ys, xs]
        sims = sim_desc_all(model, pix_desc)
        desc_terms.append(-sims[np.arange(len(h_idx)), h_idx])

        composed = quat_mul(obs.frame_quats[ys, xs], model.frame_quats[h_idx])
        gt = obs.gt_pose.rotation.quat
        frame_terms.append(d_ang_quat(np.broadcast_to(gt, composed.shape), composed))
    l_desc = float(np.mean(np.concatenate(desc_terms)))
    l_lf = float(np.mean(np.concatenate(frame_terms)))
    return l_desc, l_lf
