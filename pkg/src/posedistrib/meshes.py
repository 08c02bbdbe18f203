"""Triangle meshes: bundled primitives, ASCII PLY I/O, and geometry helpers.

All bundled primitives are watertight, centered on the object-frame origin,
and sized in meters. Objects with a declared rotational symmetry have the
symmetry axis along +z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TriMesh",
    "DegenerateMesh",
    "MarkerRegion",
    "cylinder_mesh",
    "hex_prism_mesh",
    "cube_with_corner_mesh",
    "prism_with_marker",
    "uv_sphere_mesh",
    "load_ply",
    "save_ply",
]


class DegenerateMesh(ValueError):
    """Raised when a mesh has no usable surface area."""


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray   # (V, 3) float64, meters
    triangles: np.ndarray  # (T, 3) int32 indices

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def diameter(self) -> float:
        """Max pairwise vertex distance."""
        v = self.vertices
        if len(v) > 600:
            from scipy.spatial import ConvexHull

            v = v[ConvexHull(v).vertices]
        d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = (v[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


@dataclass(frozen=True)
class MarkerRegion:
    """Axis-aligned box (object frame) selecting descriptor-override points."""

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        d = np.abs(pts - np.asarray(self.center))
        return np.all(d <= np.asarray(self.half_extents), axis=1)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def _close_fan(center_idx: int, ring: np.ndarray, flip: bool) -> np.ndarray:
    n = len(ring)
    tris = []
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        tris.append([center_idx, b, a] if flip else [center_idx, a, b])
    return np.array(tris, dtype=np.int32)


def cylinder_mesh(radius: float = 0.05, height: float = 0.12, segments: int = 96) -> TriMesh:
    """Closed cylinder, axis +z, centered at the origin."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2)], axis=1)
    bot = np.concatenate([ring, np.full((segments, 1), -height / 2)], axis=1)
    verts = [top, bot, [[0, 0, height / 2]], [[0, 0, -height / 2]]]
    v = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1, 3) for x in verts])
    it, ib = np.arange(segments), np.arange(segments) + segments
    ctop, cbot = 2 * segments, 2 * segments + 1
    side = []
    for i in range(segments):
        j = (i + 1) % segments
        side.append([it[i], ib[i], ib[j]])
        side.append([it[i], ib[j], it[j]])
    tris = np.concatenate(
        [
            np.array(side, dtype=np.int32),
            _close_fan(ctop, it, flip=False),
            _close_fan(cbot, ib, flip=True),
        ]
    )
    return TriMesh(v, tris)


def _prism_mesh(n_sides: int, circumradius: float, height: float) -> TriMesh:
    # one face normal along +x: vertices at angles offset by pi/n
    ang = 2 * np.pi * np.arange(n_sides) / n_sides + np.pi / n_sides
    ring = np.stack([circumradius * np.cos(ang), circumradius * np.sin(ang)], axis=1)
    top = np.concatenate([ring, np.full((n_sides, 1), height / 2)], axis=1)
    bot = np.concatenate([ring, np.full((n_sides, 1), -height / 2)], axis=1)
    v = np.concatenate([top, bot, [[0, 0, height / 2]], [[0, 0, -height / 2]]])
    it, ib = np.arange(n_sides), np.arange(n_sides) + n_sides
    ctop, cbot = 2 * n_sides, 2 * n_sides + 1
    side = []
    for i in range(n_sides):
        j = (i + 1) % n_sides
        side.append([it[i], ib[i], ib[j]])
        side.append([it[i], ib[j], it[j]])
    tris = np.concatenate(
        [
            np.array(side, dtype=np.int32),
            _close_fan(ctop, it, flip=False),
            _close_fan(cbot, ib, flip=True),
        ]
    )
    return TriMesh(v, tris)


def hex_prism_mesh(circumradius: float = 0.05, height: float = 0.12) -> TriMesh:
    """Regular hexagonal prism with 6-fold symmetry about +z."""
    return _prism_mesh(6, circumradius, height)


def cube_with_corner_mesh(edge: float = 0.09, chamfer: float = 0.25) -> TriMesh:
    """Cube with one corner chamfered off, making the geometry asymmetric."""
    h = edge / 2
    c = chamfer * edge
    # corner (+h,+h,+h) replaced by a triangular cut
    v = np.array(
        [
            [-h, -h, -h], [h, -h, -h], [h, h, -h], [-h, h, -h],
            [-h, -h, h], [h, -h, h], [h, h, h], [-h, h, h],
        ],
        dtype=np.float64,
    )
    cut = np.array([[h - c, h, h], [h, h - c, h], [h, h, h - c]])
    v = np.concatenate([v, cut])  # 8, 9, 10
    quads = [
        (0, 3, 2, 1),  # bottom  z=-h
        (4, 5, 6, 7),  # top     z=+h (6 replaced partly)
        (0, 1, 5, 4),  # y=-h
        (2, 3, 7, 6),  # y=+h
        (0, 4, 7, 3),  # x=-h
        (1, 2, 6, 5),  # x=+h
    ]
    tris: list[list[int]] = []
    for a, b, cq, d in quads:
        if 6 in (a, b, cq, d):
            continue
        tris += [[a, b, cq], [a, cq, d]]
    # faces adjacent to vertex 6, re-stitched around the chamfer
    tris += [[4, 5, 9], [4, 9, 8], [4, 8, 7]]       # top: 4,5,6,7 -> via 9,8
    tris += [[2, 3, 7], [2, 7, 10], [7, 8, 10]]     # y=+h: 2,3,7,6 -> via 10,8
    tris += [[1, 2, 10], [1, 10, 9], [9, 10, 8]]    # x=+h: 1,2,6,5 -> via 10,9 + chamfer
    tris += [[1, 9, 5]]
    return TriMesh(v, np.array(tris, dtype=np.int32))


def prism_with_marker(
    circumradius: float = 0.05, height: float = 0.12
) -> tuple[TriMesh, MarkerRegion]:
    """Hexagonal prism plus a flat decal region on one lateral face.

    The mesh itself is exactly 6-fold symmetric; the marker only overrides
    descriptors, so ambiguity appears or disappears purely with the decal's
    visibility.
    """
    mesh = hex_prism_mesh(circumradius, height)
    apothem = circumradius * np.cos(np.pi / 6)
    # spans the face's full width and ~60% of its length: large enough that a
    # wrong symmetry placement costs a clear score margin, short enough that
    # an occluding strip across its axial span leaves the rest observable
    marker = MarkerRegion(
        center=(float(apothem), 0.0, 0.0),
        half_extents=(float(0.06 * circumradius), float(0.5 * circumradius), float(0.31 * height)),
    )
    return mesh, marker


def uv_sphere_mesh(radius: float = 0.05, n_lat: int = 24, n_lon: int = 48) -> TriMesh:
    lat = np.pi * (np.arange(1, n_lat) / n_lat)
    lon = 2 * np.pi * np.arange(n_lon) / n_lon
    grid = np.stack(
        [
            radius * np.sin(lat)[:, None] * np.cos(lon)[None, :],
            radius * np.sin(lat)[:, None] * np.sin(lon)[None, :],
            radius * np.cos(lat)[:, None] * np.ones_like(lon)[None, :],
        ],
        axis=-1,
    ).reshape(-1, 3)
    v = np.concatenate([grid, [[0, 0, radius]], [[0, 0, -radius]]])
    north, south = len(grid), len(grid) + 1
    idx = lambda i, j: i * n_lon + (j % n_lon)  # noqa: E731
    tris = []
    for j in range(n_lon):
        tris.append([north, idx(0, j), idx(0, j + 1)])
        tris.append([south, idx(n_lat - 2, j + 1), idx(n_lat - 2, j)])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [[a, b, c], [a, c, d]]
    return TriMesh(v, np.array(tris, dtype=np.int32))


BUNDLED_MESHES = {
    "cylinder": cylinder_mesh,
    "hex_prism": hex_prism_mesh,
    "cube_with_corner": cube_with_corner_mesh,
    "sphere": uv_sphere_mesh,
}


# ---------------------------------------------------------------------------
# ASCII PLY
# ---------------------------------------------------------------------------

def load_ply(path) -> TriMesh:
    """Read an ASCII PLY file with vertex x/y/z and triangular faces."""
    with open(path, "r", encoding="ascii") as f:
        if f.readline().strip() != "ply":
            raise ValueError("not a PLY file")
        n_vert = n_face = None
        fmt = None
        line = f.readline()
        while line and line.strip() != "end_header":
            parts = line.split()
            if parts[:1] == ["format"]:
                fmt = parts[1]
            elif parts[:2] == ["element", "vertex"]:
                n_vert = int(parts[2])
            elif parts[:2] == ["element", "face"]:
                n_face = int(parts[2])
            line = f.readline()
        if fmt != "ascii":
            raise ValueError(f"only ascii PLY is supported, got format {fmt!r}")
        if n_vert is None or n_face is None:
            raise ValueError("PLY header missing vertex or face element")
        verts = np.array(
            [[float(x) for x in f.readline().split()[:3]] for _ in range(n_vert)]
        )
        faces = []
        for _ in range(n_face):
            parts = [int(x) for x in f.readline().split()]
            if parts[0] != 3:
                raise ValueError("only triangular faces are supported")
            faces.append(parts[1:4])
    return TriMesh(verts, np.array(faces, dtype=np.int32))


def save_ply(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(mesh.vertices)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write(f"element face {len(mesh.triangles)}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")
