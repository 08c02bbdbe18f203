"""Equi-volumetric partition of SO(3) and hypothesis density histograms.

The grid combines a HEALPix sphere pixelization (nside = 2^k) with 6 * 2^k
equal slices of a circle angle via Hopf coordinates, giving 72 * 8^k cells of
exactly equal Haar volume. Cell indices are hierarchical: the level-(k+1)
children of a cell are obtained by splitting its sphere pixel in 4 and its
angle slice in 2.

Hopf coordinates (theta, phi, psi) map to a unit quaternion as

    q = ( cos(theta/2) cos(psi/2),
          cos(theta/2) sin(psi/2),
          sin(theta/2) cos(phi + psi/2),
          sin(theta/2) sin(psi/2 + phi) )

with theta in [0, pi], phi in [0, 2pi), psi in [0, 2pi). Uniform measure in
(cos theta, phi, psi) is the Haar measure on SO(3), so HEALPix equal-area
pixels x equal psi slices are equal-volume cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import healpix
from .rotkit import Rotation, d_ang_quat

__all__ = [
    "So3Grid",
    "DensityHistogram",
    "LevelTooLarge",
    "build_grid",
    "bin_of",
    "density",
    "hopf_to_quat",
    "quat_to_hopf",
]

MAX_LEVEL = 8


class LevelTooLarge(ValueError):
    """Raised when a grid level beyond the memory guard is requested."""


def hopf_to_quat(theta: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    ct, st = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.stack(
        [
            ct * np.cos(psi / 2.0),
            ct * np.sin(psi / 2.0),
            st * np.cos(phi + psi / 2.0),
            st * np.sin(phi + psi / 2.0),
        ],
        axis=-1,
    )


def quat_to_hopf(q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse Hopf map; invariant to the quaternion sign ambiguity.

    The chart with psi in [0, 2pi) covers the half of the quaternion sphere
    with atan2(x, w) in [0, pi); the other half is first mapped to the same
    rotation's antipodal representative.
    """
    q = np.asarray(q, dtype=np.float64)
    flip = (q[..., 1] < 0) | ((q[..., 1] == 0) & (q[..., 0] < 0))
    q = np.where(flip[..., None], -q, q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    theta = 2.0 * np.arctan2(np.hypot(y, z), np.hypot(w, x))
    psi = 2.0 * np.arctan2(x, w)
    phi = np.mod(np.arctan2(z, y) - 0.5 * psi, 2.0 * np.pi)
    return theta, phi, psi


@dataclass(frozen=True)
class So3Grid:
    """Partition of SO(3) at subdivision level k (72 * 8^k cells).

    Cells are addressed as sphere_pixel * n_psi + psi_slice. Representatives
    (cell-center rotations) are computed on demand, so high levels stay O(1)
    in memory.
    """

    level: int

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be non-negative")
        if self.level > MAX_LEVEL:
            raise LevelTooLarge(
                f"grid level {self.level} exceeds the supported maximum {MAX_LEVEL}"
            )

    @property
    def nside(self) -> int:
        return 1 << self.level

    @property
    def n_psi(self) -> int:
        return 6 * (1 << self.level)

    @property
    def n_cells(self) -> int:
        return 72 * 8 ** self.level

    # -- lookups ----------------------------------------------------------

    def bin_of_quats(self, quats: np.ndarray) -> np.ndarray:
        """Cell index for each quaternion row; total and deterministic."""
        theta, phi, psi = quat_to_hopf(quats)
        s2 = healpix.ang2pix_nest(self.nside, theta, phi)
        s1 = np.floor(psi * (self.n_psi / (2.0 * np.pi))).astype(np.int64)
        s1 = np.clip(s1, 0, self.n_psi - 1)
        return np.atleast_1d(s2) * self.n_psi + s1

    def representative_quats(self, cells: np.ndarray) -> np.ndarray:
        """Cell-center rotation (quaternion) for each cell index."""
        cells = np.atleast_1d(np.asarray(cells, dtype=np.int64))
        if np.any(cells < 0) or np.any(cells >= self.n_cells):
            raise ValueError("cell index out of range")
        s2, s1 = divmod(cells, self.n_psi)
        theta, phi = healpix.pix2ang_nest(self.nside, s2)
        psi = (s1 + 0.5) * (2.0 * np.pi / self.n_psi)
        return hopf_to_quat(np.atleast_1d(theta), np.atleast_1d(phi), psi)

    def representative(self, cell: int) -> Rotation:
        return Rotation.from_quat(self.representative_quats(np.array([cell]))[0])

    def parent_cell(self, cells: np.ndarray) -> np.ndarray:
        """Index of the containing cell one level coarser."""
        if self.level == 0:
            raise ValueError("level-0 grid has no parent")
        cells = np.asarray(cells, dtype=np.int64)
        s2, s1 = divmod(cells, self.n_psi)
        return (s2 // 4) * (self.n_psi // 2) + s1 // 2

    def cell_radius(self) -> float:
        """Typical angle between a rotation and its cell center.

        Probed once with a fixed-seed sample (95th percentile). The true max
        is not useful here: cells touching the Hopf chart's degenerate pole
        are volume-equal but metrically elongated, so a max-based radius
        would glue everything together.
        """
        rng = np.random.default_rng(1234567)
        q = rng.standard_normal((8192, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        cells = self.bin_of_quats(q)
        reps = self.representative_quats(cells)
        return float(np.percentile(d_ang_quat(q, reps), 95.0))

    def adjacency_radius(self) -> float:
        """Center distance below which two cells count as neighbors (1-ring)."""
        return 2.2 * self.cell_radius()

    def connected_components(self, cells: np.ndarray) -> list[np.ndarray]:
        """Group the given cells into components under 1-ring adjacency."""
        cells = np.unique(np.asarray(cells, dtype=np.int64))
        if cells.size == 0:
            return []
        reps = self.representative_quats(cells)
        thr = self.adjacency_radius()
        n = cells.size
        adj = d_ang_quat(reps[:, None, :], reps[None, :, :]) <= thr
        seen = np.zeros(n, dtype=bool)
        comps = []
        for start in range(n):
            if seen[start]:
                continue
            stack = [start]
            seen[start] = True
            members = []
            while stack:
                i = stack.pop()
                members.append(i)
                nxt = np.where(adj[i] & ~seen)[0]
                seen[nxt] = True
                stack.extend(nxt.tolist())
            comps.append(cells[np.sort(np.array(members))])
        return comps


@dataclass(frozen=True)
class DensityHistogram:
    """Per-cell hypothesis counts over an So3Grid (sparse)."""

    grid: So3Grid
    cells: np.ndarray   # sorted unique cell indices with nonzero count
    counts: np.ndarray  # same length, positive ints

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count_of(self, cell: int) -> int:
        i = np.searchsorted(self.cells, cell)
        if i < len(self.cells) and self.cells[i] == cell:
            return int(self.counts[i])
        return 0

    def as_dict(self) -> dict[int, int]:
        return {int(c): int(n) for c, n in zip(self.cells, self.counts)}

    def aggregate_to_parent(self) -> "DensityHistogram":
        parent_grid = So3Grid(self.grid.level - 1)
        pcells = self.grid.parent_cell(self.cells)
        uniq, inv = np.unique(pcells, return_inverse=True)
        agg = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(agg, inv, self.counts)
        return DensityHistogram(parent_grid, uniq, agg)


def build_grid(k: int) -> So3Grid:
    """The level-k partition; k <= 8 guards against runaway cell counts."""
    return So3Grid(k)


def bin_of(grid: So3Grid, rotation: Rotation) -> int:
    """Index of the cell containing `rotation` (zeta in the density filter)."""
    return int(grid.bin_of_quats(rotation.quat[None, :])[0])


def density(grid: So3Grid, hypotheses) -> DensityHistogram:
    """Histogram of rotation hypotheses over grid cells.

    Accepts a list of Rotation or an (N, 4) quaternion array. Order of the
    input never affects the result.
    """
    if isinstance(hypotheses, np.ndarray):
        quats = hypotheses.reshape(-1, 4)
    else:
        quats = np.array([h.quat for h in hypotheses], dtype=np.float64).reshape(-1, 4)
    if quats.shape[0] == 0:
        return DensityHistogram(grid, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    cells = grid.bin_of_quats(quats)
    uniq, counts = np.unique(cells, return_counts=True)
    return DensityHistogram(grid, uniq, counts.astype(np.int64))
