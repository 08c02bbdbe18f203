"""Many-to-many 2D-3D matching and per-correspondence rotation hypotheses.

Each mask pixel is compared against every model descriptor; all points whose
similarity reaches a fixed fraction of the pixel's best similarity are kept
as correspondences (the symmetric counterparts of the true point tie at the
maximum by construction). Every correspondence then yields one rotation
hypothesis by chaining the pixel's camera-from-local frame with the point's
local-from-object frame.

Similarity for thresholding is the raw descriptor dot product: the ratio test
is invariant to the per-pixel softmax log-denominator, which is shared by
all candidates of one pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .obsgen import Observation
from .rotkit import Rotation, quat_mul
from .symmodel import EmptyMask, SymModel

__all__ = [
    "Correspondence",
    "RotationHypothesis",
    "RotationHypothesisSet",
    "PixelOffMask",
    "match_pixel",
    "hypotheses_for_pixel",
    "all_hypotheses",
    "DEFAULT_TAU_DESC",
]

DEFAULT_TAU_DESC = 0.65


class PixelOffMask(ValueError):
    """Matching requested for a pixel outside the object mask."""


@dataclass(frozen=True)
class Correspondence:
    """One 2D-3D match: pixel (x, y), model point index, raw dot similarity."""

    pixel: tuple[int, int]
    point_index: int
    similarity: float


@dataclass(frozen=True)
class RotationHypothesis:
    rotation: Rotation
    source: Correspondence


class RotationHypothesisSet:
    """Column-oriented set of rotation hypotheses with their sources.

    Rows are ordered canonically: mask pixels row-major, then point index.
    `cells` is attached by the density filter.
    """

    def __init__(self, quats, pix_x, pix_y, point_index, similarity, cells=None):
        self.quats = np.asarray(quats, dtype=np.float64).reshape(-1, 4)
        self.pix_x = np.asarray(pix_x, dtype=np.int32)
        self.pix_y = np.asarray(pix_y, dtype=np.int32)
        self.point_index = np.asarray(point_index, dtype=np.int64)
        self.similarity = np.asarray(similarity, dtype=np.float64)
        self.cells = None if cells is None else np.asarray(cells, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.quats)

    def take(self, idx: np.ndarray) -> "RotationHypothesisSet":
        return RotationHypothesisSet(
            self.quats[idx],
            self.pix_x[idx],
            self.pix_y[idx],
            self.point_index[idx],
            self.similarity[idx],
            None if self.cells is None else self.cells[idx],
        )

    def with_cells(self, cells: np.ndarray) -> "RotationHypothesisSet":
        out = RotationHypothesisSet(
            self.quats, self.pix_x, self.pix_y, self.point_index, self.similarity
        )
        out.cells = np.asarray(cells, dtype=np.int64)
        return out

    def hypothesis(self, i: int) -> RotationHypothesis:
        return RotationHypothesis(
            rotation=Rotation.from_quat(self.quats[i]),
            source=Correspondence(
                pixel=(int(self.pix_x[i]), int(self.pix_y[i])),
                point_index=int(self.point_index[i]),
                similarity=float(self.similarity[i]),
            ),
        )

    def to_records(self) -> list[dict]:
        """JSON-ready rows: pixel, point index, quaternion, similarity."""
        return [
            {
                "pixel": [int(x), int(y)],
                "point_index": int(p),
                "quaternion_wxyz": [float(v) for v in q],
                "similarity": float(s),
            }
            for x, y, p, q, s in zip(
                self.pix_x, self.pix_y, self.point_index, self.quats, self.similarity
            )
        ]


def _matches_for_rows(
    obs: Observation, model: SymModel, ys: np.ndarray, xs: np.ndarray, tau_desc: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(row_id, point_index, similarity) of all ratio-test survivors.

    Also fills the observation's per-pixel best-similarity cache.
    """
    dmax_map = np.full(obs.mask.shape, -np.inf)
    rows_out, pts_out, sims_out = [], [], []
    chunk = max(1, int(2e7) // max(len(model), 1))
    for s in range(0, len(ys), chunk):
        block = obs.descriptors[ys[s : s + chunk], xs[s : s + chunk]] @ model.descriptors.T
        best = block.max(axis=1)
        dmax_map[ys[s : s + chunk], xs[s : s + chunk]] = best
        # the argmax always survives, even for a (degenerate) negative best
        thr = np.minimum(tau_desc * best, best)
        r, p = np.nonzero(block >= thr[:, None])
        rows_out.append(r + s)
        pts_out.append(p)
        sims_out.append(block[r, p])
    obs._desc_stats[id(model)] = dmax_map
    return np.concatenate(rows_out), np.concatenate(pts_out), np.concatenate(sims_out)


def match_pixel(
    obs: Observation, model: SymModel, pixel: tuple[int, int], tau_desc: float = DEFAULT_TAU_DESC
) -> list[Correspondence]:
    """Correspondence set of one pixel: every model point whose descriptor dot
    reaches tau_desc times the pixel's best dot. pixel is (x, y)."""
    if not (0 < tau_desc <= 1.0):
        raise ValueError("tau_desc must be in (0, 1]")
    x, y = int(pixel[0]), int(pixel[1])
    if not (0 <= y < obs.mask.shape[0] and 0 <= x < obs.mask.shape[1]) or not obs.mask[y, x]:
        raise PixelOffMask(f"pixel ({x}, {y}) is not on the object mask")
    dots = model.descriptors @ obs.descriptors[y, x]
    best = float(dots.max())
    thr = min(tau_desc * best, best)
    idx = np.nonzero(dots >= thr)[0]
    return [Correspondence((x, y), int(i), float(dots[i])) for i in idx]


def hypotheses_for_pixel(
    obs: Observation, model: SymModel, matches: list[Correspondence]
) -> list[RotationHypothesis]:
    """One rotation hypothesis per correspondence: cam-from-local of the pixel
    composed with local-from-object of the matched point."""
    out = []
    for c in matches:
        x, y = c.pixel
        q = quat_mul(obs.frame_quats[y, x], model.frame_quats[c.point_index])
        out.append(RotationHypothesis(Rotation.from_quat(q), c))
    return out


def all_hypotheses(
    obs: Observation, model: SymModel, tau_desc: float = DEFAULT_TAU_DESC
) -> RotationHypothesisSet:
    """Rotation hypotheses aggregated over every mask pixel."""
    if not (0 < tau_desc <= 1.0):
        raise ValueError("tau_desc must be in (0, 1]")
    ys, xs = np.nonzero(obs.mask)
    if len(ys) == 0:
        raise EmptyMask("observation has no mask pixels")
    rows, pts, sims = _matches_for_rows(obs, model, ys, xs, tau_desc)
    frame_q = obs.frame_quats[ys[rows], xs[rows]]
    quats = quat_mul(frame_q, model.frame_quats[pts])
    return RotationHypothesisSet(quats, xs[rows], ys[rows], pts, sims)
