"""Mollweide-projection SVG plots of rotation sets.

Rotations are drawn as 2D points: the rotation axis (a unit vector) is
Mollweide-projected, the rotation angle (tilt) sets the marker hue, and an
optional weight sets the marker area. Ground-truth rotations are drawn as
open circles. Output is plain deterministic SVG text: no timestamps, no
library-generated ids, so identical inputs give identical bytes.
"""

from __future__ import annotations

import numpy as np

from .rotkit import quat_to_rotvec

__all__ = ["mollweide_svg"]

_W, _H = 720, 400
_CX, _CY = _W / 2, _H / 2
_RX, _RY = 330.0, 165.0


def _mollweide_xy(lon: np.ndarray, lat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Equal-area Mollweide map of (longitude, latitude) to the unit ellipse."""
    theta = lat.copy()
    for _ in range(12):
        f = 2 * theta + np.sin(2 * theta) - np.pi * np.sin(lat)
        df = 2 + 2 * np.cos(2 * theta)
        step = np.where(np.abs(df) > 1e-12, f / np.maximum(df, 1e-12), 0.0)
        theta = theta - step
    x = (2.0 / np.pi) * lon * np.cos(theta)
    y = np.sin(theta)
    return x, y


def _axis_lonlat_tilt(quats: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rv = quat_to_rotvec(np.asarray(quats, dtype=np.float64).reshape(-1, 4))
    ang = np.linalg.norm(rv, axis=1)
    safe = np.maximum(ang, 1e-12)
    axis = rv / safe[:, None]
    lon = np.arctan2(axis[:, 1], axis[:, 0])
    lat = np.arcsin(np.clip(axis[:, 2], -1, 1))
    return lon, lat, ang


def _hue_color(tilt: np.ndarray) -> list[str]:
    # tilt in [0, pi] -> hue 0..300 deg
    hues = (tilt / np.pi) * 300.0
    return [f"hsl({h:.1f},85%,45%)" for h in hues]


def mollweide_svg(
    quats: np.ndarray,
    weights: np.ndarray | None = None,
    gt_quats: np.ndarray | None = None,
    title: str = "",
    max_points: int = 4000,
    warning: str | None = None,
) -> str:
    """Render rotations (and optional ground-truth circles) to SVG text.

    Large sets are thinned deterministically to `max_points` by a fixed-seed
    choice so hypothesis clouds stay plottable.
    """
    quats = np.asarray(quats, dtype=np.float64).reshape(-1, 4)
    n_total = len(quats)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if n_total > max_points:
        keep = np.sort(np.random.default_rng(0).choice(n_total, max_points, replace=False))
        quats = quats[keep]
        weights = None if weights is None else weights[keep]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<ellipse cx="{_CX}" cy="{_CY}" rx="{_RX}" ry="{_RY}" fill="#f7f7f7" '
        f'stroke="#888" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_CX}" y="22" font-family="sans-serif" font-size="15" '
            f'text-anchor="middle">{title} (n={n_total})</text>'
        )

    if len(quats):
        lon, lat, tilt = _axis_lonlat_tilt(quats)
        mx, my = _mollweide_xy(lon, lat)
        px = _CX + mx * (_RX / 2.0)
        py = _CY - my * _RY
        if weights is None:
            radii = np.full(len(quats), 1.6)
        else:
            wmax = weights.max() if weights.max() > 0 else 1.0
            radii = 2.0 + 6.0 * np.sqrt(np.maximum(weights, 0.0) / wmax)
        colors = _hue_color(tilt)
        for x, y, r, c in zip(px, py, radii, colors):
            parts.append(
                f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" fill="{c}" '
                f'fill-opacity="0.55"/>'
            )

    if gt_quats is not None and len(gt_quats):
        lon, lat, _ = _axis_lonlat_tilt(np.asarray(gt_quats, dtype=np.float64).reshape(-1, 4))
        mx, my = _mollweide_xy(lon, lat)
        px = _CX + mx * (_RX / 2.0)
        py = _CY - my * _RY
        for x, y in zip(px, py):
            parts.append(
                f'<circle cx="{x:.2f}" cy="{y:.2f}" r="9.00" fill="none" '
                f'stroke="black" stroke-width="1.8"/>'
            )

    if warning:
        parts.append(
            f'<text x="{_CX}" y="{_H - 12}" font-family="sans-serif" font-size="14" '
            f'fill="#b00020" text-anchor="middle">{warning}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
