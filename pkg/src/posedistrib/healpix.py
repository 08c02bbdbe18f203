"""Minimal nested-scheme HEALPix pixelization of the 2-sphere.

Implements just the pieces the SO(3) grid needs: ang2pix / pix2ang in the
NESTED numbering for power-of-two nside. The sphere is split into 12 base
faces, each carrying an nside x nside grid addressed by bit-interleaving the
in-face (x, y) coordinates, so children of pixel p at the next resolution are
pixels 4p..4p+3. All pixels have exactly equal area 4*pi / (12 nside^2).

Ported from the standard published pixelization equations; indexing ties are
resolved by floor, which makes lookups deterministic on cell boundaries.
"""

from __future__ import annotations

import numpy as np

__all__ = ["nside2npix", "ang2pix_nest", "pix2ang_nest"]

_TWO_THIRDS = 2.0 / 3.0

# face -> ring offset of the face's north corner, and longitude offset
_JRLL = np.array([2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4], dtype=np.int64)
_JPLL = np.array([1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7], dtype=np.int64)


def nside2npix(nside: int) -> int:
    return 12 * nside * nside


def _check_nside(nside: int) -> None:
    if nside < 1 or (nside & (nside - 1)) != 0:
        raise ValueError(f"nside must be a positive power of two, got {nside}")


def _interleave(v: np.ndarray) -> np.ndarray:
    """Spread the low 16 bits of v so they occupy the even bit positions."""
    v = v.astype(np.uint64)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F)
    v = (v | (v << np.uint64(2))) & np.uint64(0x33333333)
    v = (v | (v << np.uint64(1))) & np.uint64(0x55555555)
    return v


def _deinterleave(v: np.ndarray) -> np.ndarray:
    """Inverse of _interleave: collect the even bit positions."""
    v = v.astype(np.uint64) & np.uint64(0x55555555)
    v = (v | (v >> np.uint64(1))) & np.uint64(0x33333333)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x0F0F0F0F)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x00FF00FF)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x0000FFFF)
    return v


def _xyf_to_nest(ix: np.ndarray, iy: np.ndarray, face: np.ndarray, nside: int) -> np.ndarray:
    pix = _interleave(ix) | (_interleave(iy) << np.uint64(1))
    return (face.astype(np.int64) * nside * nside + pix.astype(np.int64))


def _nest_to_xyf(pix: np.ndarray, nside: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    npface = nside * nside
    face = pix // npface
    rem = (pix % npface).astype(np.uint64)
    ix = _deinterleave(rem).astype(np.int64)
    iy = _deinterleave(rem >> np.uint64(1)).astype(np.int64)
    return ix, iy, face.astype(np.int64)


def ang2pix_nest(nside: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Pixel indices (nested) for colatitude theta in [0, pi], longitude phi."""
    _check_nside(nside)
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    scalar = theta.ndim == 0
    theta = np.atleast_1d(theta)
    phi = np.atleast_1d(phi)

    z = np.cos(theta)
    tt = np.mod(phi, 2.0 * np.pi) * (2.0 / np.pi)  # in [0, 4)

    ix = np.empty(theta.shape, dtype=np.int64)
    iy = np.empty(theta.shape, dtype=np.int64)
    face = np.empty(theta.shape, dtype=np.int64)

    eq = np.abs(z) <= _TWO_THIRDS
    if np.any(eq):
        temp1 = nside * (0.5 + tt[eq])
        temp2 = nside * (z[eq] * 0.75)
        jp = np.floor(temp1 - temp2).astype(np.int64)  # ascending edge line
        jm = np.floor(temp1 + temp2).astype(np.int64)  # descending edge line
        ifp = jp >> int(np.log2(nside))
        ifm = jm >> int(np.log2(nside))
        f = np.where(
            ifp == ifm,
            (ifp & 3) + 4,
            np.where(ifp < ifm, ifp & 3, (ifm & 3) + 8),
        )
        face[eq] = f
        ix[eq] = jm & (nside - 1)
        iy[eq] = nside - (jp & (nside - 1)) - 1

    pol = ~eq
    if np.any(pol):
        zp = z[pol]
        ttp = tt[pol]
        itt = np.minimum(np.floor(ttp), 3.0)
        tp = ttp - itt
        tmp = nside * np.sqrt(3.0 * (1.0 - np.abs(zp)))
        jp = np.floor(tp * tmp).astype(np.int64)
        jm = np.floor((1.0 - tp) * tmp).astype(np.int64)
        jp = np.minimum(jp, nside - 1)
        jm = np.minimum(jm, nside - 1)
        north = zp >= 0
        face[pol] = np.where(north, itt.astype(np.int64), itt.astype(np.int64) + 8)
        ix[pol] = np.where(north, nside - jm - 1, jp)
        iy[pol] = np.where(north, nside - jp - 1, jm)

    pix = _xyf_to_nest(ix, iy, face, nside)
    return int(pix[0]) if scalar else pix


def pix2ang_nest(nside: int, pix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center (theta, phi) for nested pixel indices."""
    _check_nside(nside)
    pix = np.asarray(pix, dtype=np.int64)
    scalar = pix.ndim == 0
    pix = np.atleast_1d(pix)
    if np.any(pix < 0) or np.any(pix >= nside2npix(nside)):
        raise ValueError("pixel index out of range")

    ix, iy, face = _nest_to_xyf(pix, nside)
    jr = _JRLL[face] * nside - ix - iy - 1  # ring index, 1 .. 4 nside - 1

    z = np.empty(pix.shape, dtype=np.float64)
    kshift = np.zeros(pix.shape, dtype=np.int64)
    nr = np.empty(pix.shape, dtype=np.int64)

    north_cap = jr < nside
    south_cap = jr > 3 * nside
    equa = ~(north_cap | south_cap)

    if np.any(north_cap):
        nrc = jr[north_cap]
        nr[north_cap] = nrc
        z[north_cap] = 1.0 - (nrc * nrc) / (3.0 * nside * nside)
    if np.any(south_cap):
        nrc = 4 * nside - jr[south_cap]
        nr[south_cap] = nrc
        z[south_cap] = -1.0 + (nrc * nrc) / (3.0 * nside * nside)
    if np.any(equa):
        nr[equa] = nside
        z[equa] = (2.0 * nside - jr[equa]) * _TWO_THIRDS / nside
        kshift[equa] = (jr[equa] - nside) & 1

    jp = (_JPLL[face] * nr + ix - iy + 1 + kshift) // 2
    jp = np.where(jp > 4 * nr, jp - 4 * nr, jp)
    jp = np.where(jp < 1, jp + 4 * nr, jp)

    theta = np.arccos(np.clip(z, -1.0, 1.0))
    phi = (jp - (kshift + 1) * 0.5) * (np.pi / (2.0 * nr))
    if scalar:
        return float(theta[0]), float(phi[0])
    return theta, phi
