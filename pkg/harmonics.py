#!/usr/bin/env python3
"""
Solid harmonics and expansion translation operators for the Laplace FMM.

Convention
----------
Regular harmonics ``Psi[n, m]`` are the Taylor coefficients of the generating
function ``exp(t * (z - (x + iy) s / 2 + (x - iy) / (2 s)))``; irregular
harmonics are ``Theta[n, m] = (n-|m|)! (n+|m|)! Psi[n, m] / r^(2n+1)``. With
this pair

    1 / |x - y| = sum_{n,m} conj(Psi[n, m](y - c)) * Theta[n, m](x - c)

and every translation operator is a plain sum over products of harmonics of
the shift vector (no normalization constants).

Layouts
-------
complex compact: all ``(n, m)`` with ``-n <= m <= n``, index ``n*n + n + m``;
    degree ``n`` is the contiguous slice ``[n*n, (n+1)*(n+1))``.
real packed: the same length ``(p+1)^2``, ordered by degree as
    ``Re[n,0], Re[n,1], Im[n,1], ..., Re[n,n], Im[n,n]``. Expansions of real
    fields satisfy ``C[n,-m] = (-1)^m conj(C[n,m])`` so nothing is lost. The
    order ``p-1`` packing is a prefix of the order ``p`` packing.

All operators acting on expansions are returned as real matrices in the
packed layout so the FMM sweeps are batched real matrix products.
"""

import logging
import math
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from scipy.linalg import lstsq
from scipy.spatial.transform import Rotation

from octree import FAR_OFFSET_CODES, FAR_OFFSETS

logger = logging.getLogger("bibeefmm.harmonics")

# octant bit layout shared with the octree: bit 0 -> x, bit 1 -> y, bit 2 -> z
OCTANT_SIGNS = np.array(
    [[(2 * ((o >> axis) & 1) - 1) for axis in range(3)] for o in range(8)], dtype=np.float64
)


def n_coefficients(p: int) -> int:
    return (p + 1) * (p + 1)


def compact_index(n: int, m: int) -> int:
    return n * n + n + m


def packed_index(n: int, m: int, imag: bool = False) -> int:
    if m == 0:
        if imag:
            raise ValueError("the (n, 0) coefficient is real")
        return n * n
    return n * n + 2 * m - (0 if imag else 1)


@lru_cache(maxsize=None)
def _factorials(top: int) -> np.ndarray:
    return np.array([float(math.factorial(k)) for k in range(top + 1)])


@lru_cache(maxsize=None)
def packed_tables(p: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(degree, order, is_imag, compact source index) of every packed slot."""
    degree, order, imag = [], [], []
    for n in range(p + 1):
        degree.append(n)
        order.append(0)
        imag.append(False)
        for m in range(1, n + 1):
            degree += [n, n]
            order += [m, m]
            imag += [False, True]
    degree = np.array(degree, dtype=np.int64)
    order = np.array(order, dtype=np.int64)
    imag = np.array(imag, dtype=bool)
    source = degree * degree + degree + order
    return degree, order, imag, source


@lru_cache(maxsize=None)
def compact_tables(p: int) -> Tuple[np.ndarray, np.ndarray]:
    """(degree, order) of every complex compact slot."""
    degree = np.concatenate([np.full(2 * n + 1, n) for n in range(p + 1)]).astype(np.int64)
    order = np.concatenate([np.arange(-n, n + 1) for n in range(p + 1)]).astype(np.int64)
    return degree, order


@lru_cache(maxsize=None)
def _unpack_tables(p: int):
    degree, order = compact_tables(p)
    absm = np.abs(order)
    re_src = np.where(absm == 0, degree * degree, degree * degree + 2 * absm - 1)
    im_src = np.where(absm == 0, 0, degree * degree + 2 * absm)
    im_mask = (absm > 0).astype(np.float64)
    parity = np.where(absm % 2 == 0, 1.0, -1.0)
    re_factor = np.where(order < 0, parity, 1.0)
    im_factor = np.where(order < 0, -parity, 1.0) * im_mask
    return re_src, im_src, re_factor, im_factor


def unpack(packed: np.ndarray, p: int) -> np.ndarray:
    """Real packed -> complex compact along the last axis."""
    re_src, im_src, re_factor, im_factor = _unpack_tables(p)
    packed = np.asarray(packed)
    return packed[..., re_src] * re_factor + 1j * (packed[..., im_src] * im_factor)


def pack(compact: np.ndarray, p: int) -> np.ndarray:
    """Complex compact -> real packed along the last axis."""
    _, _, imag, source = packed_tables(p)
    values = np.asarray(compact)[..., source]
    return np.where(imag, values.imag, values.real)


def realify(operator: np.ndarray, p_in: int, p_out: int) -> np.ndarray:
    """Real packed matrix of a complex compact operator that preserves real fields."""
    degree, order, imag, _ = packed_tables(p_in)
    col_a = degree * degree + degree + order
    col_b = degree * degree + degree - order
    parity = np.where(order % 2 == 0, 1.0, -1.0)
    coef_a = np.where(imag, 1j, 1.0)
    coef_b = np.where(order == 0, 0.0, np.where(imag, -1j * parity, parity))
    applied = operator[:, col_a] * coef_a + operator[:, col_b] * coef_b
    _, _, out_imag, out_source = packed_tables(p_out)
    rows = applied[out_source]
    return np.where(out_imag[:, None], rows.imag, rows.real)


# ---------------------------------------------------------------------------
# Harmonics
# ---------------------------------------------------------------------------

def regular_harmonics(points: np.ndarray, p: int) -> np.ndarray:
    """``Psi[n, m]`` at each point, shape (N, p+1, 2p+1), order ``m`` at column ``m + p``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    wp = (0.5 * (x + 1j * y))[:, None]
    wm = (0.5 * (x - 1j * y))[:, None]
    zz = z[:, None]
    out = np.zeros((len(points), p + 1, 2 * p + 3), dtype=np.complex128)
    out[:, 0, p + 1] = 1.0
    for n in range(1, p + 1):
        prev = out[:, n - 1]
        out[:, n, 1:-1] = (zz * prev[:, 1:-1] - wp * prev[:, :-2] + wm * prev[:, 2:]) / n
    return out[:, :, 1:-1]


@lru_cache(maxsize=None)
def _theta_factors(p: int) -> np.ndarray:
    fact = _factorials(2 * p)
    table = np.zeros((p + 1, 2 * p + 1))
    for n in range(p + 1):
        for m in range(-n, n + 1):
            table[n, m + p] = fact[n - abs(m)] * fact[n + abs(m)]
    return table


def irregular_harmonics(points: np.ndarray, p: int) -> np.ndarray:
    """``Theta[n, m]`` at each point, same layout as ``regular_harmonics``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    r = np.linalg.norm(points, axis=1)
    psi = regular_harmonics(points, p)
    powers = r[:, None] ** (2 * np.arange(p + 1) + 1)[None, :]
    return psi * _theta_factors(p)[None] / powers[:, :, None]


def _compact(harmonics: np.ndarray, p: int) -> np.ndarray:
    degree, order = compact_tables(p)
    return harmonics[..., degree, order + harmonics.shape[-1] // 2]


def multipole_basis(points: np.ndarray, p: int) -> np.ndarray:
    """Packed rows whose weighted sum is the multipole expansion (P2M)."""
    return pack(np.conj(_compact(regular_harmonics(points, p), p)), p)


@lru_cache(maxsize=None)
def _evaluation_weights(p: int) -> np.ndarray:
    _, order, imag, _ = packed_tables(p)
    return np.where(order == 0, 1.0, np.where(imag, -2.0, 2.0))


def local_basis(points: np.ndarray, p: int) -> np.ndarray:
    """Packed rows: potential of a local expansion is ``local_basis @ L`` (L2P)."""
    return multipole_basis(points, p) * _evaluation_weights(p)


def irregular_basis(points: np.ndarray, p: int) -> np.ndarray:
    """Packed rows: potential of a multipole expansion is ``irregular_basis @ M`` (M2P)."""
    theta = _compact(irregular_harmonics(points, p), p)
    return pack(theta, p) * _evaluation_weights(p)


# ---------------------------------------------------------------------------
# Translation operators (real packed)
# ---------------------------------------------------------------------------

def _shift_operator(psi_conj: np.ndarray, p: int, transpose_shift: bool) -> np.ndarray:
    """Compact operator built from ``conj(Psi)`` of a shift vector.

    multipole to multipole: ``T[(n,m),(k,l)] = conj Psi[n-k, m-l]``;
    local to local: ``T[(j,q),(k,l)] = conj Psi[k-j, l-q]``.
    """
    degree, order = compact_tables(p)
    row_n, col_n = degree[:, None], degree[None, :]
    row_m, col_m = order[:, None], order[None, :]
    if transpose_shift:
        dn, dm = col_n - row_n, col_m - row_m
    else:
        dn, dm = row_n - col_n, row_m - col_m
    valid = (dn >= 0) & (np.abs(dm) <= dn)
    values = psi_conj[np.clip(dn, 0, p), np.clip(dm, -p, p) + p]
    return np.where(valid, values, 0.0)


def m2m_matrix(shift, p: int) -> np.ndarray:
    """Packed operator moving a multipole by ``shift = child_center - parent_center``."""
    psi = np.conj(regular_harmonics(np.asarray(shift, dtype=np.float64)[None], p)[0])
    return realify(_shift_operator(psi, p, transpose_shift=False), p, p)


def l2l_matrix(shift, p: int) -> np.ndarray:
    """Packed operator moving a local expansion by ``shift = child_center - parent_center``."""
    psi = np.conj(regular_harmonics(np.asarray(shift, dtype=np.float64)[None], p)[0])
    return realify(_shift_operator(psi, p, transpose_shift=True), p, p)


def m2l_matrix(displacement, p: int) -> np.ndarray:
    """Packed O(p^4) operator, ``displacement = target_center - source_center``."""
    theta = irregular_harmonics(np.asarray(displacement, dtype=np.float64)[None], 2 * p)[0]
    degree, order = compact_tables(p)
    k, l = degree[:, None], order[:, None]
    n, m = degree[None, :], order[None, :]
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    operator = sign * theta[n + k, m + l + 2 * p]
    return realify(operator, p, p)


@lru_cache(maxsize=None)
def unit_octant_m2m(p: int) -> np.ndarray:
    """M2M matrices for the 8 octants with unit half-width, shape (8, P, P)."""
    return np.stack([m2m_matrix(OCTANT_SIGNS[o], p) for o in range(8)])


@lru_cache(maxsize=None)
def unit_octant_l2l(p: int) -> np.ndarray:
    return np.stack([l2l_matrix(OCTANT_SIGNS[o], p) for o in range(8)])


@lru_cache(maxsize=None)
def packed_degrees(p: int) -> np.ndarray:
    return packed_tables(p)[0].astype(np.float64)


@lru_cache(maxsize=None)
def gradient_matrices(p: int) -> np.ndarray:
    """Packed maps from an order-p local expansion to the order p-1 expansions of its
    x, y and z derivatives, shape (3, p*p, (p+1)^2)."""
    size_in = n_coefficients(p)
    size_out = n_coefficients(p - 1) if p >= 1 else 0
    ops = np.zeros((3, size_out, size_in), dtype=np.complex128)
    for j in range(p):
        for q in range(-j, j + 1):
            row = compact_index(j, q)
            up = compact_index(j + 1, q + 1)
            down = compact_index(j + 1, q - 1)
            ops[0, row, up] += -0.5
            ops[0, row, down] += 0.5
            ops[1, row, up] += 0.5j
            ops[1, row, down] += 0.5j
            ops[2, row, compact_index(j + 1, q)] += 1.0
    return np.stack([realify(ops[axis], p, p - 1) for axis in range(3)])


# ---------------------------------------------------------------------------
# Rotation-accelerated M2L
# ---------------------------------------------------------------------------

def fibonacci_sphere(count: int) -> np.ndarray:
    index = np.arange(count) + 0.5
    z = 1.0 - 2.0 * index / count
    radius = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * index
    return np.stack([radius * np.cos(phi), radius * np.sin(phi), z], axis=1)


def rotation_to_z(direction) -> Rotation:
    """Rotation taking ``direction`` onto the +z axis."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    cos_angle = float(np.clip(d[2], -1.0, 1.0))
    axis = np.cross(d, [0.0, 0.0, 1.0])
    sin_angle = float(np.linalg.norm(axis))
    if sin_angle < 1e-14:
        if cos_angle > 0:
            return Rotation.identity()
        return Rotation.from_rotvec([np.pi, 0.0, 0.0])
    return Rotation.from_rotvec(axis / sin_angle * math.atan2(sin_angle, cos_angle))


def rotation_blocks(rotation: Rotation, p: int) -> List[np.ndarray]:
    """Per-degree matrices ``G[n]`` with ``Psi_n(R x) = Psi_n(x) @ G[n]``."""
    points = fibonacci_sphere(max(3 * (2 * p + 1), 16))
    before = regular_harmonics(points, p)
    after = regular_harmonics(rotation.apply(points), p)
    fact = _factorials(2 * p)
    blocks = []
    for n in range(p + 1):
        cols = slice(p - n, p + n + 1)
        m = np.abs(np.arange(-n, n + 1))
        scale = np.sqrt(fact[n + m] * fact[n - m])
        fitted = lstsq(before[:, n, cols] * scale, after[:, n, cols] * scale)[0]
        blocks.append(scale[:, None] * fitted / scale[None, :])
    return blocks


class RotatedM2L:
    """M2L along one displacement: rotate onto z, translate axially, rotate back.

    Costs O(p^3) per application against O(p^4) for ``m2l_matrix``.
    """

    def __init__(self, displacement, p: int):
        self.p = p
        displacement = np.asarray(displacement, dtype=np.float64)
        rho = float(np.linalg.norm(displacement))
        rotation = rotation_to_z(displacement)
        forward = rotation_blocks(rotation.inv(), p)
        backward = rotation_blocks(rotation, p)
        fact = _factorials(2 * p)

        self.forward = []
        self.backward = []
        for n in range(p + 1):
            m = np.abs(np.arange(-n, n + 1))
            theta_scale = fact[n - m] * fact[n + m]
            # Theta_n(R^T x) = Theta_n(x) @ (C^-1 G(R^T) C)
            h = forward[n] * theta_scale[None, :] / theta_scale[:, None]
            self.forward.append(np.ascontiguousarray(h.T))
            self.backward.append(np.ascontiguousarray(np.conj(backward[n]).T))

        k = np.arange(p + 1)[:, None]
        n = np.arange(p + 1)[None, :]
        sign = np.where(k % 2 == 0, 1.0, -1.0)
        self.axial = sign * fact[n + k] / rho ** (n + k + 1)

        self._axial_index = []
        for l in range(-p, p + 1):
            a = abs(l)
            rows = np.array([compact_index(kk, l) for kk in range(a, p + 1)])
            cols = np.array([compact_index(nn, -l) for nn in range(a, p + 1)])
            self._axial_index.append((rows, cols, np.ascontiguousarray(self.axial[a:, a:].T)))

    def apply_compact(self, multipoles: np.ndarray) -> np.ndarray:
        """Complex compact multipoles (B, P) -> complex compact locals (B, P)."""
        multipoles = np.atleast_2d(multipoles)
        rotated = np.empty_like(multipoles)
        for n in range(self.p + 1):
            block = slice(n * n, (n + 1) * (n + 1))
            rotated[:, block] = multipoles[:, block] @ self.forward[n]
        translated = np.zeros_like(rotated)
        for rows, cols, matrix in self._axial_index:
            translated[:, rows] = rotated[:, cols] @ matrix
        locals_ = np.empty_like(translated)
        for n in range(self.p + 1):
            block = slice(n * n, (n + 1) * (n + 1))
            locals_[:, block] = translated[:, block] @ self.backward[n]
        return locals_

    def apply(self, multipoles: np.ndarray) -> np.ndarray:
        """Real packed multipoles (B, P) -> real packed locals (B, P)."""
        return pack(self.apply_compact(unpack(multipoles, self.p)), self.p)


@lru_cache(maxsize=8)
def unit_m2l_plain(p: int) -> dict:
    """Packed M2L matrices for every far-list offset code at unit cell side.

    A far-list code names ``source - target`` in cell units, so the translation runs
    along its negation.
    """
    logger.debug(f"Building {len(FAR_OFFSETS)} plain M2L operators at p={p}")
    return {
        int(code): m2l_matrix(-offset.astype(np.float64), p)
        for offset, code in zip(FAR_OFFSETS, FAR_OFFSET_CODES)
    }


@lru_cache(maxsize=8)
def unit_m2l_rotated(p: int) -> dict:
    logger.debug(f"Building {len(FAR_OFFSETS)} rotated M2L operators at p={p}")
    return {
        int(code): RotatedM2L(-offset.astype(np.float64), p)
        for offset, code in zip(FAR_OFFSETS, FAR_OFFSET_CODES)
    }
