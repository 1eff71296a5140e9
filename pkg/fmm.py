#!/usr/bin/env python3
"""
Laplace fast multipole method.

Evaluates ``phi(y_j) = sum_i c_i / (4 pi |y_j - x_i|)`` and its gradient for
all targets in O(N). The expansion algebra lives in ``harmonics``; this module
owns the public single-expansion operators (P2M, M2M, M2L, L2L, L2P, P2P, M2P),
the direct O(N^2) oracle and the tree sweep.

Sweep structure (``FmmPlan.evaluate``):

1. upward: P2M at the leaves, M2M level by level towards level 2;
2. downward: M2L over the far lists of every level >= 2, L2L to the children;
3. evaluation: L2P at target leaves plus P2P over the near ranges.

Within a phase the work is split over target cells (or target leaves), so
each output row is written by exactly one worker. With
``FmmConfig.deterministic`` the split uses fixed block sizes that do not
depend on the thread count, which makes results bit-identical between runs.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from error_handling import (
    ConfigurationError,
    ErrorContext,
    GeometryError,
    ResourceError,
    get_error_handler,
)
from harmonics import (
    RotatedM2L,
    gradient_matrices,
    irregular_basis,
    l2l_matrix,
    local_basis,
    m2l_matrix,
    m2m_matrix,
    multipole_basis,
    n_coefficients,
    packed_degrees,
    packed_index,
    unit_m2l_plain,
    unit_m2l_rotated,
    unit_octant_l2l,
    unit_octant_m2m,
)
from octree import DEFAULT_NCRIT, InteractionLists, Tree, build_tree, interaction_lists

logger = logging.getLogger("bibeefmm.fmm")

KERNEL_SCALE = 1.0 / (4.0 * math.pi)
MAX_ORDER = 30
ROTATION_MIN_ORDER = 8
DIRECT_PAIR_CHUNK = 2_000_000
BASIS_CHUNK_ENTRIES = 25_000_000
BASIS_MEMORY_HEADROOM = 2.0
L2P_CHUNK = 100_000
DETERMINISTIC_M2L_BLOCK = 512
DETERMINISTIC_LEAF_BLOCK = 64
UNIT_NORMAL_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

def _as_points(values) -> np.ndarray:
    points = np.asarray(values, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        points = points.reshape(-1, 3)
    return points


def _same_points(a: np.ndarray, b: np.ndarray) -> bool:
    if a is b:
        return True
    return a.shape == b.shape and np.shares_memory(a, b) and np.array_equal(a, b)


@dataclass
class SourceSet:
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = _as_points(self.positions)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(self.positions) != len(self.weights):
            raise ConfigurationError(
                f"{len(self.positions)} source positions but {len(self.weights)} weights"
            )
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.weights))):
            raise GeometryError("source positions and weights must be finite")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class TargetSet:
    positions: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = _as_points(self.positions)
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("target positions must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.positions):
                raise ConfigurationError("one normal per target is required")
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > UNIT_NORMAL_TOLERANCE):
                raise GeometryError("target normals must have unit length")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class FmmConfig:
    order: int = 8
    ncrit: int = DEFAULT_NCRIT
    use_rotation: Optional[bool] = None
    deterministic: bool = False
    threads: int = 1

    def __post_init__(self):
        if not isinstance(self.order, (int, np.integer)) or not 1 <= self.order <= MAX_ORDER:
            raise ConfigurationError(
                f"expansion order must lie in 1..{MAX_ORDER}, got {self.order}"
            )
        if self.ncrit < 1:
            raise ConfigurationError(f"ncrit must be at least 1, got {self.ncrit}")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be at least 1, got {self.threads}")

    @property
    def rotation_enabled(self) -> bool:
        if self.use_rotation is None:
            return self.order >= ROTATION_MIN_ORDER
        return bool(self.use_rotation)


@dataclass
class FieldResult:
    potential: np.ndarray
    gradient: Optional[np.ndarray]
    normal_derivative: Optional[np.ndarray] = None
    timings: Dict[str, float] = field(default_factory=dict)


@lru_cache(maxsize=None)
def _triangular_tables(p: int) -> Tuple[np.ndarray, np.ndarray]:
    re_idx, im_idx = [], []
    for n in range(p + 1):
        for m in range(n + 1):
            re_idx.append(packed_index(n, m))
            im_idx.append(packed_index(n, m, imag=True) if m else -1)
    return np.array(re_idx), np.array(im_idx)


@dataclass
class Expansion:
    """Multipole or local expansion; coefficients for m >= 0 at ``n(n+1)/2 + m``."""

    order: int
    center: np.ndarray
    kind: str
    coefficients: np.ndarray

    def __post_init__(self):
        if self.kind not in ("multipole", "local"):
            raise ConfigurationError(f"unknown expansion kind '{self.kind}'")
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.coefficients = np.asarray(self.coefficients, dtype=np.complex128)
        expected = (self.order + 1) * (self.order + 2) // 2
        if self.coefficients.shape != (expected,):
            raise ConfigurationError(
                f"order {self.order} expansion needs {expected} coefficients, "
                f"got {self.coefficients.shape}"
            )

    def coefficient(self, n: int, m: int) -> complex:
        value = self.coefficients[n * (n + 1) // 2 + abs(m)]
        if m < 0:
            return (-1) ** m * np.conj(value)
        return value

    def packed(self) -> np.ndarray:
        re_idx, im_idx = _triangular_tables(self.order)
        out = np.zeros(n_coefficients(self.order))
        out[re_idx] = self.coefficients.real
        has_imag = im_idx >= 0
        out[im_idx[has_imag]] = self.coefficients.imag[has_imag]
        return out

    @classmethod
    def from_packed(cls, packed: np.ndarray, order: int, center, kind: str) -> "Expansion":
        re_idx, im_idx = _triangular_tables(order)
        imag = np.where(im_idx >= 0, packed[np.maximum(im_idx, 0)], 0.0)
        return cls(order, center, kind, packed[re_idx] + 1j * imag)


# ---------------------------------------------------------------------------
# Direct kernel
# ---------------------------------------------------------------------------

def _pair_kernel(x, y, w, want_gradient: bool, skip: Optional[np.ndarray] = None):
    """Sum of w / |x - y| and its x-gradient over a dense block.

    Returns (potential, gradient, coincident) where ``coincident`` marks zero
    distances not covered by ``skip``. Skipped and coincident pairs add nothing.
    """
    d = x[:, None, :] - y[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    zero = r2 == 0.0
    coincident = zero if skip is None else zero & ~skip
    inv_r = 1.0 / np.sqrt(np.where(zero, 1.0, r2))
    inv_r[zero] = 0.0
    if skip is not None:
        inv_r[skip] = 0.0
    potential = inv_r @ w
    gradient = None
    if want_gradient:
        gradient = -np.einsum("ij,ijk->ik", inv_r ** 3 * w[None, :], d)
    return potential, gradient, coincident


def _normal_derivative(gradient: Optional[np.ndarray], normals: Optional[np.ndarray]):
    if gradient is None or normals is None:
        return None
    return np.einsum("ij,ij->i", gradient, normals)


def direct_evaluate(
    sources: SourceSet,
    targets: TargetSet,
    skip_coincident: bool = False,
    shared: bool = False,
) -> FieldResult:
    """O(N^2) reference. ``shared`` treats target i and source i as the same point."""
    start = time.perf_counter()
    if shared and len(targets) != len(sources):
        raise ConfigurationError("shared evaluation needs as many targets as sources")
    n_t, n_s = len(targets), len(sources)
    potential = np.zeros(n_t)
    gradient = np.zeros((n_t, 3))
    rows = max(1, DIRECT_PAIR_CHUNK // max(n_s, 1))
    for lo in range(0, n_t, rows):
        hi = min(n_t, lo + rows)
        skip = None
        if shared:
            skip = np.arange(lo, hi)[:, None] == np.arange(n_s)[None, :]
        phi, grad, coincident = _pair_kernel(
            targets.positions[lo:hi], sources.positions, sources.weights, True, skip
        )
        if coincident.any() and not skip_coincident:
            t, s = np.argwhere(coincident)[0]
            raise GeometryError(
                f"target {lo + t} coincides with source {s}",
                ErrorContext("direct_evaluate", metadata={"target": int(lo + t), "source": int(s)}),
            )
        potential[lo:hi] = phi
        gradient[lo:hi] = grad
    potential *= KERNEL_SCALE
    gradient *= KERNEL_SCALE
    return FieldResult(
        potential=potential,
        gradient=gradient,
        normal_derivative=_normal_derivative(gradient, targets.normals),
        timings={"total": time.perf_counter() - start},
    )


def relative_l2_error(approx, exact) -> float:
    """||approx - exact||_2 / ||exact||_2 over all targets."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    norm = float(np.linalg.norm(exact))
    diff = float(np.linalg.norm(approx - exact))
    return diff / norm if norm > 0 else diff


# ---------------------------------------------------------------------------
# Single-expansion operators
# ---------------------------------------------------------------------------

def p2m(positions, weights, center, order: int) -> Expansion:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    center = np.asarray(center, dtype=np.float64)
    packed = weights @ multipole_basis(positions - center, order)
    return Expansion.from_packed(packed, order, center, "multipole")


def m2m(child: Expansion, parent_center) -> Expansion:
    if child.kind != "multipole":
        raise ConfigurationError("m2m needs a multipole expansion")
    parent_center = np.asarray(parent_center, dtype=np.float64)
    packed = m2m_matrix(child.center - parent_center, child.order) @ child.packed()
    return Expansion.from_packed(packed, child.order, parent_center, "multipole")


def m2l(source: Expansion, target_center, use_rotation: Optional[bool] = None) -> Expansion:
    if source.kind != "multipole":
        raise ConfigurationError("m2l needs a multipole expansion")
    p = source.order
    target_center = np.asarray(target_center, dtype=np.float64)
    displacement = target_center - source.center
    if use_rotation is None:
        use_rotation = p >= ROTATION_MIN_ORDER
    if use_rotation:
        packed = RotatedM2L(displacement, p).apply(source.packed()[None])[0]
    else:
        packed = m2l_matrix(displacement, p) @ source.packed()
    return Expansion.from_packed(packed, p, target_center, "local")


def l2l(parent: Expansion, child_center) -> Expansion:
    if parent.kind != "local":
        raise ConfigurationError("l2l needs a local expansion")
    child_center = np.asarray(child_center, dtype=np.float64)
    packed = l2l_matrix(child_center - parent.center, parent.order) @ parent.packed()
    return Expansion.from_packed(packed, parent.order, child_center, "local")


def l2p(local: Expansion, positions, normals=None) -> FieldResult:
    if local.kind != "local":
        raise ConfigurationError("l2p needs a local expansion")
    targets = TargetSet(positions, normals)
    p = local.order
    coeffs = local.packed()
    basis = local_basis(targets.positions - local.center, p)
    potential = KERNEL_SCALE * (basis @ coeffs)
    derivs = gradient_matrices(p) @ coeffs
    gradient = KERNEL_SCALE * (basis[:, : p * p] @ derivs.T)
    return FieldResult(potential, gradient, _normal_derivative(gradient, targets.normals))


def m2p(multipole: Expansion, positions) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    basis = irregular_basis(positions - multipole.center, multipole.order)
    return KERNEL_SCALE * (basis @ multipole.packed())


def p2p(
    targets: TargetSet,
    sources: SourceSet,
    target_ids: Optional[np.ndarray] = None,
    source_ids: Optional[np.ndarray] = None,
) -> FieldResult:
    """Direct near-field sum; pairs with equal ids are the same point and skipped."""
    if not len(targets) or not len(sources):
        zero_gradient = np.zeros((len(targets), 3))
        return FieldResult(
            np.zeros(len(targets)),
            zero_gradient,
            _normal_derivative(zero_gradient, targets.normals),
        )
    skip = None
    if target_ids is not None and source_ids is not None:
        skip = np.asarray(target_ids)[:, None] == np.asarray(source_ids)[None, :]
    phi, grad, coincident = _pair_kernel(
        targets.positions, sources.positions, sources.weights, True, skip
    )
    if coincident.any():
        t, s = np.argwhere(coincident)[0]
        raise GeometryError(f"distinct points coincide: target {t}, source {s}")
    grad = KERNEL_SCALE * grad
    return FieldResult(KERNEL_SCALE * phi, grad, _normal_derivative(grad, targets.normals))


# ---------------------------------------------------------------------------
# Tree sweep
# ---------------------------------------------------------------------------

class FmmPlan:
    """Tree, interaction lists and cached bases for repeated evaluations.

    Built once per geometry; ``evaluate`` can then be called with new weights
    (one call is one matrix-vector product of the BEM operators).
    """

    def __init__(
        self,
        source_positions,
        targets: TargetSet,
        config: FmmConfig,
        shared: bool = False,
    ):
        start = time.perf_counter()
        self.config = config
        self.p = config.order
        self.shared = shared
        self.targets = targets
        source_positions = np.asarray(source_positions, dtype=np.float64).reshape(-1, 3)
        self.n_sources = len(source_positions)
        self.n_targets = len(targets)
        if not self.n_sources or not self.n_targets:
            raise GeometryError("FMM needs at least one source and one target")

        if shared:
            if self.n_targets != self.n_sources:
                raise ConfigurationError("shared evaluation needs as many targets as sources")
            points = source_positions
            source_of = np.arange(self.n_sources)
            target_of = np.arange(self.n_targets)
        else:
            points = np.vstack([source_positions, targets.positions])
            source_of = np.r_[np.arange(self.n_sources), np.full(self.n_targets, -1)]
            target_of = np.r_[np.full(self.n_sources, -1), np.arange(self.n_targets)]

        self.tree: Tree = build_tree(points, config.ncrit)
        self.lists: InteractionLists = interaction_lists(self.tree)
        self.source_of = source_of[self.tree.order]
        self.target_of = target_of[self.tree.order]
        self.source_rows = np.flatnonzero(self.source_of >= 0)
        self.target_rows = np.flatnonzero(self.target_of >= 0)

        lists = self.lists
        self.point_leaf = np.repeat(
            np.arange(lists.n_leaves), lists.leaf_ends - lists.leaf_starts
        )
        self.leaf_centers = np.empty((lists.n_leaves, 3))
        for lev in self.tree.levels:
            mask = lists.leaf_levels == lev.level
            self.leaf_centers[mask] = lev.centers[lists.leaf_indices[mask]]

        self._source_basis = self._cached_basis(self.source_rows, multipole_basis, "source")
        self._target_basis = self._cached_basis(self.target_rows, local_basis, "target")

        self._degrees = packed_degrees(self.p)
        self._m2m = unit_octant_m2m(self.p)
        self._l2l = unit_octant_l2l(self.p)
        self._gradient = gradient_matrices(self.p)
        self._m2l = unit_m2l_rotated(self.p) if config.rotation_enabled else unit_m2l_plain(self.p)
        self._m2l_tasks = [self._plan_m2l(level) for level in range(len(self.tree.levels))]
        self._leaf_blocks = self._split(lists.n_leaves, DETERMINISTIC_LEAF_BLOCK)
        self.build_time = time.perf_counter() - start
        logger.debug(
            f"🚀 FMM plan: {len(points)} points, {self.tree.n_cells} cells, depth "
            f"{self.tree.depth}, p={self.p}, rotation={config.rotation_enabled} "
            f"({self.build_time:.3f}s)"
        )

    def _basis(self, rows: np.ndarray, builder) -> np.ndarray:
        offsets = self.tree.points[rows] - self.leaf_centers[self.point_leaf[rows]]
        return builder(offsets, self.p)

    def _cached_basis(self, rows: np.ndarray, builder, label: str) -> Optional[np.ndarray]:
        """Per-point P2M or L2P basis kept for the life of the plan while memory allows."""
        required_mb = (
            BASIS_MEMORY_HEADROOM * len(rows) * n_coefficients(self.p) * 8 / 1024 / 1024
        )
        try:
            get_error_handler().check_memory(required_mb, f"fmm_{label}_basis")
        except ResourceError as e:
            logger.warning(f"⚠️ {label} basis not cached, rebuilt per evaluation: {e}")
            return None
        return self._basis(rows, builder)

    def _split(self, count: int, deterministic_block: int) -> List[Tuple[int, int]]:
        if self.config.deterministic:
            block = deterministic_block
        elif self.config.threads > 1:
            block = max(1, math.ceil(count / (2 * self.config.threads)))
        else:
            block = max(count, 1)
        return [(lo, min(count, lo + block)) for lo in range(0, count, block)]

    def _plan_m2l(self, level: int):
        targets = self.lists.far_targets[level]
        if not len(targets):
            return []
        sources = self.lists.far_sources[level]
        codes = self.lists.far_codes[level]
        blocks = []
        for lo, hi in self._split(self.tree.levels[level].n_cells, DETERMINISTIC_M2L_BLOCK):
            sel = np.flatnonzero((targets >= lo) & (targets < hi))
            if not sel.size:
                continue
            order = sel[np.argsort(codes[sel], kind="stable")]
            block_codes = codes[order]
            cuts = np.flatnonzero(np.diff(block_codes)) + 1
            groups = [
                (int(block_codes[g[0]]), targets[order[g]], sources[order[g]])
                for g in np.split(np.arange(len(order)), cuts)
            ]
            blocks.append(groups)
        return blocks

    def _run(self, func, tasks):
        if self.config.threads > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                for future in [pool.submit(func, task) for task in tasks]:
                    future.result()
        else:
            for task in tasks:
                func(task)

    # -- phases -------------------------------------------------------------

    def _upward(self, weights_tree: np.ndarray) -> List[np.ndarray]:
        p, size, lists = self.p, n_coefficients(self.p), self.lists
        leaf_multipoles = np.zeros((lists.n_leaves, size))
        rows = self.source_rows
        chunk = max(1, BASIS_CHUNK_ENTRIES // size)
        for lo in range(0, len(rows), chunk):
            part = rows[lo:lo + chunk]
            if self._source_basis is not None:
                basis = self._source_basis[lo:lo + chunk]
            else:
                basis = self._basis(part, multipole_basis)
            weighted = basis * weights_tree[part][:, None]
            leaves, first = np.unique(self.point_leaf[part], return_index=True)
            leaf_multipoles[leaves] += np.add.reduceat(weighted, first, axis=0)

        multipoles = [np.zeros((lev.n_cells, size)) for lev in self.tree.levels]
        for lev in self.tree.levels:
            mask = lists.leaf_levels == lev.level
            multipoles[lev.level][lists.leaf_indices[mask]] = leaf_multipoles[mask]

        for level in range(self.tree.depth, 2, -1):
            child = self.tree.levels[level]
            h = child.half_width
            scaled = multipoles[level] * h ** (-self._degrees)
            octants = child.octants
            for octant in range(8):
                sel = np.flatnonzero(octants == octant)
                if sel.size:
                    moved = (scaled[sel] @ self._m2m[octant].T) * h ** self._degrees
                    multipoles[level - 1][child.parents[sel]] += moved
        return multipoles

    def _downward(self, multipoles: List[np.ndarray], timings: Dict[str, float]):
        size = n_coefficients(self.p)
        locals_ = [np.zeros((lev.n_cells, size)) for lev in self.tree.levels]
        rotated = self.config.rotation_enabled
        t_m2l = t_l2l = 0.0
        for level, lev in enumerate(self.tree.levels):
            t0 = time.perf_counter()
            if level >= 2 and self._m2l_tasks[level]:
                side = 2.0 * lev.half_width
                pre = side ** (-self._degrees)
                post = side ** (-(self._degrees + 1.0))
                scaled = multipoles[level] * pre
                out = locals_[level]

                def apply_block(groups, scaled=scaled, out=out, post=post):
                    for code, targets, sources in groups:
                        op = self._m2l[code]
                        if rotated:
                            contribution = op.apply(scaled[sources])
                        else:
                            contribution = scaled[sources] @ op.T
                        out[targets] += contribution * post

                self._run(apply_block, self._m2l_tasks[level])
            t1 = time.perf_counter()
            if level + 1 < len(self.tree.levels):
                child = self.tree.levels[level + 1]
                h = child.half_width
                octants = child.octants
                for octant in range(8):
                    sel = np.flatnonzero(octants == octant)
                    if sel.size:
                        parent = locals_[level][child.parents[sel]] * h ** self._degrees
                        moved = (parent @ self._l2l[octant].T) * h ** (-self._degrees)
                        locals_[level + 1][sel] += moved
            t_m2l += t1 - t0
            t_l2l += time.perf_counter() - t1
        timings["m2l"] = t_m2l
        timings["l2l"] = t_l2l
        return locals_

    def _leaf_locals(self, locals_: List[np.ndarray]) -> np.ndarray:
        lists = self.lists
        out = np.zeros((lists.n_leaves, n_coefficients(self.p)))
        for lev in self.tree.levels:
            mask = lists.leaf_levels == lev.level
            out[mask] = locals_[lev.level][lists.leaf_indices[mask]]
        return out

    def _l2p(self, leaf_locals: np.ndarray, want_gradient: bool):
        p = self.p
        rows = self.target_rows
        potential = np.zeros(self.tree.n_points)
        gradient = np.zeros((self.tree.n_points, 3)) if want_gradient else None
        derivs = np.einsum("aqp,lp->alq", self._gradient, leaf_locals) if want_gradient else None
        for lo in range(0, len(rows), L2P_CHUNK):
            part = rows[lo:lo + L2P_CHUNK]
            if self._target_basis is not None:
                basis = self._target_basis[lo:lo + L2P_CHUNK]
            else:
                basis = self._basis(part, local_basis)
            leaf = self.point_leaf[part]
            potential[part] = np.einsum("ij,ij->i", basis, leaf_locals[leaf])
            if want_gradient:
                head = basis[:, : p * p]
                for axis in range(3):
                    gradient[part, axis] = np.einsum("ij,ij->i", head, derivs[axis][leaf])
        return potential, gradient

    def _p2p(self, weights_tree: np.ndarray, potential, gradient, want_gradient: bool):
        lists = self.lists
        points = self.tree.points

        def leaf_block(bounds):
            for leaf in range(*bounds):
                lo, hi = lists.leaf_starts[leaf], lists.leaf_ends[leaf]
                tpos = lo + np.flatnonzero(self.target_of[lo:hi] >= 0)
                if not tpos.size:
                    continue
                spos = lists.p2p_sources(leaf)
                spos = spos[self.source_of[spos] >= 0]
                if not spos.size:
                    continue
                skip = tpos[:, None] == spos[None, :] if self.shared else None
                phi, grad, coincident = _pair_kernel(
                    points[tpos], points[spos], weights_tree[spos], want_gradient, skip
                )
                if coincident.any():
                    t, s = np.argwhere(coincident)[0]
                    raise GeometryError(
                        f"distinct points coincide: target {self.target_of[tpos[t]]} and "
                        f"source {self.source_of[spos[s]]}",
                        ErrorContext(
                            "p2p",
                            metadata={
                                "target": int(self.target_of[tpos[t]]),
                                "source": int(self.source_of[spos[s]]),
                            },
                        ),
                    )
                potential[tpos] += phi
                if want_gradient:
                    gradient[tpos] += grad

        self._run(leaf_block, self._leaf_blocks)

    def evaluate(self, weights, want_gradient: bool = True) -> FieldResult:
        """Field of ``weights`` (one per source, original order) at every target."""
        start = time.perf_counter()
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(weights) != self.n_sources:
            raise ConfigurationError(f"expected {self.n_sources} weights, got {len(weights)}")
        weights_tree = np.zeros(self.tree.n_points)
        weights_tree[self.source_rows] = weights[self.source_of[self.source_rows]]

        timings: Dict[str, float] = {"tree": 0.0}
        t0 = time.perf_counter()
        multipoles = self._upward(weights_tree)
        timings["upward"] = time.perf_counter() - t0
        locals_ = self._downward(multipoles, timings)
        t0 = time.perf_counter()
        potential, gradient = self._l2p(self._leaf_locals(locals_), want_gradient)
        timings["l2p"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        if gradient is None and want_gradient:
            gradient = np.zeros((self.tree.n_points, 3))
        self._p2p(weights_tree, potential, gradient, want_gradient)
        timings["p2p"] = time.perf_counter() - t0

        rows = self.target_rows
        out_potential = np.empty(self.n_targets)
        out_potential[self.target_of[rows]] = KERNEL_SCALE * potential[rows]
        out_gradient = None
        if want_gradient:
            out_gradient = np.empty((self.n_targets, 3))
            out_gradient[self.target_of[rows]] = KERNEL_SCALE * gradient[rows]
        timings["total"] = time.perf_counter() - start
        return FieldResult(
            potential=out_potential,
            gradient=out_gradient,
            normal_derivative=_normal_derivative(out_gradient, self.targets.normals),
            timings=timings,
        )


def evaluate(
    sources: SourceSet,
    targets: TargetSet,
    config: Optional[FmmConfig] = None,
    shared: Optional[bool] = None,
) -> FieldResult:
    """One FMM evaluation over the union of source and target positions.

    ``shared`` defaults to True when the target and source position arrays
    are the same object; target i and source i are then one point.
    """
    config = config or FmmConfig()
    if shared is None:
        shared = _same_points(targets.positions, sources.positions)
    plan = FmmPlan(sources.positions, targets, config, shared=shared)
    result = plan.evaluate(sources.weights)
    result.timings["tree"] = plan.build_time
    result.timings["total"] += plan.build_time
    logger.debug(
        f"📊 FMM evaluate: {len(sources)} sources, {len(targets)} targets, "
        f"total {result.timings['total']:.3f}s"
    )
    return result
