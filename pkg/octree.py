#!/usr/bin/env python3
"""
Adaptive octree and FMM interaction lists.

Points are sorted by their level-21 Morton key, so every cell owns a
contiguous range of the reordered point array and the cells of one level
are kept sorted by key (lookups are ``searchsorted`` calls).

Interaction lists per cell:

- neighbours: existing same-level cells adjacent to the cell (self included);
- far list: same-level children of the parent's neighbours that are not
  adjacent to the cell (the M2L partners);
- for leaves, the P2P source ranges: subtrees of the same-level neighbours
  plus the coarser leaves that touch one of the leaf's ancestors.

Every ordered pair of points is accounted for exactly once, either by P2P
or by one M2L at a single level (see ``pair_accounting``).
"""

import csv
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from error_handling import ConfigurationError, ErrorContext, GeometryError

logger = logging.getLogger("bibeefmm.octree")

MAX_LEVEL = 21
DEFAULT_NCRIT = 64
ROOT_MARGIN = 1e-6

_SPREAD_STEPS = (
    (32, 0x1F00000000FFFF),
    (16, 0x1F0000FF0000FF),
    (8, 0x100F00F00F00F00F),
    (4, 0x10C30C30C30C30C3),
    (2, 0x1249249249249249),
)
_COMPACT_STEPS = (
    (2, 0x10C30C30C30C30C3),
    (4, 0x100F00F00F00F00F),
    (8, 0x1F0000FF0000FF),
    (16, 0x1F00000000FFFF),
    (32, 0x1FFFFF),
)

NEIGHBOR_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
SELF_OFFSET = 13
FAR_OFFSETS = np.array(
    [o for o in itertools.product(range(-3, 4), repeat=3) if max(abs(v) for v in o) >= 2],
    dtype=np.int64,
)


def offset_code(offset) -> int:
    """Index of an integer offset in [-3, 3]^3."""
    dx, dy, dz = (int(v) for v in offset)
    return (dx + 3) * 49 + (dy + 3) * 7 + (dz + 3)


def offset_from_code(code: int) -> Tuple[int, int, int]:
    return code // 49 - 3, (code // 7) % 7 - 3, code % 7 - 3


FAR_OFFSET_CODES = np.array([offset_code(o) for o in FAR_OFFSETS], dtype=np.int64)


class MortonKey(NamedTuple):
    level: int
    key: int


# ---------------------------------------------------------------------------
# Morton keys
# ---------------------------------------------------------------------------

def spread_bits(values) -> np.ndarray:
    """Insert two zero bits between the low 21 bits of each value."""
    x = np.asarray(values).astype(np.uint64) & np.uint64(0x1FFFFF)
    for shift, mask in _SPREAD_STEPS:
        x = (x | (x << np.uint64(shift))) & np.uint64(mask)
    return x


def compact_bits(values) -> np.ndarray:
    x = np.asarray(values).astype(np.uint64) & np.uint64(0x1249249249249249)
    for shift, mask in _COMPACT_STEPS:
        x = (x ^ (x >> np.uint64(shift))) & np.uint64(mask)
    return x


def encode_array(ix, iy, iz) -> np.ndarray:
    """Vectorized interleave, x in the least significant bit of each triple."""
    return spread_bits(ix) | (spread_bits(iy) << np.uint64(1)) | (spread_bits(iz) << np.uint64(2))


def decode_array(keys) -> np.ndarray:
    """Inverse of ``encode_array``; returns an (n, 3) int64 array."""
    keys = np.asarray(keys).astype(np.uint64)
    return np.stack(
        [
            compact_bits(keys),
            compact_bits(keys >> np.uint64(1)),
            compact_bits(keys >> np.uint64(2)),
        ],
        axis=-1,
    ).astype(np.int64)


def morton_encode(ix: int, iy: int, iz: int, level: int) -> MortonKey:
    if not 0 <= level <= MAX_LEVEL:
        raise ConfigurationError(f"Morton level {level} outside 0..{MAX_LEVEL}")
    limit = 1 << level
    for name, value in (("ix", ix), ("iy", iy), ("iz", iz)):
        if not 0 <= value < limit:
            raise ConfigurationError(
                f"grid index {name}={value} out of range 0..{limit - 1} at level {level}"
            )
    return MortonKey(level, int(encode_array(ix, iy, iz)))


def morton_decode(key: MortonKey) -> Tuple[int, int, int]:
    ix, iy, iz = decode_array(np.uint64(key.key))
    return int(ix), int(iy), int(iz)


def _ranges_to_index(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Concatenation of ``arange(s, e)`` for every pair, without a Python loop."""
    starts = np.asarray(starts, dtype=np.int64)
    lengths = np.asarray(ends, dtype=np.int64) - starts
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.cumsum(lengths) - lengths
    return np.arange(total, dtype=np.int64) + np.repeat(starts - offsets, lengths)


# ---------------------------------------------------------------------------
# Tree
# ---------------------------------------------------------------------------

@dataclass
class TreeLevel:
    """All cells of one level, sorted by Morton key."""

    level: int
    keys: np.ndarray
    coords: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    parents: np.ndarray
    centers: np.ndarray
    half_width: float
    child_first: np.ndarray = None
    child_count: np.ndarray = None

    @property
    def n_cells(self) -> int:
        return len(self.keys)

    @property
    def counts(self) -> np.ndarray:
        return self.ends - self.starts

    @property
    def is_leaf(self) -> np.ndarray:
        return self.child_count == 0

    @property
    def octants(self) -> np.ndarray:
        """Position of each cell inside its parent (bit 0 = x, bit 1 = y, bit 2 = z)."""
        return (self.keys & np.uint64(7)).astype(np.int64)


@dataclass
class Cell:
    """Read-only view of one cell."""

    key: MortonKey
    center: np.ndarray
    half_width: float
    point_range: Tuple[int, int]
    children: List[int]
    multipole: Optional[np.ndarray] = None
    local: Optional[np.ndarray] = None


@dataclass
class Tree:
    center: np.ndarray
    half_width: float
    ncrit: int
    points: np.ndarray
    order: np.ndarray
    inverse: np.ndarray
    levels: List[TreeLevel] = field(default_factory=list)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def n_cells(self) -> int:
        return sum(level.n_cells for level in self.levels)

    def cell(self, level: int, index: int) -> Cell:
        lev = self.levels[level]
        first, count = int(lev.child_first[index]), int(lev.child_count[index])
        return Cell(
            key=MortonKey(level, int(lev.keys[index])),
            center=lev.centers[index].copy(),
            half_width=lev.half_width,
            point_range=(int(lev.starts[index]), int(lev.ends[index])),
            children=list(range(first, first + count)),
        )

    def leaves(self) -> Tuple[np.ndarray, np.ndarray]:
        """(level, index) of every leaf, ordered by the start of its point range."""
        levels, indices, starts = [], [], []
        for lev in self.levels:
            leaf = np.flatnonzero(lev.is_leaf)
            levels.append(np.full(leaf.size, lev.level, dtype=np.int64))
            indices.append(leaf)
            starts.append(lev.starts[leaf])
        levels, indices, starts = (np.concatenate(a) for a in (levels, indices, starts))
        order = np.argsort(starts, kind="stable")
        return levels[order], indices[order]

    def to_csv(self, path) -> str:
        """Debug dump of every cell."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "key", "ix", "iy", "iz", "start", "end", "count", "is_leaf"])
            for lev in self.levels:
                for i in range(lev.n_cells):
                    writer.writerow(
                        [
                            lev.level,
                            int(lev.keys[i]),
                            *(int(c) for c in lev.coords[i]),
                            int(lev.starts[i]),
                            int(lev.ends[i]),
                            int(lev.ends[i] - lev.starts[i]),
                            int(bool(lev.is_leaf[i])),
                        ]
                    )
        return str(path)


def _make_level(level, keys, starts, ends, parents, corner, root_half) -> TreeLevel:
    coords = decode_array(keys).reshape(-1, 3)
    side = 2.0 * root_half / (1 << level)
    centers = corner + (coords + 0.5) * side
    return TreeLevel(
        level=level,
        keys=keys,
        coords=coords,
        starts=starts,
        ends=ends,
        parents=parents,
        centers=centers,
        half_width=0.5 * side,
    )


def build_tree(points, ncrit: int = DEFAULT_NCRIT, max_level: int = MAX_LEVEL) -> Tree:
    """Adaptive octree: cells holding more than ``ncrit`` points are split."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(points):
        raise GeometryError("cannot build a tree over zero points", ErrorContext("build_tree"))
    if ncrit < 1:
        raise ConfigurationError(f"ncrit must be at least 1, got {ncrit}")
    if not 0 <= max_level <= MAX_LEVEL:
        raise ConfigurationError(f"max_level must lie in 0..{MAX_LEVEL}")
    if not np.all(np.isfinite(points)):
        raise GeometryError("point coordinates must be finite", ErrorContext("build_tree"))

    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * float((hi - lo).max()) * (1.0 + ROOT_MARGIN)
    if half <= 0.0:
        half = 1.0
    corner = center - half

    resolution = 1 << MAX_LEVEL
    grid = np.floor((points - corner) * (resolution / (2.0 * half))).astype(np.int64)
    np.clip(grid, 0, resolution - 1, out=grid)
    keys = encode_array(grid[:, 0], grid[:, 1], grid[:, 2])
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))

    n = len(points)
    levels = [
        _make_level(
            0,
            np.zeros(1, dtype=np.uint64),
            np.zeros(1, dtype=np.int64),
            np.array([n], dtype=np.int64),
            np.array([-1], dtype=np.int64),
            corner,
            half,
        )
    ]

    while True:
        current = levels[-1]
        counts = current.counts
        if current.level >= max_level:
            current.child_first = np.zeros(current.n_cells, dtype=np.int64)
            current.child_count = np.zeros(current.n_cells, dtype=np.int64)
            overfull = np.flatnonzero(counts > ncrit)
            if overfull.size:
                logger.warning(
                    f"⚠️  {overfull.size} cells at max depth {current.level} keep more than "
                    f"{ncrit} points (largest holds {int(counts[overfull].max())}); "
                    "coincident or near-coincident points"
                )
            break

        split = np.flatnonzero(counts > ncrit)
        if not split.size:
            current.child_first = np.zeros(current.n_cells, dtype=np.int64)
            current.child_count = np.zeros(current.n_cells, dtype=np.int64)
            break

        child_level = current.level + 1
        index = _ranges_to_index(current.starts[split], current.ends[split])
        prefix = sorted_keys[index] >> np.uint64(3 * (MAX_LEVEL - child_level))
        owner = np.repeat(split, counts[split])
        boundary = np.flatnonzero(np.r_[True, prefix[1:] != prefix[:-1]])
        last = np.r_[boundary[1:], len(index)] - 1

        child_parents = owner[boundary]
        child_count = np.bincount(child_parents, minlength=current.n_cells).astype(np.int64)
        current.child_count = child_count
        current.child_first = np.searchsorted(child_parents, np.arange(current.n_cells))
        current.child_first = current.child_first.astype(np.int64)

        levels.append(
            _make_level(
                child_level,
                prefix[boundary],
                index[boundary],
                index[last] + 1,
                child_parents.astype(np.int64),
                corner,
                half,
            )
        )

    tree = Tree(
        center=center,
        half_width=half,
        ncrit=ncrit,
        points=points[order],
        order=order,
        inverse=inverse,
        levels=levels,
    )
    logger.debug(
        f"Tree built: {n} points, {tree.n_cells} cells, depth {tree.depth}, ncrit {ncrit}"
    )
    return tree


# ---------------------------------------------------------------------------
# Interaction lists
# ---------------------------------------------------------------------------

@dataclass
class InteractionLists:
    """Per-level cell lists. ``far_codes`` hold ``offset_code(source - target)``."""

    neighbors: List[np.ndarray]
    far_targets: List[np.ndarray]
    far_sources: List[np.ndarray]
    far_codes: List[np.ndarray]
    leaf_levels: np.ndarray
    leaf_indices: np.ndarray
    leaf_starts: np.ndarray
    leaf_ends: np.ndarray
    p2p_ptr: np.ndarray
    p2p_starts: np.ndarray
    p2p_ends: np.ndarray

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_levels)

    @property
    def n_far_pairs(self) -> int:
        return int(sum(len(t) for t in self.far_targets))

    def neighbor_list(self, level: int, index: int) -> List[int]:
        row = self.neighbors[level][index]
        return [int(v) for v in row[row >= 0]]

    def far_list(self, level: int, index: int) -> List[int]:
        mask = self.far_targets[level] == index
        return sorted(int(v) for v in self.far_sources[level][mask])

    def p2p_ranges(self, leaf: int) -> List[Tuple[int, int]]:
        lo, hi = self.p2p_ptr[leaf], self.p2p_ptr[leaf + 1]
        return [(int(s), int(e)) for s, e in zip(self.p2p_starts[lo:hi], self.p2p_ends[lo:hi])]

    def p2p_sources(self, leaf: int) -> np.ndarray:
        lo, hi = self.p2p_ptr[leaf], self.p2p_ptr[leaf + 1]
        return _ranges_to_index(self.p2p_starts[lo:hi], self.p2p_ends[lo:hi])


def _lookup(level: TreeLevel, coords: np.ndarray) -> np.ndarray:
    """Cell index at integer coordinates, -1 where no such cell exists."""
    limit = 1 << level.level
    inside = np.all((coords >= 0) & (coords < limit), axis=1)
    clipped = np.clip(coords, 0, limit - 1)
    keys = encode_array(clipped[:, 0], clipped[:, 1], clipped[:, 2])
    pos = np.minimum(np.searchsorted(level.keys, keys), level.n_cells - 1)
    found = inside & (level.keys[pos] == keys)
    return np.where(found, pos, -1)


def _group_ptr(owners: np.ndarray, n_owners: int) -> np.ndarray:
    return np.r_[0, np.cumsum(np.bincount(owners, minlength=n_owners))].astype(np.int64)


def interaction_lists(tree: Tree) -> InteractionLists:
    """Neighbour, far and leaf P2P lists for every cell of ``tree``."""
    neighbors, far_targets, far_sources, far_codes = [], [], [], []
    for lev in tree.levels:
        nb = np.stack([_lookup(lev, lev.coords + o) for o in NEIGHBOR_OFFSETS], axis=1)
        neighbors.append(nb)

        targets, sources, codes = [], [], []
        if lev.level >= 2:
            parent_coords = lev.coords >> 1
            for o, code in zip(FAR_OFFSETS, FAR_OFFSET_CODES):
                candidate = lev.coords + o
                near_parent = np.all(np.abs((candidate >> 1) - parent_coords) <= 1, axis=1)
                if not near_parent.any():
                    continue
                found = _lookup(lev, candidate)
                hit = np.flatnonzero(near_parent & (found >= 0))
                if hit.size:
                    targets.append(hit)
                    sources.append(found[hit])
                    codes.append(np.full(hit.size, code, dtype=np.int64))
        empty = np.zeros(0, dtype=np.int64)
        far_targets.append(np.concatenate(targets) if targets else empty)
        far_sources.append(np.concatenate(sources) if sources else empty)
        far_codes.append(np.concatenate(codes) if codes else empty)

    leaf_levels, leaf_indices = tree.leaves()
    n_leaves = len(leaf_levels)
    leaf_id = [np.full(lev.n_cells, -1, dtype=np.int64) for lev in tree.levels]
    leaf_id_values = np.arange(n_leaves, dtype=np.int64)
    for lvl in range(len(tree.levels)):
        mask = leaf_levels == lvl
        leaf_id[lvl][leaf_indices[mask]] = leaf_id_values[mask]

    owners, starts, ends = [], [], []
    # coarse leaves touching an ancestor, as point ranges per cell of the current level
    coarse_ptr = np.zeros(2, dtype=np.int64)
    coarse_start = np.zeros(0, dtype=np.int64)
    coarse_end = np.zeros(0, dtype=np.int64)
    for lvl, lev in enumerate(tree.levels):
        nb = neighbors[lvl]
        is_leaf = lev.is_leaf

        leaf_cells = np.flatnonzero(is_leaf)
        if leaf_cells.size:
            rows = nb[leaf_cells]
            rr, cc = np.nonzero(rows >= 0)
            cells = rows[rr, cc]
            owners.append(leaf_id[lvl][leaf_cells[rr]])
            starts.append(lev.starts[cells])
            ends.append(lev.ends[cells])

            counts = coarse_ptr[leaf_cells + 1] - coarse_ptr[leaf_cells]
            idx = _ranges_to_index(coarse_ptr[leaf_cells], coarse_ptr[leaf_cells + 1])
            owners.append(np.repeat(leaf_id[lvl][leaf_cells], counts))
            starts.append(coarse_start[idx])
            ends.append(coarse_end[idx])

        if lvl + 1 >= len(tree.levels):
            break

        # pass coarse(c) plus the leaf neighbours of c down to the children of c
        inner = np.flatnonzero(~is_leaf)
        rows = nb[inner]
        rr, cc = np.nonzero((rows >= 0) & (np.arange(27) != SELF_OFFSET))
        cells = rows[rr, cc]
        keep = is_leaf[cells]
        pass_owner = [inner[rr[keep]]]
        pass_start = [lev.starts[cells[keep]]]
        pass_end = [lev.ends[cells[keep]]]

        counts = coarse_ptr[inner + 1] - coarse_ptr[inner]
        idx = _ranges_to_index(coarse_ptr[inner], coarse_ptr[inner + 1])
        pass_owner.append(np.repeat(inner, counts))
        pass_start.append(coarse_start[idx])
        pass_end.append(coarse_end[idx])

        q_owner = np.concatenate(pass_owner)
        order = np.argsort(q_owner, kind="stable")
        q_owner = q_owner[order]
        q_start = np.concatenate(pass_start)[order]
        q_end = np.concatenate(pass_end)[order]
        q_ptr = _group_ptr(q_owner, lev.n_cells)

        child = tree.levels[lvl + 1]
        parents = child.parents
        counts = q_ptr[parents + 1] - q_ptr[parents]
        idx = _ranges_to_index(q_ptr[parents], q_ptr[parents + 1])
        coarse_ptr = np.r_[0, np.cumsum(counts)].astype(np.int64)
        coarse_start = q_start[idx]
        coarse_end = q_end[idx]

    owners = np.concatenate(owners)
    starts = np.concatenate(starts)
    ends = np.concatenate(ends)
    order = np.lexsort((starts, owners))
    owners, starts, ends = owners[order], starts[order], ends[order]
    new_segment = np.r_[True, (owners[1:] != owners[:-1]) | (starts[1:] != ends[:-1])]
    first = np.flatnonzero(new_segment)
    last = np.r_[first[1:], len(owners)] - 1

    lists = InteractionLists(
        neighbors=neighbors,
        far_targets=far_targets,
        far_sources=far_sources,
        far_codes=far_codes,
        leaf_levels=leaf_levels,
        leaf_indices=leaf_indices,
        leaf_starts=np.array(
            [tree.levels[l].starts[i] for l, i in zip(leaf_levels, leaf_indices)], dtype=np.int64
        ),
        leaf_ends=np.array(
            [tree.levels[l].ends[i] for l, i in zip(leaf_levels, leaf_indices)], dtype=np.int64
        ),
        p2p_ptr=_group_ptr(owners[first], n_leaves),
        p2p_starts=starts[first],
        p2p_ends=ends[last],
    )
    logger.debug(
        f"Interaction lists: {n_leaves} leaves, {lists.n_far_pairs} M2L pairs, "
        f"{len(lists.p2p_starts)} P2P ranges"
    )
    return lists


def pair_accounting(tree: Tree, lists: InteractionLists) -> np.ndarray:
    """How many times each ordered (target, source) pair is handled, in tree order.

    A correct list set yields a matrix of ones. Dense, so only for small trees.
    """
    n = tree.n_points
    counts = np.zeros((n, n), dtype=np.int64)
    for lvl, lev in enumerate(tree.levels):
        for t, s in zip(lists.far_targets[lvl], lists.far_sources[lvl]):
            counts[lev.starts[t]:lev.ends[t], lev.starts[s]:lev.ends[s]] += 1
    for leaf in range(lists.n_leaves):
        lo, hi = lists.leaf_starts[leaf], lists.leaf_ends[leaf]
        for s, e in lists.p2p_ranges(leaf):
            counts[lo:hi, s:e] += 1
    return counts
