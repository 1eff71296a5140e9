"""
Tests for the adaptive octree and its interaction lists
"""

import csv
import os
import tempfile

import numpy as np
import pytest

from error_handling import ConfigurationError, GeometryError
from octree import (
    FAR_OFFSETS,
    MortonKey,
    build_tree,
    interaction_lists,
    morton_decode,
    morton_encode,
    offset_code,
    offset_from_code,
    pair_accounting,
)


def _uniform_grid(cells_per_side: int) -> np.ndarray:
    """One point at the centre of every cell of a regular grid over [0, 1]^3,
    plus the two cube corners so the root box is exactly the unit cube."""
    ticks = (np.arange(cells_per_side) + 0.5) / cells_per_side
    grid = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
    return np.vstack([grid, [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]])


class TestMortonKeys:
    """Test Morton key encoding"""

    def test_x_is_least_significant(self):
        assert morton_encode(1, 0, 0, 1).key == 1
        assert morton_encode(0, 1, 0, 1).key == 2
        assert morton_encode(0, 0, 1, 1).key == 4

    def test_decode_inverts_encode(self):
        for ix, iy, iz in [(0, 0, 0), (5, 17, 3), (2**21 - 1, 12345, 777)]:
            key = morton_encode(ix, iy, iz, 21)
            assert isinstance(key, MortonKey)
            assert morton_decode(key) == (ix, iy, iz)

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ConfigurationError):
            morton_encode(4, 0, 0, 2)
        with pytest.raises(ConfigurationError):
            morton_encode(0, 0, 0, 22)


class TestFarOffsets:
    """Test the table of M2L offsets"""

    def test_offset_count(self):
        # the 7x7x7 block minus the 3x3x3 neighbourhood
        assert len(FAR_OFFSETS) == 316
        assert np.all(np.abs(FAR_OFFSETS).max(axis=1) >= 2)

    def test_offset_code_layout(self):
        assert offset_code((-3, -3, -3)) == 0
        assert offset_code((0, 0, 0)) == 3 * 49 + 3 * 7 + 3
        assert offset_code((1, -2, 3)) == 4 * 49 + 1 * 7 + 6
        assert offset_from_code(offset_code((2, -1, 0))) == (2, -1, 0)


class TestBuildTree:
    """Test tree construction"""

    def test_points_are_partitioned_by_leaves(self):
        rng = np.random.default_rng(1)
        points = rng.random((500, 3))
        tree = build_tree(points, ncrit=16)

        np.testing.assert_array_equal(tree.points, points[tree.order])
        np.testing.assert_array_equal(tree.order[tree.inverse], np.arange(500))

        levels, indices = tree.leaves()
        covered = 0
        for level, index in zip(levels, indices):
            lev = tree.levels[level]
            count = int(lev.ends[index] - lev.starts[index])
            assert 0 < count <= 16
            assert int(lev.starts[index]) == covered
            covered += count
        assert covered == 500

    def test_leaf_points_lie_inside_their_cell(self):
        rng = np.random.default_rng(2)
        tree = build_tree(rng.normal(size=(400, 3)), ncrit=10)
        levels, indices = tree.leaves()
        for level, index in zip(levels, indices):
            cell = tree.cell(int(level), int(index))
            lo, hi = cell.point_range
            offsets = np.abs(tree.points[lo:hi] - cell.center)
            assert np.all(offsets <= cell.half_width * (1 + 1e-9))

    def test_single_cell_when_below_ncrit(self):
        tree = build_tree(np.random.default_rng(3).random((20, 3)), ncrit=64)
        assert tree.depth == 0
        assert tree.n_cells == 1

    def test_empty_point_set_rejected(self):
        with pytest.raises(GeometryError):
            build_tree(np.zeros((0, 3)))

    def test_invalid_ncrit_rejected(self):
        with pytest.raises(ConfigurationError):
            build_tree(np.zeros((4, 3)), ncrit=0)

    def test_coincident_points_stop_at_max_level(self, caplog):
        points = np.tile([[0.25, 0.5, 0.75]], (40, 1))
        tree = build_tree(points, ncrit=8, max_level=4)
        assert tree.depth == 4
        assert "max depth" in caplog.text

    def test_to_csv(self):
        tree = build_tree(np.random.default_rng(4).random((300, 3)), ncrit=20)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "tree.csv")
            tree.to_csv(path)
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        assert rows[0] == ["level", "key", "ix", "iy", "iz", "start", "end", "count", "is_leaf"]
        assert len(rows) == tree.n_cells + 1
        assert sum(int(r[7]) for r in rows[1:] if r[8] == "1") == 300


class TestInteractionLists:
    """Test neighbour, far and P2P lists"""

    def test_interior_cell_has_189_far_cells(self):
        tree = build_tree(_uniform_grid(8), ncrit=2)
        assert tree.depth == 3
        lists = interaction_lists(tree)

        level = tree.levels[3]
        index = int(np.flatnonzero((level.coords == [3, 4, 3]).all(axis=1))[0])
        assert len(lists.neighbor_list(3, index)) == 27
        assert len(lists.far_list(3, index)) == 189

    def test_far_cells_are_well_separated(self):
        tree = build_tree(np.random.default_rng(5).random((800, 3)), ncrit=12)
        lists = interaction_lists(tree)
        for lvl, lev in enumerate(tree.levels):
            for t, s in zip(lists.far_targets[lvl], lists.far_sources[lvl]):
                gap = np.abs(lev.coords[t].astype(int) - lev.coords[s].astype(int)).max()
                assert 2 <= gap <= 3

    @pytest.mark.parametrize(
        "distribution",
        ["uniform", "clustered", "surface"],
    )
    def test_every_pair_counted_once(self, distribution):
        rng = np.random.default_rng(6)
        if distribution == "uniform":
            points = rng.random((400, 3))
        elif distribution == "clustered":
            points = np.vstack([rng.random((200, 3)), 0.5 + 0.01 * rng.random((200, 3))])
        else:
            v = rng.normal(size=(400, 3))
            points = v / np.linalg.norm(v, axis=1)[:, None]
        tree = build_tree(points, ncrit=8)
        counts = pair_accounting(tree, interaction_lists(tree))
        np.testing.assert_array_equal(counts, np.ones_like(counts))

    def test_p2p_sources_match_ranges(self):
        tree = build_tree(np.random.default_rng(7).random((300, 3)), ncrit=10)
        lists = interaction_lists(tree)
        for leaf in range(lists.n_leaves):
            expected = np.concatenate(
                [np.arange(s, e) for s, e in lists.p2p_ranges(leaf)]
            )
            np.testing.assert_array_equal(lists.p2p_sources(leaf), expected)
            assert lists.leaf_starts[leaf] in expected
