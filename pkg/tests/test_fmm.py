"""
Tests for the fast multipole method
"""

import math
import os
import time
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from error_handling import ConfigurationError, GeometryError
from fmm import (
    KERNEL_SCALE,
    Expansion,
    FmmConfig,
    FmmPlan,
    SourceSet,
    TargetSet,
    direct_evaluate,
    evaluate,
    l2l,
    l2p,
    m2l,
    m2m,
    m2p,
    p2m,
    p2p,
    relative_l2_error,
)


@pytest.fixture
def random_charges():
    rng = np.random.default_rng(21)
    positions = rng.random((2000, 3))
    return SourceSet(positions, rng.uniform(-1.0, 1.0, len(positions)))


def _unit_normals(n, seed=0):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


class TestDomainTypes:
    """Test input validation of the FMM types"""

    def test_weights_must_match_positions(self):
        with pytest.raises(ConfigurationError):
            SourceSet(np.zeros((3, 3)), [1.0, 2.0])

    def test_non_unit_normals_rejected(self):
        with pytest.raises(GeometryError):
            TargetSet(np.zeros((2, 3)), np.array([[0.0, 0.0, 1.0], [0.0, 2.0, 0.0]]))

    def test_non_finite_positions_rejected(self):
        with pytest.raises(GeometryError):
            TargetSet(np.array([[0.0, np.nan, 0.0]]))

    @pytest.mark.parametrize("order", [0, 31])
    def test_order_range(self, order):
        with pytest.raises(ConfigurationError):
            FmmConfig(order=order)

    def test_rotation_default_depends_on_order(self):
        assert FmmConfig(order=8).rotation_enabled
        assert not FmmConfig(order=5).rotation_enabled
        assert not FmmConfig(order=12, use_rotation=False).rotation_enabled

    def test_expansion_kind_checked(self):
        with pytest.raises(ConfigurationError):
            Expansion(2, np.zeros(3), "dipole", np.zeros(6))


class TestDirectEvaluate:
    """Test the O(N^2) reference"""

    def test_two_charges(self):
        sources = SourceSet([[0.0, 0.0, 0.0]], [2.0])
        targets = TargetSet([[0.0, 0.0, 2.0]], [[0.0, 0.0, 1.0]])
        result = direct_evaluate(sources, targets)
        assert result.potential[0] == pytest.approx(2.0 / (4 * math.pi * 2.0))
        # d/dz of 1/r at r = 2 is -1/4
        assert result.normal_derivative[0] == pytest.approx(-2.0 / 4.0 * KERNEL_SCALE)
        np.testing.assert_allclose(result.gradient[0, :2], 0.0, atol=1e-15)

    def test_coincident_points_raise(self):
        sources = SourceSet([[1.0, 1.0, 1.0]], [1.0])
        with pytest.raises(GeometryError):
            direct_evaluate(sources, TargetSet([[1.0, 1.0, 1.0]]))

    def test_coincident_points_skipped_on_request(self):
        sources = SourceSet([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]], [1.0, 1.0])
        result = direct_evaluate(sources, TargetSet([[1.0, 1.0, 1.0]]), skip_coincident=True)
        assert result.potential[0] == pytest.approx(KERNEL_SCALE / math.sqrt(3.0))

    def test_shared_excludes_self_interaction(self):
        positions = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        result = direct_evaluate(SourceSet(positions, [1.0, 3.0]), TargetSet(positions), shared=True)
        np.testing.assert_allclose(result.potential, [3.0 * KERNEL_SCALE, KERNEL_SCALE])

    def test_relative_l2_error(self):
        assert relative_l2_error([1.0, 1.0], [1.0, 1.0]) == 0.0
        assert relative_l2_error([2.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)


class TestSingleExpansionOperators:
    """Test P2M, M2M, M2L, L2L, L2P and M2P against direct sums"""

    def setup_method(self):
        rng = np.random.default_rng(22)
        self.sources = 0.25 * (rng.random((30, 3)) - 0.5)
        self.weights = rng.uniform(-1.0, 1.0, 30)
        self.targets = np.array([4.0, 0.0, 0.0]) + 0.25 * (rng.random((10, 3)) - 0.5)
        self.exact = direct_evaluate(
            SourceSet(self.sources, self.weights), TargetSet(self.targets)
        )

    def test_m2p(self):
        multipole = p2m(self.sources, self.weights, np.zeros(3), 10)
        np.testing.assert_allclose(
            m2p(multipole, self.targets), self.exact.potential, rtol=1e-9
        )

    def test_full_chain(self):
        multipole = p2m(self.sources, self.weights, [0.05, 0.0, 0.0], 12)
        multipole = m2m(multipole, np.zeros(3))
        local = m2l(multipole, [4.0, 0.0, 0.0])
        local = l2l(local, [4.05, 0.05, 0.0])
        result = l2p(local, self.targets)
        np.testing.assert_allclose(result.potential, self.exact.potential, rtol=1e-8)
        np.testing.assert_allclose(
            result.gradient, self.exact.gradient, atol=1e-7 * np.abs(self.exact.gradient).max()
        )

    def test_plain_and_rotated_m2l_agree(self):
        multipole = p2m(self.sources, self.weights, np.zeros(3), 8)
        plain = m2l(multipole, [3.0, 1.0, -1.0], use_rotation=False)
        rotated = m2l(multipole, [3.0, 1.0, -1.0], use_rotation=True)
        np.testing.assert_allclose(
            rotated.coefficients, plain.coefficients,
            atol=1e-10 * np.abs(plain.coefficients).max(),
        )

    def test_negative_order_coefficients(self):
        multipole = p2m(self.sources, self.weights, np.zeros(3), 4)
        assert multipole.coefficient(3, -2) == pytest.approx(np.conj(multipole.coefficient(3, 2)))
        assert multipole.coefficient(3, -1) == pytest.approx(-np.conj(multipole.coefficient(3, 1)))

    def test_operators_check_expansion_kind(self):
        multipole = p2m(self.sources, self.weights, np.zeros(3), 4)
        with pytest.raises(ConfigurationError):
            l2p(multipole, self.targets)
        with pytest.raises(ConfigurationError):
            l2l(multipole, np.zeros(3))

    def test_p2p_skips_equal_ids(self):
        positions = np.array([[0.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        result = p2p(
            TargetSet(positions), SourceSet(positions, [1.0, 1.0]),
            target_ids=np.array([0, 1]), source_ids=np.array([0, 1]),
        )
        np.testing.assert_allclose(result.potential, [0.5 * KERNEL_SCALE] * 2)


class TestEvaluate:
    """Test the tree-based evaluation"""

    def test_small_problem_is_exact(self):
        rng = np.random.default_rng(23)
        sources = SourceSet(rng.random((30, 3)), rng.normal(size=30))
        targets = TargetSet(rng.random((30, 3)) + 0.1)
        fast = evaluate(sources, targets, FmmConfig(order=4, ncrit=64))
        exact = direct_evaluate(sources, targets)
        assert relative_l2_error(fast.potential, exact.potential) <= 1e-12
        assert relative_l2_error(fast.gradient, exact.gradient) <= 1e-12

    def test_shared_points_accuracy(self, random_charges):
        targets = TargetSet(random_charges.positions)
        fast = evaluate(random_charges, targets, FmmConfig(order=10, ncrit=32))
        exact = direct_evaluate(random_charges, targets, shared=True)
        assert relative_l2_error(fast.potential, exact.potential) <= 1e-4
        assert relative_l2_error(fast.gradient, exact.gradient) <= 1e-3

    def test_separate_targets_with_normals(self, random_charges):
        rng = np.random.default_rng(24)
        targets = TargetSet(rng.random((500, 3)) * 1.5 - 0.25, _unit_normals(500))
        fast = evaluate(random_charges, targets, FmmConfig(order=10, ncrit=32))
        exact = direct_evaluate(random_charges, targets)
        assert relative_l2_error(fast.potential, exact.potential) <= 1e-4
        assert relative_l2_error(fast.normal_derivative, exact.normal_derivative) <= 1e-3

    def test_error_decreases_with_order(self, random_charges):
        targets = TargetSet(random_charges.positions)
        exact = direct_evaluate(random_charges, targets, shared=True).potential
        errors = [
            relative_l2_error(
                evaluate(random_charges, targets, FmmConfig(order=p, ncrit=32)).potential, exact
            )
            for p in (3, 6, 10)
        ]
        assert errors[0] > errors[1] > errors[2]

    def test_rotation_does_not_change_result(self, random_charges):
        targets = TargetSet(random_charges.positions)
        plain = evaluate(random_charges, targets, FmmConfig(order=8, use_rotation=False))
        rotated = evaluate(random_charges, targets, FmmConfig(order=8, use_rotation=True))
        assert relative_l2_error(rotated.potential, plain.potential) <= 1e-9

    def test_deterministic_across_thread_counts(self, random_charges):
        targets = TargetSet(random_charges.positions)
        results = [
            evaluate(
                random_charges, targets,
                FmmConfig(order=6, ncrit=32, deterministic=True, threads=threads),
            )
            for threads in (1, 4)
        ]
        np.testing.assert_array_equal(results[0].potential, results[1].potential)
        np.testing.assert_array_equal(results[0].gradient, results[1].gradient)

    def test_plan_reuse_is_linear(self, random_charges):
        targets = TargetSet(random_charges.positions)
        plan = FmmPlan(random_charges.positions, targets, FmmConfig(order=6), shared=True)
        w = random_charges.weights
        combined = plan.evaluate(2.0 * w + 1.0).potential
        separate = 2.0 * plan.evaluate(w).potential + plan.evaluate(np.ones_like(w)).potential
        np.testing.assert_allclose(combined, separate, rtol=1e-9, atol=1e-9)

    def test_plan_checks_weight_count(self, random_charges):
        plan = FmmPlan(
            random_charges.positions, TargetSet(random_charges.positions), FmmConfig(order=4),
            shared=True,
        )
        with pytest.raises(ConfigurationError):
            plan.evaluate(np.ones(3))

    def test_timings_reported(self, random_charges):
        result = evaluate(random_charges, TargetSet(random_charges.positions), FmmConfig(order=4))
        for key in ("tree", "upward", "m2l", "p2p", "total"):
            assert key in result.timings
        assert result.timings["total"] >= result.timings["tree"]

    def test_gradient_matches_finite_difference(self, random_charges):
        rng = np.random.default_rng(25)
        points = rng.random((100, 3))
        h = 1e-4
        shifted = [points + h * np.eye(3)[axis] * sign for axis in range(3) for sign in (1, -1)]
        targets = TargetSet(np.vstack([points] + shifted))
        result = evaluate(random_charges, targets, FmmConfig(order=12, ncrit=32))
        potential = result.potential.reshape(7, len(points))
        difference = np.stack(
            [(potential[1 + 2 * axis] - potential[2 + 2 * axis]) / (2 * h) for axis in range(3)],
            axis=1,
        )
        assert relative_l2_error(result.gradient[: len(points)], difference) <= 1e-4

    def test_translation_leaves_potentials_unchanged(self, random_charges):
        shift = np.array([0.5, -0.25, 0.125])
        moved = SourceSet(random_charges.positions + shift, random_charges.weights)
        config = FmmConfig(order=8, ncrit=32)
        base = evaluate(random_charges, TargetSet(random_charges.positions), config)
        translated = evaluate(moved, TargetSet(moved.positions), config)
        assert relative_l2_error(translated.potential, base.potential) <= 1e-12

    def test_basis_cache_follows_available_memory(self, random_charges):
        targets = TargetSet(random_charges.positions)
        config = FmmConfig(order=6, ncrit=32)
        with patch("psutil.virtual_memory", return_value=MagicMock(available=4 * 1024**3)):
            cached = FmmPlan(random_charges.positions, targets, config, shared=True)
        with patch("psutil.virtual_memory", return_value=MagicMock(available=0)):
            rebuilt = FmmPlan(random_charges.positions, targets, config, shared=True)
        assert cached._source_basis is not None and cached._target_basis is not None
        assert rebuilt._source_basis is None and rebuilt._target_basis is None
        w = random_charges.weights
        np.testing.assert_allclose(
            rebuilt.evaluate(w).potential, cached.evaluate(w).potential, rtol=1e-12
        )


@pytest.mark.slow
class TestScaling:
    """Desk-scale complexity and thread scaling"""

    @staticmethod
    def _evaluate_seconds(n, threads=1):
        rng = np.random.default_rng(26)
        positions = rng.random((n, 3))
        plan = FmmPlan(
            positions, TargetSet(positions),
            FmmConfig(order=8, threads=threads, deterministic=True), shared=True,
        )
        weights = rng.uniform(-1.0, 1.0, n)
        timings = []
        for _ in range(2):
            start = time.perf_counter()
            result = plan.evaluate(weights)
            timings.append(time.perf_counter() - start)
        return min(timings), result

    def test_evaluate_grows_linearly(self):
        small, _ = self._evaluate_seconds(100_000)
        large, _ = self._evaluate_seconds(400_000)
        assert large / small <= 5.5

    @pytest.mark.skipif((os.cpu_count() or 1) < 8, reason="needs 8 cores")
    def test_thread_speedup_and_identical_results(self):
        serial, first = self._evaluate_seconds(1_000_000, threads=1)
        parallel, second = self._evaluate_seconds(1_000_000, threads=8)
        np.testing.assert_array_equal(first.potential, second.potential)
        assert serial / parallel >= 3.0
