"""
Tests for the benchmarking suite
"""

import csv
import glob
import os

import numpy as np
import pytest

from bem import ConvergenceRow
from benchmark import (
    BENCH_CSV_HEADER,
    BenchmarkSuite,
    BenchRecord,
    plot_convergence,
    plot_timing_breakdown,
    random_points,
    run_fmm_bench,
    write_bench_csv,
)
from error_handling import ConfigurationError

SMALL_SUITE = {
    "accuracy_n": 400,
    "accuracy_orders": [3, 6],
    "complexity_sizes": [200, 400],
    "complexity_order": 4,
    "thread_n": 500,
    "thread_counts": [1, 2],
    "rotation_n": 300,
    "rotation_order": 8,
    "born_subdivisions": [1, 2],
    "kirkwood_subdivisions": 2,
    "replicate_counts": [1, 2],
}


def _record(n, error=None):
    return BenchRecord(N=n, p=6, ncrit=64, threads=1, t_tree=0.1, t_upward=0.2, t_m2l=0.3,
                       t_p2p=0.4, t_total=1.0, rel_l2_err=error)


class TestFmmBench:
    """Test the bench-fmm driver"""

    def test_random_points(self):
        rng = np.random.default_rng(0)
        cube = random_points(100, "cube", rng)
        sphere = random_points(100, "sphere", rng)
        assert cube.min() >= 0.0 and cube.max() < 1.0
        np.testing.assert_allclose(np.linalg.norm(sphere, axis=1), 1.0)
        with pytest.raises(ConfigurationError):
            random_points(10, "torus", rng)

    def test_records(self):
        records = run_fmm_bench([150, 300], p=6, direct_sample=40, seed=3)
        assert [r.N for r in records] == [150, 300]
        assert all(r.p == 6 and r.ncrit == 64 for r in records)
        assert all(r.rel_l2_err is not None and r.rel_l2_err < 1e-2 for r in records)
        assert all(r.t_total >= r.t_tree for r in records)

    def test_seeded_errors_repeat(self):
        first = run_fmm_bench([200], p=4, direct_sample=50, seed=5)[0]
        second = run_fmm_bench([200], p=4, direct_sample=50, seed=5)[0]
        assert first.rel_l2_err == second.rel_l2_err

    def test_no_direct_check(self):
        assert run_fmm_bench([100], p=4, direct_sample=0)[0].rel_l2_err is None

    def test_rejects_empty_sizes(self):
        with pytest.raises(ConfigurationError):
            run_fmm_bench([])

    def test_csv(self, tmp_path):
        path = write_bench_csv([_record(1000, 2.5e-6), _record(2000)], tmp_path / "bench.csv")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == BENCH_CSV_HEADER
        assert rows[1][0] == "1000"
        assert float(rows[1][-1]) == 2.5e-6
        assert rows[2][-1] == ""


class TestPlots:
    """Test the PNG outputs"""

    def test_timing_breakdown(self, tmp_path):
        path = plot_timing_breakdown([_record(1000), _record(2000)], tmp_path / "t.png")
        assert os.path.getsize(path) > 0

    def test_convergence(self, tmp_path):
        rows = [
            ConvergenceRow(2, 320, "bem", -0.009, -0.0094, 0.04, 8, 1.0),
            ConvergenceRow(3, 1280, "bem", -0.0093, -0.0094, 0.01, 9, 2.0),
            ConvergenceRow(2, 320, "cfa", -0.0095, -0.0094, 0.02, 0, 0.5),
        ]
        path = plot_convergence(rows, tmp_path / "c.png")
        assert os.path.getsize(path) > 0


class TestBenchmarkSuite:
    """Test the full study runner and its report"""

    def test_report_findings(self):
        suite = BenchmarkSuite()
        results = {
            "summary": {"total_benchmarks": 2, "successful_benchmarks": 1,
                        "failed_benchmarks": 1, "success_rate": 50.0},
            "benchmarks": {
                "FMM Accuracy": {"status": "completed", "monotone": False,
                                 "errors": {"4": 1e-3, "6": 2e-3},
                                 "operations": {"p=4": {"success": True, "time_seconds": 0.5}}},
                "Thread Scaling": {"status": "failed", "error": "out of memory"},
            },
        }
        report = suite.generate_performance_report(results)
        assert "BIBEEFMM BENCHMARK REPORT" in report
        assert "❌ FAILED: out of memory" in report
        assert "p=4: 0.500s" in report
        assert "does not decrease with expansion order" in report

    def test_report_clean(self):
        report = BenchmarkSuite().generate_performance_report(
            {"benchmarks": {"Kirkwood Bounds": {"status": "completed", "bounds_hold": True}}}
        )
        assert "✅ All studies within expected behaviour" in report

    def test_config_overrides_defaults(self):
        suite = BenchmarkSuite({"accuracy_n": 50})
        assert suite.config["accuracy_n"] == 50
        assert suite.config["seed"] == 0

    @pytest.mark.integration
    def test_run_all_small(self, tmp_path):
        suite = BenchmarkSuite(dict(SMALL_SUITE, output_dir=str(tmp_path)))
        results = suite.run_all_benchmarks()

        assert results["summary"]["failed_benchmarks"] == 0
        benches = results["benchmarks"]
        assert benches["FMM Accuracy"]["monotone"] is True
        assert benches["Thread Scaling"]["deterministic_identical"] is True
        assert benches["Replicated CFA"]["panels"] == {"1^3": 80, "2^3": 640}
        assert len(glob.glob(str(tmp_path / "benchmark_results_*.json"))) == 1
        assert (tmp_path / "bench_fmm_complexity.csv").exists()
        assert (tmp_path / "born_convergence.png").exists()


@pytest.mark.slow
class TestAcceptanceScale:
    """Desk-scale accuracy and scaling runs"""

    def test_four_digit_accuracy_at_order_10(self):
        record = run_fmm_bench([10_000], p=10, ncrit=64, direct_sample=1000)[0]
        assert record.rel_l2_err <= 1.5e-4

    def test_error_non_increasing_with_order(self):
        errors = [
            run_fmm_bench([10_000], p=p, direct_sample=1000)[0].rel_l2_err
            for p in (4, 6, 8, 10, 12)
        ]
        assert all(b <= a for a, b in zip(errors, errors[1:]))
