#!/usr/bin/env python3
"""
bibeefmm benchmarking suite

Accuracy, scaling and convergence studies for the FMM and the BEM/BIBEE solvers.
The ``bench-fmm`` subcommand of the CLI goes through ``run_fmm_bench``; the full
suite is run with ``python benchmark.py --run-all``.
"""

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import psutil  # noqa: E402
from tqdm import tqdm  # noqa: E402

from bem import (  # noqa: E402
    SolveOptions,
    kirkwood_oracle,
    mesh_convergence_study,
    solve,
)
from error_handling import ConfigurationError, ErrorContext, FilesystemError  # noqa: E402
from fmm import (  # noqa: E402
    FmmConfig,
    SourceSet,
    TargetSet,
    direct_evaluate,
    evaluate,
    relative_l2_error,
)
from molgeom import ChargeSet, MolecularSystem, icosphere, replicate_grid  # noqa: E402
from monitoring import MonitoringAgent, MonitoringConfig  # noqa: E402

logger = logging.getLogger("bibeefmm.benchmark")

DISTRIBUTIONS = ("cube", "sphere")
BENCH_CSV_HEADER = (
    "N",
    "p",
    "ncrit",
    "threads",
    "t_tree",
    "t_upward",
    "t_m2l",
    "t_p2p",
    "t_total",
    "rel_l2_err",
)


@dataclass
class BenchRecord:
    """Timings of one FMM evaluation; ``rel_l2_err`` is None without a direct check."""

    N: int
    p: int
    ncrit: int
    threads: int
    t_tree: float
    t_upward: float
    t_m2l: float
    t_p2p: float
    t_total: float
    rel_l2_err: Optional[float] = None


def random_points(n: int, distribution: str, rng: np.random.Generator) -> np.ndarray:
    """``cube``: uniform in the unit cube. ``sphere``: uniform on the unit sphere surface."""
    if distribution == "cube":
        return rng.random((n, 3))
    if distribution == "sphere":
        points = rng.standard_normal((n, 3))
        return points / np.linalg.norm(points, axis=1, keepdims=True)
    raise ConfigurationError(
        f"unknown point distribution {distribution!r}; choose from {DISTRIBUTIONS}",
        ErrorContext(operation="bench-fmm"),
    )


def run_fmm_bench(
    N_list: Sequence[int],
    p: int = 10,
    ncrit: int = 64,
    threads: int = 1,
    distribution: str = "cube",
    seed: int = 0,
    direct_sample: int = 1000,
    deterministic: bool = True,
    use_rotation: Optional[bool] = None,
    progress: bool = False,
) -> List[BenchRecord]:
    """Evaluate the potential of N random unit-cube (or sphere) charges at themselves.

    With ``direct_sample > 0`` the relative L2 error is measured on a random
    subsample of that many targets against direct summation.
    """
    if not N_list or min(N_list) < 1:
        raise ConfigurationError(f"every N must be at least 1, got {list(N_list)}")
    config = FmmConfig(
        order=p, ncrit=ncrit, threads=threads, deterministic=deterministic,
        use_rotation=use_rotation,
    )
    rng = np.random.default_rng(seed)
    records = []
    for n in tqdm(list(N_list), desc="bench-fmm", disable=not progress):
        positions = random_points(int(n), distribution, rng)
        weights = rng.uniform(-1.0, 1.0, int(n))
        result = evaluate(
            SourceSet(positions, weights), TargetSet(positions), config, shared=True
        )
        error = None
        if direct_sample > 0:
            sample = np.sort(rng.choice(int(n), size=min(int(n), direct_sample), replace=False))
            exact = direct_evaluate(
                SourceSet(positions, weights), TargetSet(positions[sample]), skip_coincident=True
            )
            error = relative_l2_error(result.potential[sample], exact.potential)
        t = result.timings
        records.append(
            BenchRecord(
                N=int(n),
                p=p,
                ncrit=ncrit,
                threads=threads,
                t_tree=t.get("tree", 0.0),
                t_upward=t.get("upward", 0.0),
                t_m2l=t.get("m2l", 0.0),
                t_p2p=t.get("p2p", 0.0),
                t_total=t.get("total", 0.0),
                rel_l2_err=error,
            )
        )
        logger.info(
            f"📊 N={n} p={p}: total {records[-1].t_total:.3f}s"
            + (f", rel L2 error {error:.3e}" if error is not None else "")
        )
    return records


def write_bench_csv(records: Sequence[BenchRecord], path) -> str:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(BENCH_CSV_HEADER)
            for record in records:
                row = asdict(record)
                writer.writerow(["" if row[k] is None else row[k] for k in BENCH_CSV_HEADER])
    except OSError as exc:
        raise FilesystemError(f"cannot write {path}: {exc}", ErrorContext("write_bench_csv"), exc)
    return str(path)


def _phase_colors() -> Dict[str, str]:
    return {"t_tree": "#4C72B0", "t_upward": "#55A868", "t_m2l": "#C44E52", "t_p2p": "#8172B2"}


def plot_timing_breakdown(records: Sequence[BenchRecord], path) -> str:
    """Stacked bars of tree / upward / M2L / P2P time per problem size."""
    labels = [f"{r.N:,}" for r in records]
    x = np.arange(len(records))
    bottom = np.zeros(len(records))

    fig, ax = plt.subplots(figsize=(8, 5))
    for phase, color in _phase_colors().items():
        values = np.array([getattr(r, phase) for r in records])
        ax.bar(x, values, bottom=bottom, color=color, label=phase[2:].upper())
        bottom += values
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_xlabel("N")
    ax.set_ylabel("time [s]")
    ax.set_title("FMM time breakdown")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=150, facecolor="white")
    plt.close(fig)
    return str(path)


def plot_convergence(rows: Sequence[Any], path) -> str:
    """Relative error against panel count, one line per method (log-log)."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for method in sorted({r.method for r in rows}):
        subset = sorted((r for r in rows if r.method == method), key=lambda r: r.n_panels)
        ax.loglog(
            [r.n_panels for r in subset],
            [r.relative_error for r in subset],
            marker="o",
            label=method.upper(),
        )
    ax.set_xlabel("panels")
    ax.set_ylabel("relative error vs analytic")
    ax.set_title("Mesh convergence")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150, facecolor="white")
    plt.close(fig)
    return str(path)


class BenchmarkSuite:
    """Benchmark studies for the solver stack.

    ``config`` overrides problem sizes, e.g. ``{"complexity_sizes": [10000, 20000]}``.
    """

    DEFAULTS: Dict[str, Any] = {
        "accuracy_n": 10_000,
        "accuracy_orders": [4, 6, 8, 10, 12],
        "complexity_sizes": [25_000, 50_000, 100_000],
        "complexity_order": 8,
        "thread_n": 200_000,
        "thread_counts": [1, 2, 4, 8],
        "rotation_n": 20_000,
        "rotation_order": 10,
        "born_subdivisions": [3, 4],
        "kirkwood_subdivisions": 4,
        "replicate_counts": [3, 5],
        "seed": 0,
        "output_dir": ".",
    }

    def __init__(self, config: Optional[dict] = None):
        self.config = dict(self.DEFAULTS)
        self.config.update(config or {})
        self.logger = logger
        self.monitor = MonitoringAgent(MonitoringConfig(performance_log_file=None))
        self.results: Dict[str, Any] = {}

    def run_all_benchmarks(self) -> Dict[str, Any]:
        self.logger.info("🚀 Starting bibeefmm benchmark suite...")

        suite_start = time.time()
        benchmarks = [
            ("System Information", self.benchmark_system_info),
            ("FMM Accuracy", self.benchmark_fmm_accuracy),
            ("FMM Complexity", self.benchmark_fmm_complexity),
            ("Thread Scaling", self.benchmark_thread_scaling),
            ("Rotation M2L", self.benchmark_rotation),
            ("Born Convergence", self.benchmark_born_convergence),
            ("Kirkwood Bounds", self.benchmark_kirkwood_bounds),
            ("Replicated CFA", self.benchmark_replicated_cfa),
        ]

        results = {
            "benchmark_suite": "bibeefmm",
            "timestamp": time.time(),
            "total_benchmarks": len(benchmarks),
            "benchmarks": {},
            "summary": {},
        }

        successful_benchmarks = 0
        failed_benchmarks = 0
        for name, benchmark_func in benchmarks:
            self.logger.info(f"📊 Running benchmark: {name}")
            metrics = self.monitor.start_operation_monitoring(name)
            try:
                results["benchmarks"][name] = benchmark_func()
                successful_benchmarks += 1
                self.monitor.end_operation_monitoring(metrics)
                self.logger.info(f"✅ {name} completed successfully")
            except Exception as e:
                self.monitor.end_operation_monitoring(metrics, success=False, error_message=str(e))
                self.logger.error(f"❌ {name} failed: {e}")
                results["benchmarks"][name] = {
                    "status": "failed",
                    "error": str(e),
                    "timestamp": time.time(),
                }
                failed_benchmarks += 1

        suite_duration = time.time() - suite_start
        results["summary"] = {
            "total_benchmarks": len(benchmarks),
            "total_duration_seconds": suite_duration,
            "successful_benchmarks": successful_benchmarks,
            "failed_benchmarks": failed_benchmarks,
            "success_rate": (successful_benchmarks / len(benchmarks)) * 100,
        }
        self.logger.info(
            f"🏁 Benchmark suite completed in {suite_duration:.2f}s "
            f"({successful_benchmarks}/{len(benchmarks)} successful)"
        )

        self.results = results
        self._save_results(results)
        return results

    def benchmark_system_info(self) -> Dict[str, Any]:
        memory_info = psutil.virtual_memory()
        return {
            "status": "completed",
            "timestamp": time.time(),
            "system": {
                "platform": platform.platform(),
                "python_version": sys.version,
                "processor": platform.processor(),
                "numpy_version": np.__version__,
                "memory_total_gb": memory_info.total / 1024**3,
                "cpu_count": psutil.cpu_count(),
            },
        }

    def benchmark_fmm_accuracy(self) -> Dict[str, Any]:
        """Relative L2 error against direct summation for each expansion order."""
        orders = self.config["accuracy_orders"]
        errors = {}
        operations = {}
        for p in orders:
            record = run_fmm_bench(
                [self.config["accuracy_n"]], p=p, seed=self.config["seed"], direct_sample=1000
            )[0]
            errors[p] = record.rel_l2_err
            operations[f"p={p}"] = {"success": True, "time_seconds": record.t_total}
        values = [errors[p] for p in orders]
        return {
            "status": "completed",
            "N": self.config["accuracy_n"],
            "errors": {str(p): errors[p] for p in orders},
            "monotone": bool(all(b <= a for a, b in zip(values, values[1:]))),
            "operations": operations,
        }

    def benchmark_fmm_complexity(self) -> Dict[str, Any]:
        """Total time over an N sweep; ratios near the size ratio mean linear scaling."""
        sizes = self.config["complexity_sizes"]
        records = run_fmm_bench(
            sizes, p=self.config["complexity_order"], seed=self.config["seed"], direct_sample=0
        )
        totals = [r.t_total for r in records]
        ratios = [b / a for a, b in zip(totals, totals[1:])]
        csv_path = os.path.join(self.config["output_dir"], "bench_fmm_complexity.csv")
        png_path = os.path.join(self.config["output_dir"], "bench_fmm_breakdown.png")
        write_bench_csv(records, csv_path)
        plot_timing_breakdown(records, png_path)
        return {
            "status": "completed",
            "records": [asdict(r) for r in records],
            "step_ratios": ratios,
            "csv": csv_path,
            "plot": png_path,
            "operations": {
                f"N={r.N}": {"success": True, "time_seconds": r.t_total} for r in records
            },
        }

    def benchmark_thread_scaling(self) -> Dict[str, Any]:
        """Speedup over thread counts and bit-identity of deterministic results."""
        n = self.config["thread_n"]
        rng = np.random.default_rng(self.config["seed"])
        positions = rng.random((n, 3))
        weights = rng.uniform(-1.0, 1.0, n)
        sources, targets = SourceSet(positions, weights), TargetSet(positions)
        timings, reference, identical = {}, None, True
        for threads in self.config["thread_counts"]:
            config = FmmConfig(order=8, threads=threads, deterministic=True)
            result = evaluate(sources, targets, config, shared=True)
            timings[threads] = result.timings["total"]
            if reference is None:
                reference = result.potential
            else:
                identical = identical and np.array_equal(reference, result.potential)
        base = timings[self.config["thread_counts"][0]]
        return {
            "status": "completed",
            "N": n,
            "seconds": {str(k): v for k, v in timings.items()},
            "speedup": {str(k): base / v for k, v in timings.items()},
            "deterministic_identical": bool(identical),
            "operations": {
                f"threads={k}": {"success": True, "time_seconds": v} for k, v in timings.items()
            },
        }

    def benchmark_rotation(self) -> Dict[str, Any]:
        """M2L time with and without rotation-accelerated translations."""
        n, p = self.config["rotation_n"], self.config["rotation_order"]
        operations, errors = {}, {}
        for label, flag in (("plain", False), ("rotated", True)):
            record = run_fmm_bench(
                [n], p=p, seed=self.config["seed"], direct_sample=500, use_rotation=flag
            )[0]
            operations[label] = {"success": True, "time_seconds": record.t_m2l}
            errors[label] = record.rel_l2_err
        return {"status": "completed", "N": n, "p": p, "errors": errors, "operations": operations}

    def benchmark_born_convergence(self) -> Dict[str, Any]:
        """Born ion on refined icospheres, BEM and CFA against the closed form."""
        rows = mesh_convergence_study(
            radius=1.0, offset=0.0, subdivisions=self.config["born_subdivisions"],
            methods=("bem", "cfa"),
        )
        png_path = os.path.join(self.config["output_dir"], "born_convergence.png")
        plot_convergence(rows, png_path)
        return {
            "status": "completed",
            "rows": [asdict(r) for r in rows],
            "plot": png_path,
            "operations": {
                f"{r.method}@{r.subdivisions}": {"success": True, "time_seconds": r.seconds}
                for r in rows
            },
        }

    def benchmark_kirkwood_bounds(self) -> Dict[str, Any]:
        """Off-centre charge at half the radius: LB <= Kirkwood <= CFA."""
        radius, offset = 1.0, 0.5
        mesh = icosphere(radius, self.config["kirkwood_subdivisions"])
        system = MolecularSystem.from_mesh(
            mesh, ChargeSet([[0.0, 0.0, offset]], [1.0], [0.0])
        )
        reference = kirkwood_oracle(radius, offset)
        energies, operations = {}, {}
        for method in ("lb", "p", "cfa", "bem"):
            start = time.perf_counter()
            energies[method] = solve(system, method).dG_internal
            operations[method] = {"success": True, "time_seconds": time.perf_counter() - start}
        return {
            "status": "completed",
            "kirkwood": reference,
            "energies": energies,
            "bounds_hold": bool(energies["lb"] <= reference <= energies["cfa"]),
            "operations": operations,
        }

    def benchmark_replicated_cfa(self) -> Dict[str, Any]:
        """CFA on growing cubic arrays of randomly rotated charged spheres."""
        base = MolecularSystem.from_mesh(
            icosphere(1.0, 1), ChargeSet([[0.0, 0.0, 0.3]], [1.0], [0.0])
        )
        operations, panels = {}, {}
        for k in self.config["replicate_counts"]:
            system = replicate_grid(base, k, k, k, spacing=3.0, seed=self.config["seed"])
            start = time.perf_counter()
            solve(system, "cfa", SolveOptions(check_charges=False))
            operations[f"{k}^3"] = {"success": True, "time_seconds": time.perf_counter() - start}
            panels[f"{k}^3"] = system.n_panels
        return {"status": "completed", "panels": panels, "operations": operations}

    def _save_results(self, results: Dict[str, Any]) -> Optional[str]:
        timestamp = time.strftime("%Y%m%d_%H%M%S")
        filename = os.path.join(self.config["output_dir"], f"benchmark_results_{timestamp}.json")
        try:
            with open(filename, "w", encoding="utf-8") as f:
                json.dump(results, f, indent=2, default=str)
            self.logger.info(f"📄 Benchmark results saved to: {filename}")
            return filename
        except OSError as e:
            self.logger.error(f"Failed to save benchmark results: {e}")
            return None

    def generate_performance_report(self, results: Dict[str, Any]) -> str:
        """Human-readable report of a ``run_all_benchmarks`` result."""
        report = []
        report.append("=" * 60)
        report.append("BIBEEFMM BENCHMARK REPORT")
        report.append("=" * 60)
        report.append("")

        summary = results.get("summary", {})
        report.append(f"Total Benchmarks: {summary.get('total_benchmarks', 'N/A')}")
        report.append(f"Successful: {summary.get('successful_benchmarks', 'N/A')}")
        report.append(f"Failed: {summary.get('failed_benchmarks', 'N/A')}")
        report.append(f"Success Rate: {summary.get('success_rate', 0.0):.1f}%")
        report.append(f"Total Duration: {summary.get('total_duration_seconds', 0.0):.2f}s")
        report.append("")

        for name, result in results.get("benchmarks", {}).items():
            report.append(f"📊 {name}")
            report.append("-" * 40)
            if result.get("status") == "failed":
                report.append(f"❌ FAILED: {result.get('error', 'Unknown error')}")
            else:
                report.append("✅ PASSED")
                for op_name, op_result in result.get("operations", {}).items():
                    if op_result.get("success"):
                        report.append(f"  • {op_name}: {op_result.get('time_seconds', 0):.3f}s")
                    else:
                        report.append(f"  • {op_name}: FAILED")
                for key in ("errors", "speedup", "energies"):
                    if key in result:
                        values = ", ".join(
                            f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in result[key].items()
                        )
                        report.append(f"  {key}: {values}")
            report.append("")

        report.append("💡 FINDINGS")
        report.append("-" * 40)
        findings = []
        benches = results.get("benchmarks", {})
        accuracy = benches.get("FMM Accuracy", {})
        if accuracy.get("monotone") is False:
            findings.append("⚠️  FMM error does not decrease with expansion order")
        ratios = benches.get("FMM Complexity", {}).get("step_ratios", [])
        if any(r > 2.75 for r in ratios):
            findings.append(f"⚠️  Super-linear step ratio detected: {max(ratios):.2f}")
        threads = benches.get("Thread Scaling", {})
        if threads.get("deterministic_identical") is False:
            findings.append("⚠️  Deterministic results differ across thread counts")
        bounds = benches.get("Kirkwood Bounds", {})
        if bounds.get("bounds_hold") is False:
            findings.append("⚠️  BIBEE bounds violated on the Kirkwood sphere")

        if findings:
            report.extend(findings)
        else:
            report.append("✅ All studies within expected behaviour")

        report.append("")
        report.append("=" * 60)
        return "\n".join(report)


def main():
    parser = argparse.ArgumentParser(description="bibeefmm benchmarking")
    parser.add_argument("--run-all", action="store_true", help="Run all benchmarks")
    parser.add_argument("--save-report", action="store_true", help="Save human-readable report")
    parser.add_argument("--config", type=str, help="JSON file overriding study sizes")
    args = parser.parse_args()

    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    config = {}
    if args.config and os.path.exists(args.config):
        with open(args.config, "r", encoding="utf-8") as f:
            config = json.load(f)

    benchmark_suite = BenchmarkSuite(config)

    if args.run_all:
        results = benchmark_suite.run_all_benchmarks()
        report = benchmark_suite.generate_performance_report(results)
        if args.save_report:
            timestamp = time.strftime("%Y%m%d_%H%M%S")
            report_filename = f"benchmark_report_{timestamp}.txt"
            with open(report_filename, "w", encoding="utf-8") as f:
                f.write(report)
            print(f"📄 Performance report saved to: {report_filename}")
        print("\n" + report)
        success_rate = results.get("summary", {}).get("success_rate", 0)
        raise SystemExit(0 if success_rate > 80 else 1)

    parser.print_help()


if __name__ == "__main__":
    main()
