#!/usr/bin/env python3
"""
bibeefmm monitoring

Per-operation performance metrics and a health check for solver runs.

Features:
- Wall time, RSS memory and CPU usage per operation (psutil)
- Problem size, FMM evaluation count and GMRES iteration tracking
- Optional JSONL performance log, one line per operation
- Threshold warnings for memory and processing time
- Health check of system resources and the numerical stack
"""

import importlib
import json
import logging
import os
import time
import traceback
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import psutil
from dotenv import load_dotenv


@dataclass
class PerformanceMetrics:
    """Performance metrics for one monitored operation."""

    operation: str
    start_time: float
    end_time: Optional[float] = None
    duration_seconds: Optional[float] = None
    memory_usage_mb: Optional[float] = None
    cpu_percent: Optional[float] = None
    success: bool = True
    error_message: Optional[str] = None
    n_points: Optional[int] = None
    n_panels: Optional[int] = None
    n_charges: Optional[int] = None
    fmm_evaluations: Optional[int] = None
    gmres_iterations: Optional[int] = None

    def update(self, **fields) -> None:
        """Attach problem-size fields known only after the operation ran."""
        for name, value in fields.items():
            if not hasattr(self, name):
                raise AttributeError(f"PerformanceMetrics has no field {name!r}")
            setattr(self, name, value)


@dataclass
class MonitoringConfig:
    """Configuration for monitoring."""

    enable_performance_monitoring: bool = True
    performance_log_file: Optional[str] = None

    # Thresholds that trigger a warning
    enable_threshold_warnings: bool = True
    max_memory_usage_mb: float = 8192.0
    max_processing_time_minutes: float = 30.0

    collect_system_metrics: bool = True
    disk_path: str = "."


NUMERICAL_STACK = ("numpy", "scipy")


class MonitoringAgent:
    """Tracks solver operations and reports health."""

    def __init__(self, config: Optional[MonitoringConfig] = None):
        self.config = config or MonitoringConfig()
        self.logger = self._setup_logging()
        self.error_count = 0
        self.operation_count = 0

    def _setup_logging(self) -> logging.Logger:
        return logging.getLogger("bibeefmm.monitoring")

    def start_operation_monitoring(self, operation: str, **kwargs) -> PerformanceMetrics:
        """Start monitoring an operation."""
        metrics = PerformanceMetrics(operation=operation, start_time=time.time(), **kwargs)

        if self.config.collect_system_metrics:
            self._collect_system_metrics(metrics)

        self.logger.info(f"🔍 Started monitoring operation: {operation}")
        return metrics

    def end_operation_monitoring(
        self,
        metrics: PerformanceMetrics,
        success: bool = True,
        error_message: Optional[str] = None,
    ) -> PerformanceMetrics:
        """End monitoring an operation and record the final metrics."""
        metrics.end_time = time.time()
        metrics.duration_seconds = metrics.end_time - metrics.start_time
        metrics.success = success
        metrics.error_message = error_message

        if self.config.collect_system_metrics:
            self._collect_final_system_metrics(metrics)

        self.operation_count += 1
        if not success:
            self.error_count += 1

        if self.config.enable_performance_monitoring:
            self._log_performance_metrics(metrics)
        self._check_thresholds(metrics)

        marker = "✅" if success else "❌"
        self.logger.info(
            f"{marker} Completed monitoring operation: {metrics.operation} "
            f"(Duration: {metrics.duration_seconds:.2f}s, Success: {success})"
        )
        return metrics

    def _collect_system_metrics(self, metrics: PerformanceMetrics) -> None:
        try:
            process = psutil.Process()
            metrics.memory_usage_mb = process.memory_info().rss / 1024 / 1024
            # first call primes the counter; the value at the end is the one reported
            process.cpu_percent()
        except Exception as e:
            self.logger.warning(f"Failed to collect system metrics: {e}")

    def _collect_final_system_metrics(self, metrics: PerformanceMetrics) -> None:
        try:
            process = psutil.Process()
            final_memory_mb = process.memory_info().rss / 1024 / 1024
            if metrics.memory_usage_mb:
                metrics.memory_usage_mb = max(metrics.memory_usage_mb, final_memory_mb)
            else:
                metrics.memory_usage_mb = final_memory_mb
            metrics.cpu_percent = process.cpu_percent()
        except Exception as e:
            self.logger.warning(f"Failed to collect final system metrics: {e}")

    def _log_performance_metrics(self, metrics: PerformanceMetrics) -> None:
        """Append one JSON line to the performance log."""
        if not self.config.performance_log_file:
            return

        record = {"timestamp": datetime.now(timezone.utc).isoformat()}
        record.update(asdict(metrics))
        try:
            with open(self.config.performance_log_file, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
        except OSError as e:
            self.logger.error(f"Failed to log performance metrics: {e}")

    def _check_thresholds(self, metrics: PerformanceMetrics) -> List[str]:
        """Log a warning for every exceeded threshold and return the messages."""
        if not self.config.enable_threshold_warnings:
            return []

        warnings = []
        if metrics.memory_usage_mb and metrics.memory_usage_mb > self.config.max_memory_usage_mb:
            warnings.append(
                f"High memory usage: {metrics.memory_usage_mb:.1f}MB "
                f"(threshold: {self.config.max_memory_usage_mb}MB)"
            )
        limit_s = self.config.max_processing_time_minutes * 60
        if metrics.duration_seconds and metrics.duration_seconds > limit_s:
            warnings.append(
                f"Long processing time: {metrics.duration_seconds / 60:.1f}min "
                f"(threshold: {self.config.max_processing_time_minutes}min)"
            )

        for message in warnings:
            self.logger.warning(f"⚠️ {metrics.operation}: {message}")
        return warnings

    def health_check(self) -> Dict[str, Any]:
        """Check system resources and the numerical stack."""
        health_status = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "status": "healthy",
            "checks": {},
        }

        try:
            memory = psutil.virtual_memory()
            disk = psutil.disk_usage(self.config.disk_path)

            health_status["checks"]["memory"] = {
                "status": "ok" if memory.percent < 90 else "warning",
                "usage_percent": memory.percent,
                "available_gb": memory.available / 1024 / 1024 / 1024,
            }
            health_status["checks"]["disk"] = {
                "status": "ok" if disk.percent < 90 else "warning",
                "usage_percent": disk.percent,
                "free_gb": disk.free / 1024 / 1024 / 1024,
            }
            health_status["checks"]["cpu"] = {
                "status": "ok",
                "logical_count": psutil.cpu_count(),
                "physical_count": psutil.cpu_count(logical=False),
            }

            for name in NUMERICAL_STACK:
                try:
                    module = importlib.import_module(name)
                    health_status["checks"][name] = {
                        "status": "ok",
                        "version": getattr(module, "__version__", None),
                    }
                except Exception as e:
                    health_status["checks"][name] = {"status": "error", "error": str(e)}

            failed_checks = [
                name
                for name, check in health_status["checks"].items()
                if check["status"] == "error"
            ]
            if failed_checks:
                health_status["status"] = "unhealthy"
                health_status["failed_checks"] = failed_checks
            elif any(c["status"] == "warning" for c in health_status["checks"].values()):
                health_status["status"] = "warning"

        except Exception as e:
            health_status["status"] = "error"
            health_status["error"] = str(e)
            health_status["traceback"] = traceback.format_exc()

        return health_status


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


def load_monitoring_config() -> MonitoringConfig:
    """Load monitoring configuration from BIBEEFMM_MONITOR_* environment variables."""
    load_dotenv()
    return MonitoringConfig(
        enable_performance_monitoring=_env_flag("BIBEEFMM_MONITOR_PERFORMANCE", "true"),
        performance_log_file=os.getenv("BIBEEFMM_MONITOR_PERFORMANCE_LOG") or None,
        enable_threshold_warnings=_env_flag("BIBEEFMM_MONITOR_WARNINGS", "true"),
        max_memory_usage_mb=float(os.getenv("BIBEEFMM_MONITOR_MAX_MEMORY_MB", "8192.0")),
        max_processing_time_minutes=float(os.getenv("BIBEEFMM_MONITOR_MAX_TIME_MIN", "30.0")),
        collect_system_metrics=_env_flag("BIBEEFMM_MONITOR_SYSTEM_METRICS", "true"),
        disk_path=os.getenv("BIBEEFMM_MONITOR_DISK_PATH", "."),
    )
