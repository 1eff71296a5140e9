"""
Tests for operation monitoring and the health check
"""

import json
import os
import shutil
import tempfile
from unittest.mock import MagicMock, patch

import pytest

from monitoring import MonitoringAgent, MonitoringConfig, PerformanceMetrics, load_monitoring_config


def _process(rss_mb=100.0, cpu=12.5):
    process = MagicMock()
    process.memory_info.return_value = MagicMock(rss=rss_mb * 1024 * 1024)
    process.cpu_percent.return_value = cpu
    return process


class TestOperationMonitoring:
    """Test metrics collection for single operations"""

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()
        self.log_path = os.path.join(self.temp_dir, "perf.jsonl")

    def teardown_method(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    @patch("monitoring.psutil.Process")
    def test_metrics_recorded(self, mock_process):
        mock_process.return_value = _process()
        agent = MonitoringAgent(MonitoringConfig(performance_log_file=self.log_path))

        metrics = agent.start_operation_monitoring("solve")
        metrics.update(n_panels=1280, n_charges=1, gmres_iterations=9, fmm_evaluations=11)
        agent.end_operation_monitoring(metrics)

        assert metrics.duration_seconds >= 0
        assert metrics.memory_usage_mb == pytest.approx(100.0)
        assert metrics.cpu_percent == 12.5
        with open(self.log_path) as fh:
            record = json.loads(fh.readline())
        assert record["operation"] == "solve"
        assert record["n_panels"] == 1280
        assert record["gmres_iterations"] == 9
        assert "timestamp" in record

    def test_update_rejects_unknown_field(self):
        metrics = PerformanceMetrics(operation="solve", start_time=0.0)
        with pytest.raises(AttributeError):
            metrics.update(n_atoms=3)

    def test_no_log_file_no_output(self):
        agent = MonitoringAgent(MonitoringConfig(collect_system_metrics=False))
        agent.end_operation_monitoring(agent.start_operation_monitoring("bind"))
        assert os.listdir(self.temp_dir) == []

    def test_failures_counted(self):
        agent = MonitoringAgent(MonitoringConfig(collect_system_metrics=False))
        agent.end_operation_monitoring(agent.start_operation_monitoring("solve"))
        agent.end_operation_monitoring(
            agent.start_operation_monitoring("solve"), success=False, error_message="diverged"
        )
        assert agent.operation_count == 2
        assert agent.error_count == 1

    def test_threshold_warnings(self, caplog):
        agent = MonitoringAgent(
            MonitoringConfig(max_memory_usage_mb=10.0, max_processing_time_minutes=1.0)
        )
        metrics = PerformanceMetrics(
            operation="bench-fmm", start_time=0.0, duration_seconds=120.0, memory_usage_mb=50.0
        )
        warnings = agent._check_thresholds(metrics)
        assert len(warnings) == 2
        assert "High memory usage" in caplog.text
        assert "Long processing time" in caplog.text

    def test_thresholds_disabled(self):
        agent = MonitoringAgent(MonitoringConfig(enable_threshold_warnings=False))
        metrics = PerformanceMetrics(operation="x", start_time=0.0, memory_usage_mb=1e9)
        assert agent._check_thresholds(metrics) == []


class TestHealthCheck:
    """Test the health check status"""

    def _memory(self, percent):
        return MagicMock(percent=percent, available=8 * 1024**3)

    def _disk(self, percent):
        return MagicMock(percent=percent, free=100 * 1024**3)

    @patch("monitoring.psutil.cpu_count", return_value=8)
    @patch("monitoring.psutil.disk_usage")
    @patch("monitoring.psutil.virtual_memory")
    def test_healthy(self, mock_memory, mock_disk, _):
        mock_memory.return_value = self._memory(40.0)
        mock_disk.return_value = self._disk(50.0)
        health = MonitoringAgent().health_check()
        assert health["status"] == "healthy"
        assert health["checks"]["numpy"]["status"] == "ok"
        assert health["checks"]["scipy"]["version"]

    @patch("monitoring.psutil.cpu_count", return_value=8)
    @patch("monitoring.psutil.disk_usage")
    @patch("monitoring.psutil.virtual_memory")
    def test_warning_on_full_disk(self, mock_memory, mock_disk, _):
        mock_memory.return_value = self._memory(40.0)
        mock_disk.return_value = self._disk(95.0)
        assert MonitoringAgent().health_check()["status"] == "warning"

    @patch("monitoring.importlib.import_module", side_effect=ImportError("no scipy"))
    @patch("monitoring.psutil.cpu_count", return_value=8)
    @patch("monitoring.psutil.disk_usage")
    @patch("monitoring.psutil.virtual_memory")
    def test_unhealthy_without_numerical_stack(self, mock_memory, mock_disk, _, __):
        mock_memory.return_value = self._memory(40.0)
        mock_disk.return_value = self._disk(50.0)
        health = MonitoringAgent().health_check()
        assert health["status"] == "unhealthy"
        assert health["failed_checks"] == ["numpy", "scipy"]

    @patch("monitoring.psutil.virtual_memory", side_effect=RuntimeError("no /proc"))
    def test_error_status(self, _):
        health = MonitoringAgent().health_check()
        assert health["status"] == "error"
        assert "no /proc" in health["error"]


class TestMonitoringConfig:
    """Test environment configuration"""

    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True):
            config = load_monitoring_config()
        assert config.enable_performance_monitoring is True
        assert config.performance_log_file is None
        assert config.max_memory_usage_mb == 8192.0

    def test_environment(self):
        env = {
            "BIBEEFMM_MONITOR_PERFORMANCE_LOG": "/tmp/perf.jsonl",
            "BIBEEFMM_MONITOR_WARNINGS": "false",
            "BIBEEFMM_MONITOR_MAX_MEMORY_MB": "1024",
            "BIBEEFMM_MONITOR_MAX_TIME_MIN": "5",
        }
        with patch.dict(os.environ, env, clear=True):
            config = load_monitoring_config()
        assert config.performance_log_file == "/tmp/perf.jsonl"
        assert config.enable_threshold_warnings is False
        assert config.max_memory_usage_mb == 1024.0
        assert config.max_processing_time_minutes == 5.0
