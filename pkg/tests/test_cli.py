"""
Integration tests for the bibeefmm command line
"""

import csv
import filecmp
import json
import logging
import os
import shutil
import tempfile
from unittest.mock import patch

import pytest

from benchmark import BENCH_CSV_HEADER
from molgeom import ChargeSet, MolecularSystem, icosphere, merge_systems, write_msms, write_pqr
from solvation_cli import (
    RunConfig,
    build_parser,
    file_overrides,
    log_issue,
    resolve_config,
    run,
)


@pytest.fixture(autouse=True)
def restore_root_logger():
    """``run`` reconfigures the root logger; put it back after every test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


@pytest.mark.integration
class TestCommands:
    """Test the subcommands end to end"""

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()
        self.prefix = os.path.join(self.temp_dir, "ion")

    def teardown_method(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _path(self, name):
        return os.path.join(self.temp_dir, name)

    def _mesh_sphere(self, *extra):
        args = ["mesh-sphere", "--radius", "1.0", "--subdiv", "2", "--charge", "1.0",
                "--output", self.prefix, *extra]
        assert run(args) == 0

    def _solve_args(self, *extra):
        return ["solve", "--vert", f"{self.prefix}.vert", "--face", f"{self.prefix}.face",
                "--pqr", f"{self.prefix}.pqr", *extra]

    def test_mesh_sphere_default_subdivision(self):
        assert run(["mesh-sphere", "--output", self.prefix]) == 0
        with open(f"{self.prefix}.face") as fh:
            lines = fh.read().splitlines()
        assert lines[2].split()[0] == "1280"
        assert len(lines) == 3 + 1280
        assert not os.path.exists(f"{self.prefix}.pqr")

    def test_mesh_sphere_charge_offset(self):
        self._mesh_sphere("--center", "1,2,3", "--offset", "0.5")
        with open(f"{self.prefix}.pqr") as fh:
            fields = fh.readline().split()
        assert [float(v) for v in fields[-5:]] == [1.0, 2.0, 3.5, 1.0, 0.0]

    def test_mesh_sphere_rejects_outside_charge(self):
        assert run(["mesh-sphere", "--offset", "2.0", "--output", self.prefix]) == 1
        assert not os.path.exists(f"{self.prefix}.vert")

    def test_solve_cfa_report(self):
        self._mesh_sphere()
        report_path = self._path("report.json")
        sigma_path = self._path("sigma.csv")
        args = self._solve_args("--method", "cfa", "--report", report_path,
                                "--sigma-csv", sigma_path)
        assert run(args) == 0

        with open(report_path) as fh:
            report = json.load(fh)
        assert report["method"] == "cfa"
        assert report["n_panels"] == 320
        assert report["n_charges"] == 1
        assert report["order_p"] == 8
        assert report["iterations"] == 0
        assert report["converged"] is True
        assert report["dG_kcal_mol"] < 0
        with open(sigma_path) as fh:
            assert len(list(csv.reader(fh))) == 321

    def test_solve_bem_converges(self):
        self._mesh_sphere()
        report_path = self._path("report.json")
        assert run(self._solve_args("--report", report_path, "--direct")) == 0
        with open(report_path) as fh:
            report = json.load(fh)
        assert report["method"] == "bem"
        assert report["converged"] is True
        assert report["residuals"][0] == 1.0
        assert report["residuals"][-1] <= 1e-5

    def test_solve_not_converged_exits_2(self):
        self._mesh_sphere("--offset", "0.5")
        report_path = self._path("report.json")
        args = self._solve_args("--maxiter", "1", "--tol", "1e-12", "--direct",
                                "--report", report_path)
        assert run(args) == 2
        with open(report_path) as fh:
            report = json.load(fh)
        assert report["converged"] is False
        assert report["iterations"] == 1

    def test_solve_missing_pqr_exits_1(self):
        self._mesh_sphere()
        os.remove(f"{self.prefix}.pqr")
        report_path = self._path("report.json")
        assert run(self._solve_args("--report", report_path)) == 1
        assert not os.path.exists(report_path)

    def test_solve_invalid_order_exits_1(self):
        self._mesh_sphere()
        report_path = self._path("report.json")
        assert run(self._solve_args("--order", "31", "--report", report_path)) == 1
        assert not os.path.exists(report_path)

    def test_solve_malformed_face_exits_1(self, capsys):
        self._mesh_sphere()
        with open(f"{self.prefix}.face") as fh:
            lines = fh.read().splitlines()
        lines[3] = "1 2 x 1 1"
        with open(f"{self.prefix}.face", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        assert run(self._solve_args("--method", "cfa")) == 1
        assert "ion.face:4" in capsys.readouterr().out

    def test_bind_distant_partners(self):
        protein = MolecularSystem.from_mesh(
            icosphere(1.0, 2), ChargeSet([[0.0, 0.0, 0.0]], [1.0], [1.0])
        )
        ligand = MolecularSystem.from_mesh(
            icosphere(1.0, 2, center=(100.0, 0.0, 0.0)),
            ChargeSet([[99.7, 0.0, 0.0], [100.3, 0.0, 0.0]], [0.5, -0.5], [1.0, 1.0]),
        )
        for name, system in (
            ("complex", merge_systems([protein, ligand])), ("protein", protein), ("ligand", ligand)
        ):
            write_msms(system.mesh, self._path(name))
            write_pqr(system.charges, self._path(f"{name}.pqr"))

        report_path = self._path("bind.json")
        args = ["bind", "--complex", self._path("complex"), "--protein", self._path("protein"),
                "--ligand", self._path("ligand"), "--method", "cfa", "--direct",
                "--report", report_path]
        assert run(args) == 0
        with open(report_path) as fh:
            report = json.load(fh)
        assert set(report["solves"]) == {"complex", "protein", "ligand"}
        assert abs(report["ddG_kcal_mol"]) < 0.02
        assert report["ddG_kcal_mol"] == pytest.approx(
            report["dG_complex_kcal_mol"] - report["dG_protein_kcal_mol"]
            - report["dG_ligand_kcal_mol"]
        )

    def test_bench_fmm_csv(self):
        csv_path = self._path("bench.csv")
        args = ["bench-fmm", "--n", "200,400", "--order", "6", "--direct-sample", "50",
                "--output", csv_path]
        assert run(args) == 0
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == BENCH_CSV_HEADER
        assert [int(r[0]) for r in rows[1:]] == [200, 400]
        assert all(float(r[-1]) < 1e-2 for r in rows[1:])

    def test_replicate_is_deterministic(self):
        self._mesh_sphere("--offset", "0.2")
        outputs = []
        for name in ("a", "b"):
            out = self._path(name)
            args = ["replicate", "--input", self.prefix, "--nx", "2", "--ny", "2", "--nz", "1",
                    "--seed", "3", "--output", out]
            assert run(args) == 0
            outputs.append(out)
        for ext in (".vert", ".face", ".pqr"):
            assert filecmp.cmp(outputs[0] + ext, outputs[1] + ext, shallow=False)
        with open(outputs[0] + ".face") as fh:
            assert fh.read().splitlines()[2].split()[0] == str(4 * 320)

    def test_replicate_rejects_overlap(self):
        self._mesh_sphere()
        args = ["replicate", "--input", self.prefix, "--nx", "2", "--spacing", "1.0",
                "--output", self._path("grid")]
        assert run(args) == 1
        assert not os.path.exists(self._path("grid.vert"))

    def test_json_log_file(self):
        log_path = self._path("run.log")
        args = ["mesh-sphere", "--subdiv", "1", "--output", self.prefix,
                "--log-json", "--log-file", log_path]
        assert run(args) == 0
        logging.getLogger().handlers[-1].flush()
        with open(log_path) as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        assert records
        assert {"timestamp", "level", "logger", "message"} <= set(records[0])

    def test_perf_log(self):
        perf_path = self._path("perf.jsonl")
        assert run(["mesh-sphere", "--subdiv", "1", "--output", self.prefix,
                    "--perf-log", perf_path]) == 0
        with open(perf_path) as fh:
            record = json.loads(fh.readline())
        assert record["operation"] == "mesh-sphere"
        assert record["n_panels"] == 80
        assert record["success"] is True


class TestHealthCommand:
    """Test the health subcommand exit status"""

    @pytest.mark.parametrize("status,code", [("healthy", 0), ("warning", 0), ("unhealthy", 1)])
    def test_exit_status(self, status, code, capsys):
        with patch("monitoring.MonitoringAgent.health_check", return_value={"status": status}):
            assert run(["health"]) == code
        assert f'"status": "{status}"' in capsys.readouterr().out


class TestConfigResolution:
    """Test defaults < environment < config file < flags"""

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config_path = os.path.join(self.temp_dir, "run.env")

    def teardown_method(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _resolve(self, argv):
        return resolve_config(build_parser().parse_args(argv))

    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True):
            config = self._resolve(["solve"])
        assert config.resolved_order == 8
        assert (config.eps_in, config.eps_out) == (4.0, 80.0)
        assert config.method == "bem"
        assert config.threads == 1
        assert config.deterministic is True

    def test_bench_default_order(self):
        with patch.dict(os.environ, {}, clear=True):
            assert self._resolve(["bench-fmm"]).resolved_order == 10

    def test_precedence(self):
        with open(self.config_path, "w") as fh:
            fh.write("order=7\nBIBEEFMM_EPS_OUT=78.5\nmethod=cfa\n")
        env = {"BIBEEFMM_ORDER": "6", "BIBEEFMM_EPS_IN": "2", "BIBEEFMM_EPS_OUT": "40"}
        with patch.dict(os.environ, env, clear=True):
            assert self._resolve(["solve"]).order == 6
            config = self._resolve(["solve", "--config", self.config_path])
            assert config.order == 7
            assert config.eps_in == 2.0
            assert config.eps_out == 78.5
            assert config.method == "cfa"
            config = self._resolve(["solve", "--config", self.config_path, "--order", "9"])
            assert config.order == 9

    def test_flags_parse_types(self):
        with patch.dict(os.environ, {}, clear=True):
            config = self._resolve(["bench-fmm", "--n", "1000,2000", "--nondeterministic"])
            assert config.n_list == [1000, 2000]
            assert config.deterministic is False
            config = self._resolve(["mesh-sphere", "--center", "1,0,-2", "--output", "x"])
            assert config.center == (1.0, 0.0, -2.0)

    def test_bad_environment_value(self):
        from error_handling import ConfigurationError

        with patch.dict(os.environ, {"BIBEEFMM_THREADS": "many"}, clear=True):
            with pytest.raises(ConfigurationError):
                self._resolve(["solve"])

    def test_unknown_config_key(self):
        from error_handling import ConfigurationError

        with open(self.config_path, "w") as fh:
            fh.write("bogus=1\n")
        with patch.dict(os.environ, {}, clear=True):
            with pytest.raises(ConfigurationError):
                self._resolve(["solve", "--config", self.config_path])

    def test_file_overrides_strip_prefix(self):
        with open(self.config_path, "w") as fh:
            fh.write("BIBEEFMM_NCRIT=32\nbibeefmm_restart=10\n")
        assert file_overrides(self.config_path) == {"ncrit": "32", "restart": "10"}

    def test_validate_rejects_equal_permittivities(self):
        from error_handling import ConfigurationError

        with pytest.raises(ConfigurationError):
            RunConfig(command="bench-fmm", eps_in=10.0, eps_out=10.0).validate()

    def test_validate_requires_solve_inputs(self):
        from error_handling import ConfigurationError, FilesystemError

        with pytest.raises(ConfigurationError):
            RunConfig(command="solve").validate()
        missing = os.path.join(self.temp_dir, "missing")
        with pytest.raises(FilesystemError):
            RunConfig(command="solve", vert=missing, face=missing, pqr=missing).validate()
        with pytest.raises(FilesystemError):
            RunConfig(
                command="solve", vert=self.temp_dir, face=self.temp_dir, pqr=self.temp_dir
            ).validate()


class TestLogIssue:
    """Test the standardized issue line"""

    def test_format(self, caplog):
        line = log_issue("warning", "solve", "bem", "slow", "large mesh", "use --threads")
        assert line == "[WARNING][solve][bem] slow | cause: large mesh | fix: use --threads"
        assert line in caplog.text
