#!/usr/bin/env python3
"""
bibeefmm command line

Subcommands:
  solve        solvation energy of one molecule (BEM or a BIBEE variant)
  bind         binding energy from complex, protein and ligand solves
  bench-fmm    FMM timings and accuracy on random point clouds
  mesh-sphere  icosphere test surface in MSMS format (optionally with a PQR)
  replicate    randomly rotated copies of a molecule on a cubic grid
  health       system and numerical-stack health check

Parameters resolve from dataclass defaults, then BIBEEFMM_* environment
variables (a .env file is honoured), then a ``--config`` key=value file,
then explicit flags.

Exit status: 0 success, 1 input/IO/configuration error, 2 GMRES did not converge.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from dotenv import dotenv_values, load_dotenv

from bem import SolveOptions, SolveResult, binding_energy, solve, write_sigma_csv
from benchmark import DISTRIBUTIONS, plot_timing_breakdown, run_fmm_bench, write_bench_csv
from error_handling import (
    BibeeFmmError,
    ConfigurationError,
    ConvergenceError,
    ErrorCategory,
    ErrorContext,
    FilesystemError,
    get_error_handler,
    validate_existing_file,
    validate_order,
    validate_positive,
    validate_subdivisions,
    validate_tolerance,
)
from fmm import MAX_ORDER
from molgeom import (
    ChargeSet,
    DielectricModel,
    MolecularSystem,
    bounding_sphere,
    icosphere,
    load_system,
    replicate_grid,
    write_msms,
    write_pqr,
)
from monitoring import MonitoringAgent, load_monitoring_config

logger = logging.getLogger("bibeefmm.cli")

COMMANDS = ("solve", "bind", "bench-fmm", "mesh-sphere", "replicate", "health")
METHODS = ("bem", "cfa", "p", "lb")
DEFAULT_ORDER = 8
DEFAULT_BENCH_ORDER = 10
REPLICATE_SPACING_FACTOR = 2.5

# Environment variables and the RunConfig field each one sets.
ENV_VARS = {
    "BIBEEFMM_THREADS": "threads",
    "BIBEEFMM_ORDER": "order",
    "BIBEEFMM_NCRIT": "ncrit",
    "BIBEEFMM_EPS_IN": "eps_in",
    "BIBEEFMM_EPS_OUT": "eps_out",
    "BIBEEFMM_TOL": "tol",
    "BIBEEFMM_SEED": "seed",
    "BIBEEFMM_LOG_JSON": "log_json",
}


@dataclass
class RunConfig:
    """Every run parameter of every subcommand."""

    command: str = "solve"
    # solve inputs
    vert: Optional[str] = None
    face: Optional[str] = None
    pqr: Optional[str] = None
    flip_orientation: bool = False
    # bind inputs: prefixes of <prefix>.vert/.face/.pqr
    complex_prefix: Optional[str] = None
    protein_prefix: Optional[str] = None
    ligand_prefix: Optional[str] = None
    # physics and solver
    eps_in: float = 4.0
    eps_out: float = 80.0
    method: str = "bem"
    order: Optional[int] = None
    ncrit: int = 64
    tol: float = 1e-5
    restart: int = 30
    maxiter: int = 200
    threads: int = 1
    deterministic: bool = True
    direct: bool = False
    seed: int = 0
    # bench-fmm
    n_list: List[int] = field(default_factory=lambda: [10_000])
    distribution: str = "cube"
    direct_sample: int = 1000
    plot: Optional[str] = None
    # mesh-sphere
    radius: float = 1.0
    subdiv: int = 3
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    charge: Optional[float] = None
    offset: float = 0.0
    # replicate
    input_prefix: Optional[str] = None
    nx: int = 1
    ny: int = 1
    nz: int = 1
    spacing: Optional[float] = None
    # outputs
    output: Optional[str] = None
    report: Optional[str] = None
    sigma_csv: Optional[str] = None
    # observability
    log_json: bool = False
    log_file: Optional[str] = None
    perf_log: Optional[str] = None
    verbose: bool = False

    @property
    def resolved_order(self) -> int:
        if self.order is not None:
            return self.order
        return DEFAULT_BENCH_ORDER if self.command == "bench-fmm" else DEFAULT_ORDER

    @property
    def dielectric(self) -> DielectricModel:
        return DielectricModel(self.eps_in, self.eps_out)

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            tol=self.tol,
            maxiter=self.maxiter,
            restart=self.restart,
            order=self.resolved_order,
            ncrit=self.ncrit,
            threads=self.threads,
            deterministic=self.deterministic,
            direct=self.direct,
        )

    def _require_files(self, *paths: Optional[str]) -> None:
        for path in paths:
            if not path:
                raise ConfigurationError(
                    f"{self.command} needs an input file that was not given",
                    ErrorContext(operation=self.command),
                )
            if not validate_existing_file(path):
                raise FilesystemError(
                    f"input file not found: {path}",
                    ErrorContext(operation=self.command, metadata={"path": path}),
                )

    def _check(self, ok: bool, message: str) -> None:
        if not ok:
            raise ConfigurationError(
                message, ErrorContext(operation=self.command)
            )

    def validate(self) -> "RunConfig":
        """Check every parameter the command uses before any computation starts."""
        self._check(self.command in COMMANDS, f"unknown command {self.command!r}")
        self._check(self.method in METHODS, f"method must be one of {METHODS}, got {self.method!r}")
        self._check(validate_positive(self.eps_in), f"eps_in must be positive, got {self.eps_in}")
        self._check(
            validate_positive(self.eps_out), f"eps_out must be positive, got {self.eps_out}"
        )
        self._check(self.eps_in != self.eps_out, "eps_in and eps_out must differ")
        self._check(
            validate_order(self.resolved_order),
            f"order must be an integer in 1..{MAX_ORDER}, got {self.resolved_order}",
        )
        self._check(self.ncrit >= 1, f"ncrit must be at least 1, got {self.ncrit}")
        self._check(validate_tolerance(self.tol), f"tol must lie in (0, 1), got {self.tol}")
        self._check(self.restart >= 1, f"restart must be at least 1, got {self.restart}")
        self._check(self.maxiter >= 1, f"maxiter must be at least 1, got {self.maxiter}")
        self._check(self.threads >= 1, f"threads must be at least 1, got {self.threads}")

        if self.command == "solve":
            self._require_files(self.vert, self.face, self.pqr)
        elif self.command == "bind":
            for prefix in (self.complex_prefix, self.protein_prefix, self.ligand_prefix):
                self._check(bool(prefix), "bind needs --complex, --protein and --ligand prefixes")
                self._require_files(f"{prefix}.vert", f"{prefix}.face", f"{prefix}.pqr")
        elif self.command == "bench-fmm":
            self._check(
                bool(self.n_list) and min(self.n_list) >= 1,
                f"every N must be at least 1, got {self.n_list}",
            )
            self._check(
                self.distribution in DISTRIBUTIONS,
                f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}",
            )
            self._check(self.direct_sample >= 0, "direct sample size must not be negative")
        elif self.command == "mesh-sphere":
            self._check(validate_positive(self.radius), f"radius must be positive, got {self.radius}")
            self._check(
                validate_subdivisions(self.subdiv), f"subdiv must lie in 0..8, got {self.subdiv}"
            )
            self._check(bool(self.output), "mesh-sphere needs --output PREFIX")
            self._check(
                abs(self.offset) < self.radius,
                f"offset {self.offset} puts the charge outside the sphere of radius {self.radius}",
            )
        elif self.command == "replicate":
            self._check(bool(self.input_prefix), "replicate needs --input PREFIX")
            self._require_files(
                f"{self.input_prefix}.vert", f"{self.input_prefix}.face", f"{self.input_prefix}.pqr"
            )
            self._check(min(self.nx, self.ny, self.nz) >= 1, "grid counts must be positive")
            self._check(bool(self.output), "replicate needs --output PREFIX")
            if self.spacing is not None:
                self._check(
                    validate_positive(self.spacing), f"spacing must be positive, got {self.spacing}"
                )
        return self


# ---------------------------------------------------------------------------
# Configuration resolution
# ---------------------------------------------------------------------------

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> List[int]:
    return [int(float(v)) for v in str(text).replace(" ", "").split(",") if v]


def _parse_triple(text: str) -> Tuple[float, float, float]:
    values = [float(v) for v in str(text).split(",")]
    if len(values) != 3:
        raise ValueError(f"expected x,y,z, got {text!r}")
    return tuple(values)


_INT_FIELDS = {
    "order", "ncrit", "restart", "maxiter", "threads", "seed", "direct_sample",
    "subdiv", "nx", "ny", "nz",
}
_FLOAT_FIELDS = {"eps_in", "eps_out", "tol", "radius", "charge", "offset", "spacing"}
_BOOL_FIELDS = {"flip_orientation", "deterministic", "direct", "log_json", "verbose"}


def _coerce(name: str, raw: Any) -> Any:
    """Convert a text value from the environment or a config file to the field's type."""
    if not isinstance(raw, str):
        return raw
    try:
        if name in _INT_FIELDS:
            return int(float(raw))
        if name in _FLOAT_FIELDS:
            return float(raw)
        if name in _BOOL_FIELDS:
            return _parse_bool(raw)
        if name == "n_list":
            return _parse_int_list(raw)
        if name == "center":
            return _parse_triple(raw)
    except ValueError as exc:
        raise ConfigurationError(
            f"invalid value for {name}: {raw!r}",
            ErrorContext(operation="config"),
            exc,
        ) from exc
    return raw.strip()


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def _apply(config: RunConfig, values: Dict[str, Any], source: str) -> None:
    for name, raw in values.items():
        if raw is None:
            continue
        if name not in _FIELD_NAMES:
            raise ConfigurationError(
                f"unknown setting {name!r} in {source}",
                ErrorContext(operation="config"),
            )
        setattr(config, name, _coerce(name, raw))


def env_overrides() -> Dict[str, str]:
    """RunConfig values set through BIBEEFMM_* variables (after loading .env)."""
    load_dotenv()
    return {name: os.environ[var] for var, name in ENV_VARS.items() if os.environ.get(var)}


def file_overrides(path: str) -> Dict[str, str]:
    """key=value settings from a config file; keys may carry the BIBEEFMM_ prefix."""
    if not os.path.isfile(path):
        raise FilesystemError(
            f"config file not found: {path}", ErrorContext("config", metadata={"path": path})
        )
    values = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            continue
        if key in ENV_VARS:
            name = ENV_VARS[key]
        else:
            name = key.lower().replace("-", "_")
            if name.startswith("bibeefmm_"):
                name = name[len("bibeefmm_"):]
        values[name] = value
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then environment, then ``--config`` file, then flags."""
    config = RunConfig(command=args.command)
    _apply(config, env_overrides(), "environment")
    if getattr(args, "config", None):
        _apply(config, file_overrides(args.config), args.config)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    _apply(config, flags, "command line")
    return config


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

class _JSONFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        return json.dumps(payload, ensure_ascii=False)


def setup_logging(log_json: bool = False, log_file: Optional[str] = None, verbose: bool = False):
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    if log_json:
        fmt = _JSONFormatter()
    else:
        fmt = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    handlers = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    for handler in handlers:
        handler.setFormatter(fmt)
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    return root


def log_issue(level: str, component: str, context: str, message: str, cause: str, fix: str):
    """Standardized log format: [LEVEL][component][context] message | cause: ... | fix: ..."""
    line = f"[{level.upper()}][{component}][{context}] {message} | cause: {cause} | fix: {fix}"
    if level.lower() == "error":
        logger.error(line)
    elif level.lower() == "warning":
        logger.warning(line)
    else:
        logger.info(line)
    return line


_FIXES = {
    ErrorCategory.INPUT_FORMAT: "check the file against the MSMS/PQR layout",
    ErrorCategory.FILESYSTEM: "check the path exists and is readable/writable",
    ErrorCategory.CONFIGURATION: "correct the flag, config file or BIBEEFMM_* variable",
    ErrorCategory.VALIDATION: "correct the flag, config file or BIBEEFMM_* variable",
    ErrorCategory.GEOMETRY: "inspect the mesh or charge positions",
    ErrorCategory.CONVERGENCE: "raise --maxiter or --restart, or loosen --tol",
    ErrorCategory.RESOURCE: "reduce the problem size or free memory",
    ErrorCategory.NUMERICAL: "check the dielectric constants and the mesh",
}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _write_json(payload: Dict[str, Any], path: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if not path:
        print(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise FilesystemError(f"cannot write report {path}: {exc}", ErrorContext("report"), exc)
    logger.info(f"📄 Report written to {path}")


def _load(config: RunConfig, vert: str, face: str, pqr: str) -> MolecularSystem:
    return load_system(vert, face, pqr, config.dielectric, config.flip_orientation)


def cmd_solve(config: RunConfig, metrics=None) -> int:
    system = _load(config, config.vert, config.face, config.pqr)
    result = solve(system, config.method, config.solve_options())
    if metrics is not None:
        metrics.update(
            n_panels=system.n_panels,
            n_charges=system.n_charges,
            fmm_evaluations=result.fmm_evaluations,
            gmres_iterations=result.iterations,
        )
    _write_json(result.to_report(), config.report)
    if config.sigma_csv:
        write_sigma_csv(result, config.sigma_csv)
    if not result.converged:
        log_issue(
            "warning", "solve", config.method,
            f"GMRES stopped after {result.iterations} iterations",
            f"relative residual {result.residuals[-1]:.3e} above tol {config.tol:g}",
            _FIXES[ErrorCategory.CONVERGENCE],
        )
        return 2
    return 0


def _bind_inputs(config: RunConfig) -> List[Tuple[str, str]]:
    return [
        ("complex", config.complex_prefix),
        ("protein", config.protein_prefix),
        ("ligand", config.ligand_prefix),
    ]


def cmd_bind(config: RunConfig, metrics=None) -> int:
    options = config.solve_options()
    results: Dict[str, SolveResult] = {}
    for name, prefix in _bind_inputs(config):
        system = _load(config, f"{prefix}.vert", f"{prefix}.face", f"{prefix}.pqr")
        result = solve(system, config.method, options)
        if not result.converged:
            raise ConvergenceError(
                f"{name} solve did not converge in {result.iterations} iterations",
                ErrorContext(operation="bind", metadata={"species": name}),
                result=result,
            )
        results[name] = result

    ddG = binding_energy(results["complex"], results["protein"], results["ligand"])
    if metrics is not None:
        metrics.update(
            n_panels=sum(r.n_panels for r in results.values()),
            n_charges=sum(r.n_charges for r in results.values()),
            fmm_evaluations=sum(r.fmm_evaluations for r in results.values()),
            gmres_iterations=sum(r.iterations for r in results.values()),
        )
    report = {
        "method": config.method,
        "eps_in": config.eps_in,
        "eps_out": config.eps_out,
        "order_p": config.resolved_order,
        "dG_complex_kcal_mol": results["complex"].dG_kcal_mol,
        "dG_protein_kcal_mol": results["protein"].dG_kcal_mol,
        "dG_ligand_kcal_mol": results["ligand"].dG_kcal_mol,
        "ddG_kcal_mol": ddG,
        "solves": {name: r.to_report() for name, r in results.items()},
    }
    logger.info(f"✅ Binding ddG = {ddG:.6g} kcal/mol")
    _write_json(report, config.report)
    return 0


def cmd_bench_fmm(config: RunConfig, metrics=None) -> int:
    records = run_fmm_bench(
        config.n_list,
        p=config.resolved_order,
        ncrit=config.ncrit,
        threads=config.threads,
        distribution=config.distribution,
        seed=config.seed,
        direct_sample=config.direct_sample,
        deterministic=config.deterministic,
    )
    if metrics is not None:
        metrics.update(n_points=sum(r.N for r in records), fmm_evaluations=len(records))
    path = config.output or "bench_fmm.csv"
    write_bench_csv(records, path)
    logger.info(f"📄 Benchmark CSV written to {path}")
    if config.plot:
        plot_timing_breakdown(records, config.plot)
    return 0


def cmd_mesh_sphere(config: RunConfig, metrics=None) -> int:
    mesh = icosphere(config.radius, config.subdiv, np.asarray(config.center))
    if metrics is not None:
        metrics.update(n_panels=mesh.n_triangles)
    vert, face = write_msms(mesh, config.output)
    logger.info(f"✅ Wrote {mesh.n_triangles} faces to {vert}, {face}")
    if config.charge is not None:
        position = np.asarray(config.center, dtype=np.float64) + [0.0, 0.0, config.offset]
        write_pqr(ChargeSet([position], [config.charge], [0.0]), f"{config.output}.pqr")
    return 0


def cmd_replicate(config: RunConfig, metrics=None) -> int:
    prefix = config.input_prefix
    base = _load(config, f"{prefix}.vert", f"{prefix}.face", f"{prefix}.pqr")
    spacing = config.spacing
    if spacing is None:
        spacing = REPLICATE_SPACING_FACTOR * bounding_sphere(base.mesh)[1]
    system = replicate_grid(base, config.nx, config.ny, config.nz, spacing, seed=config.seed)
    if metrics is not None:
        metrics.update(n_panels=system.n_panels, n_charges=system.n_charges)
    write_msms(system.mesh, config.output)
    write_pqr(system.charges, f"{config.output}.pqr")
    logger.info(f"✅ Wrote {system.n_panels} panels and {system.n_charges} charges")
    return 0


def cmd_health(config: RunConfig, monitor: MonitoringAgent) -> int:
    health = monitor.health_check()
    print(json.dumps(health, indent=2))
    return 0 if health["status"] in ("healthy", "warning") else 1


COMMAND_HANDLERS = {
    "solve": cmd_solve,
    "bind": cmd_bind,
    "bench-fmm": cmd_bench_fmm,
    "mesh-sphere": cmd_mesh_sphere,
    "replicate": cmd_replicate,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _common_options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand; unset flags stay None so lower layers win."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file merged beneath flags")
    common.add_argument("--log-json", dest="log_json", action="store_const", const=True,
                        help="Emit JSON log lines")
    common.add_argument("--log-file", dest="log_file", help="Also log to this file")
    common.add_argument("--perf-log", dest="perf_log", help="Append JSONL performance metrics")
    common.add_argument("--verbose", "-v", action="store_const", const=True, help="Debug logging")
    common.add_argument("--threads", type=int, help="Worker threads for the FMM (default 1)")
    common.add_argument("--seed", type=int, help="Seed for every random choice (default 0)")
    return common


def _solver_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=METHODS, help="bem (default), cfa, p or lb")
    parser.add_argument("--eps-in", dest="eps_in", type=float, help="Solute permittivity (4)")
    parser.add_argument("--eps-out", dest="eps_out", type=float, help="Solvent permittivity (80)")
    parser.add_argument("--order", "-p", dest="order", type=int, help="Expansion order (8)")
    parser.add_argument("--ncrit", type=int, help="Maximum points per leaf (64)")
    parser.add_argument("--tol", type=float, help="GMRES relative tolerance (1e-5)")
    parser.add_argument("--restart", type=int, help="GMRES restart length (30)")
    parser.add_argument("--maxiter", type=int, help="GMRES iteration limit (200)")
    parser.add_argument("--direct", action="store_const", const=True,
                        help="Bypass the FMM with direct summation")
    parser.add_argument("--nondeterministic", dest="deterministic", action="store_const",
                        const=False, help="Let the work partition follow the thread count")
    parser.add_argument("--flip-orientation", dest="flip_orientation", action="store_const",
                        const=True, help="Reverse triangle winding of the input meshes")
    parser.add_argument("--report", help="Write the JSON report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bibeefmm",
        description="Matrix-free BEM / BIBEE solvation energies with a fast multipole method",
    )
    common = _common_options()
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", parents=[common], help="Solvation energy of one molecule")
    p_solve.add_argument("--vert", help="MSMS .vert file")
    p_solve.add_argument("--face", help="MSMS .face file")
    p_solve.add_argument("--pqr", help="PQR charge file")
    p_solve.add_argument("--sigma-csv", dest="sigma_csv", help="Write the surface charge CSV")
    _solver_options(p_solve)

    p_bind = sub.add_parser("bind", parents=[common], help="Binding energy of a rigid complex")
    p_bind.add_argument("--complex", dest="complex_prefix", help="Prefix of complex files")
    p_bind.add_argument("--protein", dest="protein_prefix", help="Prefix of protein files")
    p_bind.add_argument("--ligand", dest="ligand_prefix", help="Prefix of ligand files")
    _solver_options(p_bind)

    p_bench = sub.add_parser("bench-fmm", parents=[common], help="FMM timing and accuracy")
    p_bench.add_argument("--n", dest="n_list", type=_parse_int_list,
                         help="Comma-separated problem sizes (10000)")
    p_bench.add_argument("--order", "-p", dest="order", type=int, help="Expansion order (10)")
    p_bench.add_argument("--ncrit", type=int, help="Maximum points per leaf (64)")
    p_bench.add_argument("--distribution", choices=DISTRIBUTIONS, help="cube (default) or sphere")
    p_bench.add_argument("--direct-sample", dest="direct_sample", type=int,
                         help="Targets checked against direct summation; 0 disables (1000)")
    p_bench.add_argument("--nondeterministic", dest="deterministic", action="store_const",
                         const=False, help="Let the work partition follow the thread count")
    p_bench.add_argument("--output", "-o", help="CSV output path (bench_fmm.csv)")
    p_bench.add_argument("--plot", help="Write a timing breakdown PNG")

    p_mesh = sub.add_parser("mesh-sphere", parents=[common], help="Icosphere in MSMS format")
    p_mesh.add_argument("--radius", type=float, help="Sphere radius (1.0)")
    p_mesh.add_argument("--subdiv", type=int, help="Subdivision level (3 gives 1280 faces)")
    p_mesh.add_argument("--center", type=_parse_triple, help="x,y,z of the centre")
    p_mesh.add_argument("--charge", type=float, help="Also write a PQR with this charge")
    p_mesh.add_argument("--offset", type=float, help="z offset of the charge from the centre")
    p_mesh.add_argument("--output", "-o", help="Output prefix for .vert/.face/.pqr")

    p_rep = sub.add_parser("replicate", parents=[common], help="Grid of rotated copies")
    p_rep.add_argument("--input", dest="input_prefix", help="Prefix of the molecule files")
    p_rep.add_argument("--nx", type=int, help="Copies along x")
    p_rep.add_argument("--ny", type=int, help="Copies along y")
    p_rep.add_argument("--nz", type=int, help="Copies along z")
    p_rep.add_argument("--spacing", type=float,
                       help="Centre-to-centre spacing (2.5 x bounding radius)")
    p_rep.add_argument("--flip-orientation", dest="flip_orientation", action="store_const",
                       const=True, help="Reverse triangle winding of the input mesh")
    p_rep.add_argument("--output", "-o", help="Output prefix for .vert/.face/.pqr")

    sub.add_parser("health", parents=[common], help="Print a health check as JSON")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse, validate, execute; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = resolve_config(args)
        setup_logging(config.log_json, config.log_file, config.verbose)
        config.validate()
    except BibeeFmmError as exc:
        setup_logging()
        category = exc.context.category
        log_issue("error", "cli", args.command, str(exc), category.value, _FIXES.get(category, ""))
        return exc.exit_code

    monitor_config = load_monitoring_config()
    if config.perf_log:
        monitor_config.performance_log_file = config.perf_log
    monitor = MonitoringAgent(monitor_config)

    if config.command == "health":
        return cmd_health(config, monitor)

    logger.info(f"🚀 bibeefmm {config.command}")
    metrics = monitor.start_operation_monitoring(config.command)
    handler = get_error_handler()
    try:
        status = COMMAND_HANDLERS[config.command](config, metrics)
    except BibeeFmmError as exc:
        handler.handle(exc, config.command)
        monitor.end_operation_monitoring(metrics, success=False, error_message=str(exc))
        category = exc.context.category
        log_issue("error", config.command, category.value, str(exc),
                  repr(exc.cause) if exc.cause else category.value, _FIXES.get(category, ""))
        return exc.exit_code
    except (OSError, ValueError, MemoryError, FloatingPointError) as exc:
        enhanced = handler.handle(exc, config.command)
        monitor.end_operation_monitoring(metrics, success=False, error_message=str(exc))
        log_issue("error", config.command, enhanced.context.category.value, str(exc),
                  type(exc).__name__, _FIXES.get(enhanced.context.category, ""))
        return enhanced.exit_code

    monitor.end_operation_monitoring(metrics, success=status == 0)
    return status


def main():
    """Main entry point."""
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\nOperation cancelled by user")
        sys.exit(1)


if __name__ == "__main__":
    main()
