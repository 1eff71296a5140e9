#!/usr/bin/env python3
"""
Matrix-free boundary-element solver for the induced surface charge.

Discrete formulation (centroid collocation, one point per flat panel)::

    sigma = f * (E_n + K' sigma),   f = 2 (eps_out - eps_in) / (eps_in + eps_out)

- ``E_n`` is the normal Coulomb field of the solute charges at the panel
  centroids, carrying the ``1/eps_in`` factor (``apply_B``);
- ``K'`` is the principal-value adjoint double layer with zero self term,
  applied with source strengths ``sigma_j * area_j`` (``apply_Kprime``);
- the exact path solves ``A sigma = f E_n`` with ``A = I - f K'`` by GMRES;
- the BIBEE path replaces ``K'`` with ``s * I`` (s = -1/2, 0, +1/2) and
  divides: ``sigma = f E_n / (1 - f s)``.

The solvation energy is ``1/2 sum_k q_k phi_reac(r_k)`` where ``phi_reac`` is
the Coulomb potential of the surface charge (``reaction_potential``).
Internal energies use the 1/(4 pi) kernel; kcal/mol multiplies by
4 pi * 332.0637.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import eval_legendre
from tqdm import tqdm

from error_handling import (
    ConfigurationError,
    ErrorContext,
    FilesystemError,
    GeometryError,
    NumericalError,
    guard_memory,
)
from fmm import (
    KERNEL_SCALE,
    FieldResult,
    FmmConfig,
    FmmPlan,
    SourceSet,
    TargetSet,
    direct_evaluate,
)
from molgeom import (
    ChargeSet,
    DielectricModel,
    MolecularSystem,
    PanelSet,
    charges_outside,
    icosphere,
)

logger = logging.getLogger("bibeefmm.bem")

COULOMB_KCAL = 332.0637
KCAL_PER_INTERNAL = 4.0 * math.pi * COULOMB_KCAL
KIRKWOOD_TAIL_TOLERANCE = 1e-10
SINGULAR_DIAGONAL = 1e-12
TIMING_KEYS = ("tree", "upward", "m2l", "l2l", "l2p", "p2p", "total")


class BibeeVariant(Enum):
    CFA = -0.5
    P = 0.0
    LB = 0.5

    @property
    def scale(self) -> float:
        return float(self.value)

    @classmethod
    def from_name(cls, name: str) -> "BibeeVariant":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ConfigurationError(
                f"unknown BIBEE variant '{name}' (expected cfa, p or lb)"
            ) from None


@dataclass
class SurfaceDensity:
    """Induced charge per unit area on each panel."""

    sigma: np.ndarray
    panels: PanelSet

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if len(self.sigma) != len(self.panels):
            raise ConfigurationError(
                f"{len(self.sigma)} sigma values for {len(self.panels)} panels"
            )

    @property
    def total_charge(self) -> float:
        return float(self.sigma @ self.panels.areas)


@dataclass
class SolveOptions:
    tol: float = 1e-5
    maxiter: int = 200
    restart: int = 30
    order: int = 8
    ncrit: int = 64
    threads: int = 1
    deterministic: bool = True
    use_rotation: Optional[bool] = None
    direct: bool = False
    check_charges: bool = True

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ConfigurationError(f"tolerance must lie in (0, 1), got {self.tol}")
        if self.restart < 1:
            raise ConfigurationError(f"restart must be at least 1, got {self.restart}")
        if self.maxiter < 1:
            raise ConfigurationError(f"maxiter must be at least 1, got {self.maxiter}")

    def fmm_config(self) -> FmmConfig:
        return FmmConfig(
            order=self.order,
            ncrit=self.ncrit,
            use_rotation=self.use_rotation,
            deterministic=self.deterministic,
            threads=self.threads,
        )


class OperatorContext:
    """System, constants and cached FMM plans shared by the operator applications."""

    def __init__(self, system: MolecularSystem, options: Optional[SolveOptions] = None):
        self.system = system
        self.options = options or SolveOptions()
        self.fmm_config = self.options.fmm_config()
        self.dielectric: DielectricModel = system.dielectric
        self.direct = self.options.direct
        self.fmm_evaluations = 0
        self.timings: Dict[str, float] = {key: 0.0 for key in TIMING_KEYS}
        self._plans: Dict[Tuple[str, int, int], tuple] = {}

    @property
    def f(self) -> float:
        return self.dielectric.f

    @property
    def eps_hat(self) -> float:
        return self.dielectric.eps_hat

    def _record(self, result: FieldResult, build_time: float = 0.0):
        self.fmm_evaluations += 1
        for key in TIMING_KEYS:
            self.timings[key] += result.timings.get(key, 0.0)
        self.timings["tree"] += build_time
        self.timings["total"] += build_time

    def field(
        self,
        name: str,
        source_positions: np.ndarray,
        weights: np.ndarray,
        targets: TargetSet,
        shared: bool,
        want_gradient: bool,
    ) -> FieldResult:
        """One kernel evaluation, through a cached FMM plan or the direct sum."""
        if self.direct:
            result = direct_evaluate(
                SourceSet(source_positions, weights), targets, shared=shared
            )
            self._record(result)
            return result
        key = (name, id(source_positions), id(targets))
        build_time = 0.0
        if key not in self._plans:
            plan = FmmPlan(source_positions, targets, self.fmm_config, shared=shared)
            self._plans[key] = (source_positions, targets, plan)
            build_time = plan.build_time
        plan = self._plans[key][2]
        result = plan.evaluate(weights, want_gradient=want_gradient)
        self._record(result, build_time)
        return result

    def panel_targets(self, panels: PanelSet) -> TargetSet:
        key = ("targets", id(panels), 0)
        if key not in self._plans:
            self._plans[key] = (panels, None, TargetSet(panels.centroids, panels.normals))
        return self._plans[key][2]

    def charge_targets(self, charges: ChargeSet) -> TargetSet:
        key = ("charges", id(charges), 0)
        if key not in self._plans:
            self._plans[key] = (charges, None, TargetSet(charges.positions))
        return self._plans[key][2]


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def _sigma_values(sigma) -> np.ndarray:
    if isinstance(sigma, SurfaceDensity):
        return sigma.sigma
    return np.asarray(sigma, dtype=np.float64).reshape(-1)


def apply_B(charges: ChargeSet, panels: PanelSet, ctx: OperatorContext) -> np.ndarray:
    """Normal Coulomb field E_n of the charges at every centroid (includes 1/eps_in)."""
    if not charges.n_charges or not np.any(charges.charges):
        return np.zeros(len(panels))
    result = ctx.field(
        "B", charges.positions, charges.charges, ctx.panel_targets(panels), False, True
    )
    return result.normal_derivative / ctx.dielectric.eps_in


def apply_Kprime(sigma, panels: PanelSet, ctx: OperatorContext) -> np.ndarray:
    """Adjoint double layer with zero self term, one point per panel."""
    values = _sigma_values(sigma)
    if len(values) != len(panels):
        raise ConfigurationError(f"{len(values)} sigma values for {len(panels)} panels")
    targets = ctx.panel_targets(panels)
    result = ctx.field("K", targets.positions, values * panels.areas, targets, True, True)
    return result.normal_derivative


def apply_A(sigma, ctx: OperatorContext) -> np.ndarray:
    """A sigma = sigma - f K' sigma."""
    values = _sigma_values(sigma)
    return values - ctx.f * apply_Kprime(values, ctx.system.panels, ctx)


def bibee_apply_Dinv(E_n, variant: BibeeVariant, ctx: OperatorContext) -> SurfaceDensity:
    """Diagonal solve ``sigma = f E_n / (1 - f s)``."""
    if isinstance(variant, str):
        variant = BibeeVariant.from_name(variant)
    diagonal = 1.0 - ctx.f * variant.scale
    if abs(diagonal) < SINGULAR_DIAGONAL:
        raise NumericalError(
            f"BIBEE {variant.name} diagonal vanishes (1 - f*s = {diagonal:.3e}, f = {ctx.f:.6g})",
            ErrorContext("bibee_apply_Dinv", metadata={"f": ctx.f, "scale": variant.scale}),
        )
    E_n = np.asarray(E_n, dtype=np.float64)
    return SurfaceDensity(ctx.f * E_n / diagonal, ctx.system.panels)


def reaction_potential(sigma, charges: ChargeSet, ctx: OperatorContext) -> np.ndarray:
    """Coulomb potential of the surface charge at every solute charge."""
    values = _sigma_values(sigma)
    if not charges.n_charges:
        return np.zeros(0)
    panels = ctx.system.panels
    if not np.any(values):
        return np.zeros(charges.n_charges)
    result = ctx.field(
        "C",
        panels.centroids,
        values * panels.areas,
        ctx.charge_targets(charges),
        False,
        False,
    )
    return result.potential


def solvation_energy(phi_reac, charges) -> Tuple[float, float]:
    """(internal, kcal/mol) of ``1/2 sum q phi_reac``."""
    q = charges.charges if isinstance(charges, ChargeSet) else np.asarray(charges, dtype=float)
    phi_reac = np.asarray(phi_reac, dtype=np.float64)
    if len(q) != len(phi_reac):
        raise ConfigurationError(f"{len(phi_reac)} potentials for {len(q)} charges")
    internal = 0.5 * float(q @ phi_reac)
    return internal, internal * KCAL_PER_INTERNAL


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

@dataclass
class GmresResult:
    x: np.ndarray
    residuals: List[float]
    iterations: int
    converged: bool
    breakdown: bool = False


def gmres(
    operator: Union[Callable[[np.ndarray], np.ndarray], object],
    rhs,
    options: Optional[SolveOptions] = None,
    callback: Optional[Callable[[int, float], None]] = None,
) -> GmresResult:
    """Restarted GMRES with modified Gram-Schmidt and Givens rotations.

    ``operator`` is a callable or anything with a ``matvec`` method (for
    instance a ``scipy.sparse.linalg.LinearOperator``). Starts from zero;
    ``residuals`` holds relative residual norms, the first being 1.
    Every iteration costs exactly one operator application.
    """
    options = options or SolveOptions()
    matvec = operator.matvec if hasattr(operator, "matvec") else operator
    b = np.asarray(rhs, dtype=np.float64).reshape(-1)
    n = len(b)
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return GmresResult(x, [0.0], 0, True)

    tol, restart = options.tol, min(options.restart, max(n, 1))
    residuals = [1.0]
    r = b.copy()
    iterations = 0
    breakdown = False
    eps = np.finfo(np.float64).eps

    while iterations < options.maxiter:
        beta = float(np.linalg.norm(r))
        basis = np.zeros((restart + 1, n))
        hessenberg = np.zeros((restart + 1, restart))
        raw = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        basis[0] = r / beta
        used = 0

        for j in range(restart):
            if iterations >= options.maxiter:
                break
            w = np.asarray(matvec(basis[j]), dtype=np.float64).reshape(-1)
            iterations += 1
            w_norm = float(np.linalg.norm(w))
            for i in range(j + 1):
                hessenberg[i, j] = basis[i] @ w
                w -= hessenberg[i, j] * basis[i]
            h_next = float(np.linalg.norm(w))
            hessenberg[j + 1, j] = h_next
            raw[: j + 2, j] = hessenberg[: j + 2, j]
            breakdown = h_next <= eps * max(w_norm, 1e-300)
            if not breakdown:
                basis[j + 1] = w / h_next

            for i in range(j):
                upper = cs[i] * hessenberg[i, j] + sn[i] * hessenberg[i + 1, j]
                hessenberg[i + 1, j] = -sn[i] * hessenberg[i, j] + cs[i] * hessenberg[i + 1, j]
                hessenberg[i, j] = upper
            denom = math.hypot(hessenberg[j, j], hessenberg[j + 1, j])
            if denom == 0.0:
                breakdown = True
                break
            cs[j] = hessenberg[j, j] / denom
            sn[j] = hessenberg[j + 1, j] / denom
            hessenberg[j, j] = denom
            hessenberg[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            used = j + 1
            residuals.append(abs(g[j + 1]) / bnorm)
            if callback is not None:
                callback(iterations, residuals[-1])
            logger.debug(f"GMRES iteration {iterations}: relative residual {residuals[-1]:.3e}")
            if residuals[-1] <= tol or breakdown:
                break

        if used:
            y = solve_triangular(hessenberg[:used, :used], g[:used])
            x += basis[:used].T @ y
            # r = b - A x without another operator application
            r = beta * basis[0] - basis[: used + 1].T @ (raw[: used + 1, :used] @ y)
        if residuals[-1] <= tol or breakdown or not used:
            break

    converged = residuals[-1] <= tol
    if breakdown and not converged:
        logger.warning(
            f"⚠️  GMRES breakdown after {iterations} iterations "
            f"(relative residual {residuals[-1]:.3e})"
        )
    return GmresResult(x, residuals, iterations, converged, breakdown)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    sigma: SurfaceDensity
    method: str
    iterations: int
    residuals: List[float]
    dG_internal: float
    dG_kcal_mol: float
    converged: bool
    dielectric: DielectricModel
    order: int
    n_charges: int
    fmm_evaluations: int = 0
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def n_panels(self) -> int:
        return len(self.sigma.sigma)

    def to_report(self) -> Dict:
        """Solve report in the published JSON layout."""
        return {
            "method": self.method,
            "n_panels": self.n_panels,
            "n_charges": self.n_charges,
            "eps_in": self.dielectric.eps_in,
            "eps_out": self.dielectric.eps_out,
            "order_p": self.order,
            "f": self.dielectric.f,
            "iterations": self.iterations,
            "residuals": [float(r) for r in self.residuals],
            "dG_internal": self.dG_internal,
            "dG_kcal_mol": self.dG_kcal_mol,
            "timings": {
                key: float(self.timings.get(key, 0.0))
                for key in ("tree", "upward", "m2l", "p2p", "total")
            },
            "converged": bool(self.converged),
        }


def write_sigma_csv(result: SolveResult, path) -> str:
    panels = result.sigma.panels
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["panel_index", "cx", "cy", "cz", "area", "sigma"])
            for i in range(len(panels)):
                cx, cy, cz = panels.centroids[i]
                writer.writerow(
                    [i, float(cx), float(cy), float(cz), float(panels.areas[i]),
                     float(result.sigma.sigma[i])]
                )
    except OSError as exc:
        raise FilesystemError(f"cannot write {path}: {exc}", ErrorContext("write_sigma_csv"), exc)
    return str(path)


def _method_name(method) -> str:
    if isinstance(method, BibeeVariant):
        return method.name.lower()
    name = str(method).strip().lower()
    if name != "bem":
        BibeeVariant.from_name(name)
    return name


def solve(
    system: MolecularSystem,
    method: Union[str, BibeeVariant] = "bem",
    options: Optional[SolveOptions] = None,
) -> SolveResult:
    """B, then GMRES on A (``bem``) or the BIBEE diagonal, then C and the energy.

    Non-convergence is reported through ``SolveResult.converged``; the
    partial solution is still returned.
    """
    start = time.perf_counter()
    options = options or SolveOptions()
    name = _method_name(method)
    ctx = OperatorContext(system, options)
    logger.info(
        f"🔍 Solving {name.upper()}: {system.n_panels} panels, {system.n_charges} charges, "
        f"p={options.order}"
    )

    if options.check_charges:
        outside = charges_outside(system)
        if outside.size:
            logger.warning(
                f"⚠️  {outside.size} charges lie outside the surface (first index "
                f"{int(outside[0])}); continuing"
            )

    E_n = apply_B(system.charges, system.panels, ctx)
    if name == "bem":
        solution = gmres(lambda s: apply_A(s, ctx), ctx.f * E_n, options)
        sigma = SurfaceDensity(solution.x, system.panels)
        iterations, residuals, converged = (
            solution.iterations,
            solution.residuals,
            solution.converged,
        )
    else:
        sigma = bibee_apply_Dinv(E_n, BibeeVariant.from_name(name), ctx)
        iterations, residuals, converged = 0, [], True

    phi = reaction_potential(sigma, system.charges, ctx)
    dG, dG_kcal = solvation_energy(phi, system.charges)
    timings = dict(ctx.timings)
    timings["total"] = time.perf_counter() - start

    result = SolveResult(
        sigma=sigma,
        method=name,
        iterations=iterations,
        residuals=list(residuals),
        dG_internal=dG,
        dG_kcal_mol=dG_kcal,
        converged=converged,
        dielectric=system.dielectric,
        order=options.order,
        n_charges=system.n_charges,
        fmm_evaluations=ctx.fmm_evaluations,
        timings=timings,
    )
    if converged:
        logger.info(
            f"✅ {name.upper()} dG = {dG_kcal:.6g} kcal/mol ({iterations} iterations, "
            f"{timings['total']:.2f}s)"
        )
    else:
        logger.warning(
            f"⚠️  GMRES stopped at relative residual {residuals[-1]:.3e} after "
            f"{iterations} iterations (tol {options.tol:g}); returning partial result"
        )
    return result


def binding_energy(complex_: SolveResult, protein: SolveResult, ligand: SolveResult) -> float:
    """ddG = dG(complex) - dG(protein) - dG(ligand), in kcal/mol."""
    results = (complex_, protein, ligand)
    if len({r.dielectric for r in results}) != 1:
        raise ConfigurationError("binding energy needs one dielectric model for all three solves")
    if len({r.method for r in results}) != 1:
        raise ConfigurationError(
            f"binding energy needs one method, got {[r.method for r in results]}"
        )
    return complex_.dG_kcal_mol - protein.dG_kcal_mol - ligand.dG_kcal_mol


# ---------------------------------------------------------------------------
# Analytic references
# ---------------------------------------------------------------------------

def born_energy(radius: float, charge: float = 1.0,
                dielectric: Optional[DielectricModel] = None) -> float:
    """(q^2 / 8 pi a)(1/eps_out - 1/eps_in), internal units."""
    dielectric = dielectric or DielectricModel()
    return charge * charge / (8.0 * math.pi * radius) * (
        1.0 / dielectric.eps_out - 1.0 / dielectric.eps_in
    )


def _kirkwood_coefficients(dielectric: DielectricModel, terms: int) -> np.ndarray:
    n = np.arange(terms, dtype=np.float64)
    eps_in, eps_out = dielectric.eps_in, dielectric.eps_out
    return (n + 1.0) * (eps_in - eps_out) / (eps_in * ((n + 1.0) * eps_out + n * eps_in))


def kirkwood_energy(
    positions,
    charges,
    radius: float,
    dielectric: Optional[DielectricModel] = None,
    terms: int = 200,
    center=(0.0, 0.0, 0.0),
) -> float:
    """Series solvation energy of point charges inside a dielectric sphere."""
    dielectric = dielectric or DielectricModel()
    if terms < 1:
        raise ConfigurationError(f"terms must be at least 1, got {terms}")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3) - np.asarray(center)
    charges = np.asarray(charges, dtype=np.float64).reshape(-1)
    distances = np.linalg.norm(positions, axis=1)
    if np.any(distances >= radius):
        raise GeometryError(
            f"charges must lie strictly inside the sphere (max offset "
            f"{distances.max():.6g} >= radius {radius:.6g})"
        )
    if not len(charges):
        return 0.0

    unit = np.divide(positions, distances[:, None], out=np.zeros_like(positions),
                     where=distances[:, None] > 0)
    cos_gamma = np.clip(unit @ unit.T, -1.0, 1.0)
    ratio = np.outer(distances, distances) / radius ** 2
    pair_charge = np.outer(charges, charges)
    coefficients = _kirkwood_coefficients(dielectric, terms)

    total = 0.0
    last = 0.0
    power = np.ones_like(ratio)
    for n in range(terms):
        term = coefficients[n] * float(np.sum(pair_charge * power * eval_legendre(n, cos_gamma)))
        total += term
        last = term
        power = power * ratio
    energy = total / (8.0 * math.pi * radius)

    rho = float(ratio.max())
    tail = abs(last) * rho / (1.0 - rho) / (8.0 * math.pi * radius) if rho > 0 else 0.0
    if energy != 0.0 and tail > KIRKWOOD_TAIL_TOLERANCE * abs(energy):
        logger.warning(
            f"⚠️  Kirkwood series not converged after {terms} terms "
            f"(tail estimate {tail:.3e}, relative {tail / abs(energy):.3e})"
        )
    return energy


def kirkwood_oracle(
    a: float,
    d: float,
    q: float = 1.0,
    eps: Optional[DielectricModel] = None,
    terms: int = 200,
) -> float:
    """Single charge at offset ``d`` inside a sphere of radius ``a``."""
    if not 0.0 <= d < a:
        raise GeometryError(f"offset must satisfy 0 <= d < a, got d={d}, a={a}")
    return kirkwood_energy([[0.0, 0.0, d]], [q], a, eps, terms)


# ---------------------------------------------------------------------------
# Dense oracles
# ---------------------------------------------------------------------------

def _dense_mb(rows: int, cols: int) -> float:
    return rows * cols * 8 * 6 / 1024 / 1024


def _normal_kernel(targets: np.ndarray, normals: np.ndarray, sources: np.ndarray) -> np.ndarray:
    d = targets[:, None, :] - sources[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    zero = r2 == 0.0
    inv_r3 = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, r2) ** 1.5)
    return -KERNEL_SCALE * np.einsum("ijk,ik->ij", d, normals) * inv_r3


@guard_memory(lambda charges, panels, eps_in=4.0: _dense_mb(len(panels), len(charges)))
def dense_B(charges: ChargeSet, panels: PanelSet, eps_in: float = 4.0) -> np.ndarray:
    """(n_panels, n_charges) matrix with ``E_n = dense_B @ q``."""
    d2 = np.sum((panels.centroids[:, None] - charges.positions[None]) ** 2, axis=-1)
    if np.any(d2 == 0.0):
        raise GeometryError("a charge coincides with a panel centroid")
    return _normal_kernel(panels.centroids, panels.normals, charges.positions) / eps_in


@guard_memory(lambda panels: _dense_mb(len(panels), len(panels)))
def dense_Kprime(panels: PanelSet) -> np.ndarray:
    """(n_panels, n_panels) adjoint double layer, zero diagonal."""
    kernel = _normal_kernel(panels.centroids, panels.normals, panels.centroids)
    np.fill_diagonal(kernel, 0.0)
    return kernel * panels.areas[None, :]


def dense_A(panels: PanelSet, dielectric: Optional[DielectricModel] = None) -> np.ndarray:
    dielectric = dielectric or DielectricModel()
    return np.eye(len(panels)) - dielectric.f * dense_Kprime(panels)


@guard_memory(lambda panels, charges: _dense_mb(len(charges), len(panels)))
def dense_C(panels: PanelSet, charges: ChargeSet) -> np.ndarray:
    """(n_charges, n_panels) matrix with ``phi_reac = dense_C @ sigma``."""
    d = np.linalg.norm(charges.positions[:, None] - panels.centroids[None], axis=-1)
    if np.any(d == 0.0):
        raise GeometryError("a charge coincides with a panel centroid")
    return KERNEL_SCALE * panels.areas[None, :] / d


# ---------------------------------------------------------------------------
# Mesh convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    subdivisions: int
    n_panels: int
    method: str
    dG_internal: float
    reference: float
    relative_error: float
    iterations: int
    seconds: float


def mesh_convergence_study(
    radius: float = 1.0,
    offset: float = 0.0,
    subdivisions: Sequence[int] = (3, 4, 5),
    methods: Sequence[str] = ("bem", "cfa"),
    options: Optional[SolveOptions] = None,
    charge: float = 1.0,
    dielectric: Optional[DielectricModel] = None,
    progress: bool = False,
) -> List[ConvergenceRow]:
    """Solvation energy of a charged sphere over increasingly fine icospheres."""
    dielectric = dielectric or DielectricModel()
    reference = kirkwood_oracle(radius, offset, charge, dielectric)
    charges = ChargeSet([[0.0, 0.0, offset]], [charge], [0.0])
    rows = []
    jobs = [(level, method) for level in subdivisions for method in methods]
    for level, method in tqdm(jobs, desc="mesh convergence", disable=not progress):
        system = MolecularSystem.from_mesh(icosphere(radius, level), charges, dielectric)
        start = time.perf_counter()
        result = solve(system, method, options)
        rows.append(
            ConvergenceRow(
                subdivisions=level,
                n_panels=system.n_panels,
                method=result.method,
                dG_internal=result.dG_internal,
                reference=reference,
                relative_error=abs(result.dG_internal - reference) / abs(reference),
                iterations=result.iterations,
                seconds=time.perf_counter() - start,
            )
        )
        logger.info(
            f"📊 subdiv {level} {result.method}: dG {result.dG_internal:.8g} "
            f"(reference {reference:.8g}, error {rows[-1].relative_error:.2e})"
        )
    return rows
