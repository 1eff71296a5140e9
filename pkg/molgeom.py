#!/usr/bin/env python3
"""
Molecular geometry for the boundary-element solver.

Reads MSMS surface meshes and PQR charge files, builds icosphere test
surfaces, derives the per-panel centroid/normal/area data the solver
consumes, and replicates molecules onto randomly oriented grids.

Lengths are kept in the units of the input files (Å for MSMS/PQR) and
charges in elementary charges.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from error_handling import (
    ConfigurationError,
    ErrorContext,
    FilesystemError,
    GeometryError,
    InputFormatError,
    validate_inputs,
    validate_subdivisions,
)

logger = logging.getLogger("bibeefmm.molgeom")

PathLike = Union[str, "os.PathLike[str]"]

MSMS_HEADER_LINES = 3
DEGENERATE_AREA_FACTOR = 1e-14
GOLDEN_RATIO = (1.0 + 5.0 ** 0.5) / 2.0

_ICOSAHEDRON_VERTICES = np.array(
    [
        [-1.0, GOLDEN_RATIO, 0.0],
        [1.0, GOLDEN_RATIO, 0.0],
        [-1.0, -GOLDEN_RATIO, 0.0],
        [1.0, -GOLDEN_RATIO, 0.0],
        [0.0, -1.0, GOLDEN_RATIO],
        [0.0, 1.0, GOLDEN_RATIO],
        [0.0, -1.0, -GOLDEN_RATIO],
        [0.0, 1.0, -GOLDEN_RATIO],
        [GOLDEN_RATIO, 0.0, -1.0],
        [GOLDEN_RATIO, 0.0, 1.0],
        [-GOLDEN_RATIO, 0.0, -1.0],
        [-GOLDEN_RATIO, 0.0, 1.0],
    ]
)

_ICOSAHEDRON_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


@dataclass
class SurfaceMesh:
    """Triangulated dielectric boundary; triangle indices are 0-based."""

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.vertex_normals is not None:
            self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
            if len(self.vertex_normals) != len(self.vertices):
                raise GeometryError("vertex normal count does not match vertex count")
        if not np.all(np.isfinite(self.vertices)):
            raise GeometryError("mesh vertices contain non-finite coordinates")
        if self.triangles.size:
            bad = np.flatnonzero(
                (self.triangles < 0).any(axis=1) | (self.triangles >= len(self.vertices)).any(axis=1)
            )
            if bad.size:
                raise GeometryError(
                    f"triangle {bad[0]} references a vertex outside 0..{len(self.vertices) - 1}"
                )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounding_box_scale(self) -> float:
        """Largest bounding-box extent; 1.0 for a point-like mesh."""
        if not self.n_vertices:
            return 1.0
        extent = float(np.max(self.vertices.max(axis=0) - self.vertices.min(axis=0)))
        return extent if extent > 0 else 1.0

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        tri = self.triangles
        pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def flipped(self) -> "SurfaceMesh":
        """Same surface with reversed winding (normals point the other way)."""
        normals = None if self.vertex_normals is None else -self.vertex_normals
        return SurfaceMesh(self.vertices.copy(), self.triangles[:, ::-1].copy(), normals)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "SurfaceMesh":
        """Rigidly moved copy: x -> R x + t."""
        rotation = np.asarray(rotation, dtype=np.float64)
        vertices = self.vertices @ rotation.T + np.asarray(translation, dtype=np.float64)
        normals = None if self.vertex_normals is None else self.vertex_normals @ rotation.T
        return SurfaceMesh(vertices, self.triangles.copy(), normals)


@dataclass
class PanelSet:
    """One collocation point per flat triangle."""

    centroids: np.ndarray
    normals: np.ndarray
    areas: np.ndarray

    def __len__(self) -> int:
        return len(self.areas)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())


@dataclass
class ChargeSet:
    """Point charges at atom centres; radii are carried as metadata."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    charges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.charges = np.asarray(self.charges, dtype=np.float64).reshape(-1)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if not (len(self.positions) == len(self.charges) == len(self.radii)):
            raise GeometryError(
                f"charge set arrays disagree: {len(self.positions)} positions, "
                f"{len(self.charges)} charges, {len(self.radii)} radii"
            )
        if not (
            np.all(np.isfinite(self.positions))
            and np.all(np.isfinite(self.charges))
            and np.all(np.isfinite(self.radii))
        ):
            raise GeometryError("charge set contains non-finite values")

    def __len__(self) -> int:
        return len(self.charges)

    @property
    def n_charges(self) -> int:
        return len(self.charges)

    @property
    def net_charge(self) -> float:
        return float(self.charges.sum())

    def scaled(self, factor: float) -> "ChargeSet":
        return ChargeSet(self.positions.copy(), self.charges * factor, self.radii.copy())

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "ChargeSet":
        rotation = np.asarray(rotation, dtype=np.float64)
        positions = self.positions @ rotation.T + np.asarray(translation, dtype=np.float64)
        return ChargeSet(positions, self.charges.copy(), self.radii.copy())


@dataclass(frozen=True)
class DielectricModel:
    """Relative permittivities of the solute interior (I) and the solvent (II)."""

    eps_in: float = 4.0
    eps_out: float = 80.0

    def __post_init__(self):
        if not (self.eps_in > 0 and self.eps_out > 0):
            raise ConfigurationError(
                f"permittivities must be positive (eps_in={self.eps_in}, eps_out={self.eps_out})",
                ErrorContext(operation="dielectric"),
            )
        if self.eps_in == self.eps_out:
            raise ConfigurationError(
                "eps_in equals eps_out; there is no dielectric boundary to polarize",
                ErrorContext(operation="dielectric"),
            )

    @property
    def f(self) -> float:
        """2(ε_II − ε_I)/(ε_I + ε_II), the jump factor of the surface-charge equation."""
        return 2.0 * (self.eps_out - self.eps_in) / (self.eps_in + self.eps_out)

    @property
    def eps_hat(self) -> float:
        """1 − ε_I/ε_II."""
        return 1.0 - self.eps_in / self.eps_out


@dataclass
class MolecularSystem:
    mesh: SurfaceMesh
    panels: PanelSet
    charges: ChargeSet
    dielectric: DielectricModel = field(default_factory=DielectricModel)

    @classmethod
    def from_mesh(
        cls,
        mesh: SurfaceMesh,
        charges: ChargeSet,
        dielectric: Optional[DielectricModel] = None,
    ) -> "MolecularSystem":
        return cls(mesh, derive_panels(mesh), charges, dielectric or DielectricModel())

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    @property
    def n_charges(self) -> int:
        return self.charges.n_charges


# ---------------------------------------------------------------------------
# Readers and writers
# ---------------------------------------------------------------------------

def _read_lines(path: PathLike) -> list:
    if not os.path.isfile(path):
        raise FilesystemError(
            f"input file not found: {path}",
            ErrorContext(operation="read", metadata={"path": str(path)}),
        )
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise FilesystemError(f"cannot read {path}: {exc}", cause=exc) from exc


def _parse_msms_rows(path: PathLike, n_columns: int, kind: str, parse) -> Tuple[list, list]:
    """Parsed data rows and the 1-based file line each came from."""
    lines = _read_lines(path)
    if len(lines) < MSMS_HEADER_LINES:
        raise InputFormatError(
            f"MSMS {kind} file needs {MSMS_HEADER_LINES} header lines, found {len(lines)}",
            path=str(path),
            line_number=len(lines),
        )
    declared = None
    counts = lines[MSMS_HEADER_LINES - 1].split()
    if counts:
        try:
            declared = int(counts[0])
        except ValueError as exc:
            raise InputFormatError(
                f"malformed header: expected a {kind} count, got {counts[0]!r}",
                path=str(path),
                line_number=MSMS_HEADER_LINES,
                cause=exc,
            ) from exc

    rows, line_numbers = [], []
    for line_number, line in enumerate(lines[MSMS_HEADER_LINES:], start=MSMS_HEADER_LINES + 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < n_columns:
            raise InputFormatError(
                f"{kind} record needs at least {n_columns} columns, found {len(fields)}",
                path=str(path),
                line_number=line_number,
            )
        try:
            rows.append(parse(fields))
            line_numbers.append(line_number)
        except ValueError as exc:
            raise InputFormatError(
                f"non-numeric field in {kind} record: {line.strip()!r}",
                path=str(path),
                line_number=line_number,
                cause=exc,
            ) from exc

    if declared is not None and declared != len(rows):
        logger.warning(
            f"⚠️  {path}: header declares {declared} {kind}s but {len(rows)} rows were read"
        )
    return rows, line_numbers


def load_msms(vert_path: PathLike, face_path: PathLike) -> SurfaceMesh:
    """Read an MSMS ``.vert``/``.face`` pair; face indices are converted to 0-based."""
    vert_rows, _ = _parse_msms_rows(
        vert_path, 3, "vertex", lambda f: [float(v) for v in f[:6]]
    )
    face_rows, face_lines = _parse_msms_rows(
        face_path, 3, "face", lambda f: [int(v) for v in f[:3]]
    )

    positions = np.array([row[:3] for row in vert_rows], dtype=np.float64).reshape(-1, 3)
    normals = None
    if vert_rows and all(len(row) >= 6 for row in vert_rows):
        normals = np.array([row[3:6] for row in vert_rows], dtype=np.float64)

    triangles = np.array(face_rows, dtype=np.int64).reshape(-1, 3) - 1
    n_vertices = len(positions)
    for row_index, tri in enumerate(triangles):
        if tri.min() < 0 or tri.max() >= n_vertices:
            raise InputFormatError(
                f"face index out of range 1..{n_vertices}: {(tri + 1).tolist()}",
                path=str(face_path),
                line_number=face_lines[row_index],
            )

    logger.info(f"🔍 Loaded MSMS mesh: {n_vertices} vertices, {len(triangles)} faces")
    return SurfaceMesh(positions, triangles, normals)


def load_pqr(path: PathLike) -> ChargeSet:
    """Whitespace-tolerant PQR reader: charge and radius are the last two fields."""
    positions, charges, radii = [], [], []
    for line_number, line in enumerate(_read_lines(path), start=1):
        fields = line.split()
        if not fields or fields[0] not in ("ATOM", "HETATM"):
            continue
        if len(fields) < 9:
            raise InputFormatError(
                f"{fields[0]} record needs at least 9 fields, found {len(fields)}",
                path=str(path),
                line_number=line_number,
            )
        try:
            x, y, z, q, r = (float(v) for v in fields[-5:])
        except ValueError as exc:
            raise InputFormatError(
                f"non-numeric coordinate/charge/radius in {line.strip()!r}",
                path=str(path),
                line_number=line_number,
                cause=exc,
            ) from exc
        positions.append((x, y, z))
        charges.append(q)
        radii.append(r)

    logger.info(f"🔍 Loaded {len(charges)} charges from {path}")
    return ChargeSet(
        np.array(positions, dtype=np.float64).reshape(-1, 3),
        np.array(charges, dtype=np.float64),
        np.array(radii, dtype=np.float64),
    )


def write_msms(mesh: SurfaceMesh, prefix: PathLike) -> Tuple[str, str]:
    """Write ``prefix.vert`` and ``prefix.face`` in MSMS layout."""
    vert_path, face_path = f"{prefix}.vert", f"{prefix}.face"
    normals = mesh.vertex_normals
    if normals is None:
        normals = vertex_normals_from_faces(mesh)
    try:
        with open(vert_path, "w", encoding="utf-8") as fh:
            fh.write("# MSMS solvent excluded surface vertices\n")
            fh.write("#vertex #sphere density probe_r\n")
            fh.write(f"{mesh.n_vertices} 0 0.00 0.00\n")
            for p, n in zip(mesh.vertices, normals):
                fh.write(
                    f"{p[0]:.9f} {p[1]:.9f} {p[2]:.9f} {n[0]:.9f} {n[1]:.9f} {n[2]:.9f} 0 0 2\n"
                )
        with open(face_path, "w", encoding="utf-8") as fh:
            fh.write("# MSMS solvent excluded surface faces\n")
            fh.write("#faces #sphere density probe_r\n")
            fh.write(f"{mesh.n_triangles} 0 0.00 0.00\n")
            for tri in mesh.triangles:
                fh.write(f"{tri[0] + 1} {tri[1] + 1} {tri[2] + 1} 1 1\n")
    except OSError as exc:
        raise FilesystemError(f"cannot write mesh to {prefix}: {exc}", cause=exc) from exc
    return vert_path, face_path


def write_pqr(charges: ChargeSet, path: PathLike) -> str:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (p, q, r) in enumerate(zip(charges.positions, charges.charges, charges.radii)):
                fh.write(
                    f"ATOM  {i + 1:5d}  X   ION     1    "
                    f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {q:.6f} {r:.4f}\n"
                )
            fh.write("END\n")
    except OSError as exc:
        raise FilesystemError(f"cannot write charges to {path}: {exc}", cause=exc) from exc
    return str(path)


def load_system(
    vert_path: PathLike,
    face_path: PathLike,
    pqr_path: PathLike,
    dielectric: Optional[DielectricModel] = None,
    flip_orientation: bool = False,
) -> MolecularSystem:
    mesh = load_msms(vert_path, face_path)
    if flip_orientation:
        mesh = mesh.flipped()
    check_orientation(mesh)
    return MolecularSystem.from_mesh(mesh, load_pqr(pqr_path), dielectric)


# ---------------------------------------------------------------------------
# Panel geometry
# ---------------------------------------------------------------------------

def derive_panels(mesh: SurfaceMesh) -> PanelSet:
    """Centroid, unit normal (from winding) and area of every triangle."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    twice_area = np.linalg.norm(cross, axis=1)
    areas = 0.5 * twice_area

    threshold = DEGENERATE_AREA_FACTOR * mesh.bounding_box_scale() ** 2
    degenerate = np.flatnonzero(areas <= threshold)
    if degenerate.size:
        index = int(degenerate[0])
        raise GeometryError(
            f"degenerate triangle {index} (vertices {mesh.triangles[index].tolist()}, "
            f"area {areas[index]:.3e} below {threshold:.3e})",
            ErrorContext(operation="derive_panels", metadata={"triangle": index}),
        )

    centroids = (a + b + c) / 3.0
    normals = cross / twice_area[:, None]
    return PanelSet(centroids, normals, areas)


def vertex_normals_from_faces(mesh: SurfaceMesh) -> np.ndarray:
    """Area-weighted vertex normals."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    normals = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(normals, mesh.triangles[:, k], cross)
    length = np.linalg.norm(normals, axis=1)
    length[length == 0] = 1.0
    return normals / length[:, None]


def signed_volume(mesh: SurfaceMesh) -> float:
    """Enclosed volume by the divergence theorem; negative for inward winding."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def check_orientation(mesh: SurfaceMesh) -> bool:
    """True when the winding is outward; logs a warning otherwise."""
    volume = signed_volume(mesh)
    if volume < 0:
        logger.warning(
            f"[WARNING][molgeom][orientation] mesh has negative signed volume {volume:.6g} "
            "| cause: inward triangle winding | fix: rerun with --flip-orientation"
        )
        return False
    return True


def bounding_sphere(mesh: SurfaceMesh) -> Tuple[np.ndarray, float]:
    """Sphere about the bounding-box centre that contains every vertex."""
    center = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    radius = float(np.linalg.norm(mesh.vertices - center, axis=1).max())
    return center, radius


def winding_number(mesh: SurfaceMesh, points: np.ndarray) -> np.ndarray:
    """Generalized winding number of each point (≈1 inside, ≈0 outside)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.vertices[mesh.triangles]
    result = np.empty(len(points))
    chunk = max(1, 200_000 // max(mesh.n_triangles, 1))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk, None, None, :]
        r = tri[None, :, :, :] - p
        length = np.linalg.norm(r, axis=3)
        r1, r2, r3 = r[:, :, 0], r[:, :, 1], r[:, :, 2]
        l1, l2, l3 = length[:, :, 0], length[:, :, 1], length[:, :, 2]
        numerator = np.einsum("ijk,ijk->ij", r1, np.cross(r2, r3))
        denominator = (
            l1 * l2 * l3
            + np.einsum("ijk,ijk->ij", r1, r2) * l3
            + np.einsum("ijk,ijk->ij", r2, r3) * l1
            + np.einsum("ijk,ijk->ij", r3, r1) * l2
        )
        solid_angle = 2.0 * np.arctan2(numerator, denominator)
        result[lo:lo + chunk] = solid_angle.sum(axis=1) / (4.0 * np.pi)
    return result


def charges_outside(system: MolecularSystem) -> np.ndarray:
    """Indices of charges the surface does not enclose."""
    if not system.n_charges:
        return np.zeros(0, dtype=np.int64)
    winding = winding_number(system.mesh, system.charges.positions)
    return np.flatnonzero(winding < 0.5)


# ---------------------------------------------------------------------------
# Synthetic geometry
# ---------------------------------------------------------------------------

@validate_inputs(subdivisions=validate_subdivisions)
def icosphere(radius: float = 1.0, subdivisions: int = 3,
              center: Tuple[float, float, float] = (0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Subdivided icosahedron projected onto a sphere, wound outward."""
    vertices = _ICOSAHEDRON_VERTICES / np.linalg.norm(_ICOSAHEDRON_VERTICES, axis=1)[:, None]
    faces = _ICOSAHEDRON_FACES.copy()

    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    inward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[inward] = faces[inward][:, ::-1]

    for _ in range(subdivisions):
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        unique, inverse = np.unique(np.sort(edges, axis=1), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        midpoints = 0.5 * (vertices[unique[:, 0]] + vertices[unique[:, 1]])
        midpoints /= np.linalg.norm(midpoints, axis=1)[:, None]
        mid_index = len(vertices) + inverse.reshape(3, -1)
        ab, bc, ca = mid_index[0], mid_index[1], mid_index[2]
        i, j, k = faces[:, 0], faces[:, 1], faces[:, 2]
        faces = np.concatenate(
            [
                np.stack([i, ab, ca], axis=1),
                np.stack([j, bc, ab], axis=1),
                np.stack([k, ca, bc], axis=1),
                np.stack([ab, bc, ca], axis=1),
            ]
        )
        vertices = np.concatenate([vertices, midpoints])

    normals = vertices.copy()
    return SurfaceMesh(vertices * radius + np.asarray(center, dtype=np.float64), faces, normals)


def replicate_grid(
    system: MolecularSystem,
    nx: int,
    ny: int,
    nz: int,
    spacing: float,
    seed: int = 0,
    progress: bool = False,
) -> MolecularSystem:
    """Copies of ``system`` on a Cartesian grid, each under an independent random rotation.

    Rotations come from ``scipy.spatial.transform.Rotation.random`` seeded with ``seed``
    (normalized Gaussian quaternions), so the output is reproducible across platforms.
    Copy ``(i, j, k)`` is centred at ``spacing * (i, j, k)``; copies are emitted with ``k``
    varying fastest.
    """
    if min(nx, ny, nz) < 1:
        raise GeometryError(f"grid counts must be positive, got {(nx, ny, nz)}")
    center, radius = bounding_sphere(system.mesh)
    min_spacing = 2.0 * radius
    if not spacing > min_spacing:
        raise GeometryError(
            f"spacing {spacing} lets copies intersect; minimum safe spacing is {min_spacing:.6g}",
            ErrorContext(operation="replicate_grid", metadata={"min_spacing": min_spacing}),
        )

    n_copies = nx * ny * nz
    rotations = Rotation.random(n_copies, seed).as_matrix()
    grid = np.indices((nx, ny, nz)).reshape(3, -1).T.astype(np.float64) * spacing

    base_vertices = system.mesh.vertices - center
    base_charges = system.charges.positions - center
    n_vertices = system.mesh.n_vertices
    vertices, triangles, positions = [], [], []
    for copy_index in tqdm(range(n_copies), desc="replicating", disable=not progress):
        rotation = rotations[copy_index]
        vertices.append(base_vertices @ rotation.T + grid[copy_index])
        triangles.append(system.mesh.triangles + copy_index * n_vertices)
        positions.append(base_charges @ rotation.T + grid[copy_index])

    normals = None
    if system.mesh.vertex_normals is not None:
        normals = np.concatenate(
            [system.mesh.vertex_normals @ rotations[k].T for k in range(n_copies)]
        )
    mesh = SurfaceMesh(np.concatenate(vertices), np.concatenate(triangles), normals)
    charges = ChargeSet(
        np.concatenate(positions) if positions else np.zeros((0, 3)),
        np.tile(system.charges.charges, n_copies),
        np.tile(system.charges.radii, n_copies),
    )
    logger.info(
        f"📊 Replicated {n_copies} copies: {mesh.n_triangles} panels, {charges.n_charges} charges"
    )
    return MolecularSystem.from_mesh(mesh, charges, system.dielectric)


def merge_systems(systems, dielectric: Optional[DielectricModel] = None) -> MolecularSystem:
    """One system holding every mesh and charge of ``systems`` (a rigid complex)."""
    systems = list(systems)
    if not systems:
        raise GeometryError("merge_systems needs at least one system")
    dielectric = dielectric or systems[0].dielectric
    offsets = np.cumsum([0] + [s.mesh.n_vertices for s in systems[:-1]])
    with_normals = all(s.mesh.vertex_normals is not None for s in systems)
    mesh = SurfaceMesh(
        np.concatenate([s.mesh.vertices for s in systems]),
        np.concatenate([s.mesh.triangles + off for s, off in zip(systems, offsets)]),
        np.concatenate([s.mesh.vertex_normals for s in systems]) if with_normals else None,
    )
    charges = ChargeSet(
        np.concatenate([s.charges.positions for s in systems]),
        np.concatenate([s.charges.charges for s in systems]),
        np.concatenate([s.charges.radii for s in systems]),
    )
    return MolecularSystem.from_mesh(mesh, charges, dielectric)
