"""Admissible finite-volume meshes with two-point flux transmissibilities."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import config

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Raised when a mesh violates the admissibility conditions."""


class MeshFormatError(MeshError):
    """Raised for malformed mesh files."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Immutable cell/face mesh.

    Interior faces carry ids 0..n_interior-1 and boundary faces follow them.
    Every interior face stores its cell pair (K, L), the unit normal pointing
    from K to L, the distance d_KL between cell centers measured along that
    normal, and the transmissibility |sigma| / d_KL. Boundary faces are kept
    for bookkeeping only: the no-flux condition gives them no flux.
    """
    dim: int
    cell_measures: np.ndarray
    cell_centers: np.ndarray
    cell_centroids: np.ndarray
    face_cells: np.ndarray
    face_measures: np.ndarray
    face_distances: np.ndarray
    face_normals: np.ndarray
    transmissibilities: np.ndarray
    boundary_cells: np.ndarray
    boundary_measures: np.ndarray
    nodes: np.ndarray
    cell_nodes: np.ndarray
    cell_kind: str
    domain_measure: float
    flagged_cells: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ('cell_measures', 'cell_centers', 'cell_centroids', 'face_cells', 'face_measures',
                     'face_distances', 'face_normals', 'transmissibilities', 'boundary_cells',
                     'boundary_measures', 'nodes', 'cell_nodes'):
            getattr(self, name).flags.writeable = False

    @property
    def n_cells(self) -> int:
        return len(self.cell_measures)

    @property
    def n_interior_faces(self) -> int:
        return len(self.face_measures)

    @property
    def n_boundary_faces(self) -> int:
        return len(self.boundary_measures)

    @property
    def n_faces(self) -> int:
        return self.n_interior_faces + self.n_boundary_faces

    def is_interior(self, face: int) -> bool:
        if not 0 <= face < self.n_faces:
            raise MeshError(f"face id {face} out of range [0, {self.n_faces})")
        return face < self.n_interior_faces

    def transmissibility(self, face: int) -> float:
        """Return |sigma| / d_KL of an interior face."""
        if not self.is_interior(face):
            raise MeshError(f"face {face} is a boundary face: no-flux boundaries carry no transmissibility")
        return float(self.transmissibilities[face])

    def cell_faces(self, cell: int) -> List[int]:
        """Ids of all faces (interior and boundary) bounding a cell."""
        interior = np.nonzero((self.face_cells[:, 0] == cell) | (self.face_cells[:, 1] == cell))[0]
        boundary = np.nonzero(self.boundary_cells == cell)[0] + self.n_interior_faces
        return [int(f) for f in interior] + [int(f) for f in boundary]

    def neighbours(self, face: int) -> Tuple[int, Optional[int]]:
        """Adjacent cells of a face; the second entry is None on the boundary."""
        if self.is_interior(face):
            k, l = self.face_cells[face]
            return int(k), int(l)
        return int(self.boundary_cells[face - self.n_interior_faces]), None


def transmissibility(mesh: Mesh, face: int) -> float:
    """Transmissibility of an interior face; boundary faces raise MeshError."""
    return mesh.transmissibility(face)


class MeshBuilder:
    """Builds and validates admissible meshes."""

    @staticmethod
    def build_cartesian(nx: int, ny: Optional[int] = None, Lx: float = 1.0, Ly: Optional[float] = None) -> Mesh:
        """
        Build a uniform Cartesian mesh.

        Args:
            nx: Number of cells along x
            ny: Number of cells along y, or None for a 1D mesh
            Lx: Domain length along x
            Ly: Domain length along y (defaults to Lx in 2D)

        Returns:
            Validated Mesh
        """
        if int(nx) != nx or nx < 1:
            raise MeshError(f"nx must be a positive integer, got {nx}")
        if not Lx > 0:
            raise MeshError(f"Lx must be positive, got {Lx}")
        nx = int(nx)

        if ny is None:
            mesh = MeshBuilder._cartesian_1d(nx, float(Lx))
        else:
            if int(ny) != ny or ny < 1:
                raise MeshError(f"ny must be a positive integer, got {ny}")
            Ly = Lx if Ly is None else Ly
            if not Ly > 0:
                raise MeshError(f"Ly must be positive, got {Ly}")
            mesh = MeshBuilder._cartesian_2d(nx, int(ny), float(Lx), float(Ly))

        MeshBuilder.validate(mesh, config.CARTESIAN_ANGLE_TOL)
        return mesh

    @staticmethod
    def _cartesian_1d(nx: int, Lx: float) -> Mesh:
        h = Lx / nx
        centers = (h * (np.arange(nx) + 0.5)).reshape(-1, 1)
        left = np.arange(nx - 1)
        return Mesh(
            dim=1,
            cell_measures=np.full(nx, h),
            cell_centers=centers,
            cell_centroids=centers.copy(),
            face_cells=np.column_stack([left, left + 1]).astype(int).reshape(-1, 2),
            face_measures=np.ones(nx - 1),
            face_distances=np.full(nx - 1, h),
            face_normals=np.ones((nx - 1, 1)),
            transmissibilities=np.full(nx - 1, 1.0 / h),
            boundary_cells=np.array([0, nx - 1], dtype=int),
            boundary_measures=np.ones(2),
            nodes=(h * np.arange(nx + 1)).reshape(-1, 1),
            cell_nodes=np.column_stack([np.arange(nx), np.arange(nx) + 1]).astype(int),
            cell_kind='line',
            domain_measure=Lx,
        )

    @staticmethod
    def _cartesian_2d(nx: int, ny: int, Lx: float, Ly: float) -> Mesh:
        hx, hy = Lx / nx, Ly / ny
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
        ii, jj = ii.ravel(), jj.ravel()
        cells = ii + nx * jj
        centers = np.column_stack([hx * (ii + 0.5), hy * (jj + 0.5)])

        vertical = cells[ii < nx - 1]
        horizontal = cells[jj < ny - 1]
        face_cells = np.concatenate([
            np.column_stack([vertical, vertical + 1]),
            np.column_stack([horizontal, horizontal + nx]),
        ]).astype(int).reshape(-1, 2)
        face_measures = np.concatenate([np.full(len(vertical), hy), np.full(len(horizontal), hx)])
        face_distances = np.concatenate([np.full(len(vertical), hx), np.full(len(horizontal), hy)])
        face_normals = np.concatenate([
            np.tile([1.0, 0.0], (len(vertical), 1)),
            np.tile([0.0, 1.0], (len(horizontal), 1)),
        ]).reshape(-1, 2)

        bottom = np.arange(nx)
        top = nx * (ny - 1) + np.arange(nx)
        left = nx * np.arange(ny)
        right = nx * np.arange(ny) + nx - 1
        boundary_cells = np.concatenate([bottom, top, left, right]).astype(int)
        boundary_measures = np.concatenate([np.full(2 * nx, hx), np.full(2 * ny, hy)])

        px, py = np.meshgrid(hx * np.arange(nx + 1), hy * np.arange(ny + 1))
        nodes = np.column_stack([px.ravel(), py.ravel()])
        p = ii + (nx + 1) * jj
        cell_nodes = np.column_stack([p, p + 1, p + nx + 2, p + nx + 1]).astype(int)

        return Mesh(
            dim=2,
            cell_measures=np.full(nx * ny, hx * hy),
            cell_centers=centers,
            cell_centroids=centers.copy(),
            face_cells=face_cells,
            face_measures=face_measures,
            face_distances=face_distances,
            face_normals=face_normals,
            transmissibilities=face_measures / face_distances,
            boundary_cells=boundary_cells,
            boundary_measures=boundary_measures,
            nodes=nodes,
            cell_nodes=cell_nodes,
            cell_kind='quad',
            domain_measure=Lx * Ly,
        )

    @staticmethod
    def read_triangulation(path: str) -> Tuple[np.ndarray, np.ndarray]:
        """
        Parse a triangulation file.

        Format: header `dim npoints ntriangles`, then `x y` per point, then three
        0-based point indices per triangle. Blank lines and `#` comments are ignored.
        """
        with open(path) as f:
            lines = [ln.split('#', 1)[0].strip() for ln in f]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise MeshFormatError(f"{path}: empty mesh file")

        try:
            dim, n_points, n_tris = (int(tok) for tok in lines[0].split())
        except ValueError:
            raise MeshFormatError(f"{path}: header must be 'dim npoints ntriangles', got {lines[0]!r}")
        if dim != 2:
            raise MeshFormatError(f"{path}: only dim=2 triangulations are supported, got dim={dim}")
        if n_points < 3 or n_tris < 1:
            raise MeshFormatError(f"{path}: need at least 3 points and 1 triangle")
        if len(lines) != 1 + n_points + n_tris:
            raise MeshFormatError(
                f"{path}: expected {n_points} point lines and {n_tris} triangle lines, "
                f"found {len(lines) - 1} data lines")

        try:
            points = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + n_points]])
            tris = np.array([[int(t) for t in ln.split()] for ln in lines[1 + n_points:]])
        except ValueError as e:
            raise MeshFormatError(f"{path}: unreadable record ({e})")
        if points.shape != (n_points, 2):
            raise MeshFormatError(f"{path}: point lines must hold exactly two coordinates")
        if tris.shape != (n_tris, 3):
            raise MeshFormatError(f"{path}: triangle lines must hold exactly three indices")
        if tris.min() < 0 or tris.max() >= n_points:
            raise MeshFormatError(f"{path}: triangle index out of range [0, {n_points})")
        if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
            raise MeshFormatError(f"{path}: triangle with repeated vertex")
        return points, tris

    @staticmethod
    def import_delaunay(path: str) -> Mesh:
        """
        Import a Delaunay triangulation with circumcenters as cell centers.

        Args:
            path: Mesh file in the documented text format

        Returns:
            Validated Mesh
        """
        points, tris = MeshBuilder.read_triangulation(path)
        return MeshBuilder.from_triangles(points, tris)

    @staticmethod
    def from_triangles(points: np.ndarray, tris: np.ndarray) -> Mesh:
        """Build a TPFA mesh from point coordinates and triangle connectivity."""
        points = np.asarray(points, dtype=float)
        tris = np.array(tris, dtype=int)
        scale = float(np.ptp(points, axis=0).max())

        p0, p1, p2 = points[tris[:, 0]], points[tris[:, 1]], points[tris[:, 2]]
        e1, e2 = p1 - p0, p2 - p0
        signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        degenerate = np.nonzero(np.abs(signed) <= 1e-14 * scale ** 2)[0]
        if len(degenerate):
            raise MeshError(f"degenerate (zero-area) triangle {int(degenerate[0])}")
        clockwise = signed < 0
        tris[clockwise] = tris[clockwise][:, [0, 2, 1]]
        areas = np.abs(signed)

        centers = MeshBuilder.circumcenters(points, tris)
        centroids = points[tris].mean(axis=1)
        flagged = MeshBuilder._outside_circumcenters(points, tris, centers)
        if flagged:
            logger.warning(f"{len(flagged)} triangle(s) have their circumcenter outside the cell: {flagged[:10]}")

        edges: Dict[Tuple[int, int], List[Tuple[int, int, int]]] = {}
        for t, (a, b, c) in enumerate(tris):
            for p, q in ((a, b), (b, c), (c, a)):
                edges.setdefault((min(p, q), max(p, q)), []).append((t, p, q))

        face_cells, face_measures, face_distances, face_normals = [], [], [], []
        boundary_cells, boundary_measures = [], []
        boundary_area = 0.0
        for key in sorted(edges):
            owners = edges[key]
            if len(owners) > 2:
                raise MeshFormatError(f"edge {key} is shared by {len(owners)} triangles")
            k, p, q = owners[0]
            d = points[q] - points[p]
            length = float(np.hypot(d[0], d[1]))
            if len(owners) == 1:
                boundary_cells.append(k)
                boundary_measures.append(length)
                boundary_area += 0.5 * (points[p, 0] * points[q, 1] - points[q, 0] * points[p, 1])
                continue
            l = owners[1][0]
            normal = np.array([d[1], -d[0]]) / length  # outward for the counter-clockwise cell k
            d_kl = float(np.dot(centers[l] - centers[k], normal))
            face = len(face_cells)
            if abs(d_kl) <= 1e-12 * length:
                raise MeshError(
                    f"face {face} (nodes {key}) between cells {k} and {l}: cocircular neighbours, "
                    f"circumcenters coincide (d_KL = 0)")
            if d_kl < 0:
                raise MeshError(
                    f"face {face} (nodes {key}) between cells {k} and {l} violates the Delaunay "
                    f"condition (d_KL = {d_kl:.3e})")
            face_cells.append((k, l))
            face_measures.append(length)
            face_distances.append(d_kl)
            face_normals.append(normal)

        face_measures = np.array(face_measures, dtype=float)
        face_distances = np.array(face_distances, dtype=float)
        mesh = Mesh(
            dim=2,
            cell_measures=areas,
            cell_centers=centers,
            cell_centroids=centroids,
            face_cells=np.array(face_cells, dtype=int).reshape(-1, 2),
            face_measures=face_measures,
            face_distances=face_distances,
            face_normals=np.array(face_normals, dtype=float).reshape(-1, 2),
            transmissibilities=face_measures / face_distances if len(face_measures) else np.zeros(0),
            boundary_cells=np.array(boundary_cells, dtype=int),
            boundary_measures=np.array(boundary_measures, dtype=float),
            nodes=points,
            cell_nodes=tris,
            cell_kind='triangle',
            domain_measure=boundary_area,
            flagged_cells=tuple(flagged),
        )
        MeshBuilder.validate(mesh, config.IMPORT_ANGLE_TOL)
        return mesh

    @staticmethod
    def circumcenters(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
        """Circumcenters of triangles, computed relative to the first vertex."""
        a = points[tris[:, 0]]
        b = points[tris[:, 1]] - a
        c = points[tris[:, 2]] - a
        denom = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
        b2 = np.sum(b * b, axis=1)
        c2 = np.sum(c * c, axis=1)
        ux = (c[:, 1] * b2 - b[:, 1] * c2) / denom
        uy = (b[:, 0] * c2 - c[:, 0] * b2) / denom
        return a + np.column_stack([ux, uy])

    @staticmethod
    def _outside_circumcenters(points, tris, centers) -> List[int]:
        flagged = []
        for t, (a, b, c) in enumerate(tris):
            pa, pb, pc = points[a], points[b], points[c]
            tol = -1e-12 * np.linalg.norm(pb - pa) ** 2
            x = centers[t]
            for p, q in ((pa, pb), (pb, pc), (pc, pa)):
                if (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]) < tol:
                    flagged.append(t)
                    break
        return flagged

    @staticmethod
    def validate(mesh: Mesh, angle_tol: float) -> Mesh:
        """
        Check the admissibility invariants of a mesh.

        Args:
            mesh: Mesh to check
            angle_tol: Maximum angle (rad) between center segment and face normal

        Returns:
            The same mesh, if admissible; raises MeshError otherwise
        """
        n = mesh.n_cells
        if n < 1:
            raise MeshError("mesh has no cells")
        bad = np.nonzero(~(mesh.cell_measures > 0))[0]
        if len(bad):
            raise MeshError(f"cell {int(bad[0])} has non-positive measure {mesh.cell_measures[bad[0]]}")

        if mesh.n_interior_faces:
            k, l = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
            if k.min() < 0 or l.min() < 0 or max(k.max(), l.max()) >= n:
                raise MeshError("interior face refers to a cell outside the mesh")
            same = np.nonzero(k == l)[0]
            if len(same):
                raise MeshError(f"interior face {int(same[0])} has identical adjacent cells")
            for name, values in (('d_KL', mesh.face_distances), ('transmissibility', mesh.transmissibilities)):
                bad = np.nonzero(~(np.isfinite(values) & (values > 0)))[0]
                if len(bad):
                    raise MeshError(f"face {int(bad[0])} has non-positive {name} {values[bad[0]]}")

            if mesh.dim == 2:
                seg = mesh.cell_centers[l] - mesh.cell_centers[k]
                nrm = mesh.face_normals
                along = np.sum(seg * nrm, axis=1)
                across = np.abs(seg[:, 0] * nrm[:, 1] - seg[:, 1] * nrm[:, 0])
                angle = np.arctan2(across, along)
                bad = np.nonzero(angle > angle_tol)[0]
                if len(bad):
                    f = int(bad[0])
                    raise MeshError(
                        f"face {f} between cells {int(k[f])} and {int(l[f])} violates the orthogonality "
                        f"condition (angle {angle[f]:.3e} rad > {angle_tol:.1e})")

        total = float(np.sum(mesh.cell_measures))
        if abs(total - mesh.domain_measure) > 1e-12 * abs(mesh.domain_measure):
            raise MeshError(f"cell measures sum to {total!r}, domain measure is {mesh.domain_measure!r}")
        return mesh

    @staticmethod
    def summary(mesh: Mesh) -> dict:
        """Counts and transmissibility range for reports."""
        trans = mesh.transmissibilities
        return {
            'dim': mesh.dim,
            'cell_kind': mesh.cell_kind,
            'cells': mesh.n_cells,
            'interior_faces': mesh.n_interior_faces,
            'boundary_faces': mesh.n_boundary_faces,
            'domain_measure': mesh.domain_measure,
            'min_transmissibility': float(trans.min()) if len(trans) else None,
            'max_transmissibility': float(trans.max()) if len(trans) else None,
            'flagged_cells': list(mesh.flagged_cells),
        }
