"""Simplicial meshes in one and two dimensions with fixed connectivity.

Vertices of a periodic domain are stored twice (once on each side of the box)
and tied together through ``periodic_map``; element geometry therefore never
needs coordinate wrapping.  Faces are stored once, seen from a *left* element,
and carry the reference coordinates of their Gauss points in both adjacent
elements.  Those coordinates never change while the mesh moves, because vertex
motion is affine in time and shared by both neighbours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate or inverted elements."""


class TopologyError(ValueError):
    """Raised for broken face connectivity."""


def _face_vertices_local(dim: int) -> list[tuple[int, ...]]:
    # face j is opposite local vertex j; 2D faces keep counterclockwise order
    if dim == 1:
        return [(1,), (0,)]
    return [(1, 2), (2, 0), (0, 1)]


@dataclass(frozen=True)
class SimplicialMesh:
    """Connectivity of a simplicial mesh of an axis-aligned box.

    ``vertices`` holds the positions the mesh was built with; moving positions
    are passed around separately as ``(N_v, d)`` arrays.
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    periodic: tuple[bool, ...]
    faces: np.ndarray = field(repr=False)
    face_elements: np.ndarray = field(repr=False)
    face_local: np.ndarray = field(repr=False)
    face_shift: np.ndarray = field(repr=False)
    element_faces: np.ndarray = field(repr=False)
    element_face_side: np.ndarray = field(repr=False)
    periodic_map: np.ndarray = field(repr=False)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_unique_vertices(self) -> int:
        return len(np.unique(self.periodic_map))

    @property
    def period(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_elements[:, 1] < 0)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_elements[:, 1] >= 0)

    def boundary_vertex_mask(self, tol: float = 1e-12) -> np.ndarray:
        """``(N_v, d)`` mask: True where the vertex sits on a box facet normal to that axis."""
        scale = tol * np.max(self.period)
        return (np.abs(self.vertices - self.lower) < scale) | (
            np.abs(self.vertices - self.upper) < scale
        )


def _match_key(points: np.ndarray, lower, period, periodic, decimals=9) -> list[tuple]:
    pts = points.copy()
    for ax, per in enumerate(periodic):
        if per:
            rel = (pts[:, ax] - lower[ax]) / period[ax]
            rel = rel - np.floor(rel + 1e-12)
            pts[:, ax] = rel
        else:
            pts[:, ax] = (pts[:, ax] - lower[ax]) / period[ax]
    return [tuple(row) for row in np.round(pts, decimals)]


def build_mesh(
    vertices: np.ndarray,
    elements: np.ndarray,
    lower,
    upper,
    periodic=False,
) -> SimplicialMesh:
    """Assemble connectivity for an arbitrary simplicial mesh of a box.

    Elements are reoriented to positive measure (counterclockwise in 2D,
    left-to-right in 1D).  Periodic faces are matched geometrically, so the
    boundary vertex distribution of opposite facets must agree.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim == 1:
        vertices = vertices[:, None]
    dim = vertices.shape[1]
    if dim not in (1, 2):
        raise ValueError(f"only 1D and 2D meshes are supported, got dim={dim}")
    elements = np.array(elements, dtype=np.int64, copy=True)
    if elements.shape[1] != dim + 1:
        raise ValueError("elements must have d+1 vertices")
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,)).copy()
    if np.any(upper <= lower):
        raise ValueError("degenerate box")
    if isinstance(periodic, bool):
        periodic = (periodic,) * dim
    periodic = tuple(bool(p) for p in periodic)
    period = upper - lower

    edges = vertices[elements[:, 1:]] - vertices[elements[:, :1]]
    det = np.linalg.det(np.transpose(edges, (0, 2, 1))) if dim == 2 else edges[:, 0, 0]
    if np.any(det == 0.0):
        raise GeometryError("degenerate element in input mesh")
    flip = det < 0
    if dim == 1:
        elements[flip] = elements[flip][:, ::-1]
    else:
        elements[flip] = elements[flip][:, [0, 2, 1]]

    # periodic vertex identification
    vkeys = _match_key(vertices, lower, period, periodic)
    canon: dict[tuple, int] = {}
    periodic_map = np.empty(len(vertices), dtype=np.int64)
    for i, key in enumerate(vkeys):
        periodic_map[i] = canon.setdefault(key, i)

    local = _face_vertices_local(dim)
    n_el = len(elements)
    face_nodes = np.stack([elements[:, list(lv)] for lv in local], axis=1)  # (N, d+1, d)
    centroids = vertices[face_nodes].mean(axis=2)  # (N, d+1, dim)
    keys = _match_key(centroids.reshape(-1, dim), lower, period, periodic)

    table: dict[tuple, list[tuple[int, int]]] = {}
    for flat, key in enumerate(keys):
        table.setdefault(key, []).append(divmod(flat, dim + 1))

    faces, face_elements, face_local, face_shift = [], [], [], []
    element_faces = np.full((n_el, dim + 1), -1, dtype=np.int64)
    element_face_side = np.zeros((n_el, dim + 1), dtype=np.int64)
    for key, views in table.items():
        if len(views) > 2:
            raise TopologyError(f"face {key} shared by {len(views)} elements")
        fid = len(faces)
        (kl, jl) = views[0]
        faces.append(face_nodes[kl, jl])
        element_faces[kl, jl] = fid
        if len(views) == 2:
            (kr, jr) = views[1]
            face_elements.append((kl, kr))
            face_local.append((jl, jr))
            face_shift.append(centroids[kl, jl] - centroids[kr, jr])
            element_faces[kr, jr] = fid
            element_face_side[kr, jr] = 1
        else:
            on_periodic = False
            c = centroids[kl, jl]
            for ax, per in enumerate(periodic):
                if per and (
                    abs(c[ax] - lower[ax]) < 1e-12 * period[ax]
                    or abs(c[ax] - upper[ax]) < 1e-12 * period[ax]
                ):
                    on_periodic = True
            if on_periodic:
                raise TopologyError("periodic boundary face without a partner")
            face_elements.append((kl, -1))
            face_local.append((jl, -1))
            face_shift.append(np.zeros(dim))

    return SimplicialMesh(
        dim=dim,
        vertices=vertices,
        elements=elements,
        lower=lower,
        upper=upper,
        periodic=periodic,
        faces=np.array(faces, dtype=np.int64),
        face_elements=np.array(face_elements, dtype=np.int64),
        face_local=np.array(face_local, dtype=np.int64),
        face_shift=np.array(face_shift, dtype=float),
        element_faces=element_faces,
        element_face_side=element_face_side,
        periodic_map=periodic_map,
    )


def build_structured_mesh(lower, upper, n_cells, pattern: str = "interval", periodic=False) -> SimplicialMesh:
    """Uniform mesh of a box.

    ``pattern="interval"`` gives ``n_cells`` intervals in 1D.
    ``pattern="four_triangles_per_cell"`` splits each of ``nx*ny`` squares into
    four triangles about the cell centroid.
    """
    if pattern == "interval":
        n = int(np.atleast_1d(n_cells)[0])
        if n < 1:
            raise ValueError("n_cells must be >= 1")
        lo, hi = float(np.atleast_1d(lower)[0]), float(np.atleast_1d(upper)[0])
        x = np.linspace(lo, hi, n + 1)
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        return build_mesh(x[:, None], elements, lo, hi, periodic)
    if pattern == "four_triangles_per_cell":
        nx, ny = (int(v) for v in np.broadcast_to(np.asarray(n_cells), (2,)))
        if nx < 1 or ny < 1:
            raise ValueError("n_cells must be >= 1 per axis")
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (2,))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (2,))
        xs = np.linspace(lower[0], upper[0], nx + 1)
        ys = np.linspace(lower[1], upper[1], ny + 1)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        corners = np.column_stack([gx.ravel(), gy.ravel()])
        cx = 0.5 * (xs[:-1] + xs[1:])
        cy = 0.5 * (ys[:-1] + ys[1:])
        mx, my = np.meshgrid(cx, cy, indexing="ij")
        centres = np.column_stack([mx.ravel(), my.ravel()])
        vertices = np.vstack([corners, centres])

        def vid(i, j):
            return i * (ny + 1) + j

        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        c00, c10, c11, c01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
        m = len(corners) + i * ny + j
        tris = np.stack(
            [
                np.column_stack([c00, c10, m]),
                np.column_stack([c10, c11, m]),
                np.column_stack([c11, c01, m]),
                np.column_stack([c01, c00, m]),
            ],
            axis=1,
        ).reshape(-1, 3)
        return build_mesh(vertices, tris, lower, upper, periodic)
    raise ValueError(f"unknown pattern {pattern!r}")


@dataclass(frozen=True)
class Geometry:
    """Geometric quantities of a mesh at one set of vertex positions.

    Per-element arrays are indexed ``[K, j]`` with ``j`` the local face
    opposite local vertex ``j``.
    """

    measure: np.ndarray  # (N,)
    jacobian: np.ndarray  # (N, d, d), columns are edge vectors from vertex 0
    bary_grad: np.ndarray  # (N, d+1, d)
    face_measure: np.ndarray  # (N, d+1); 1 in 1D
    normal: np.ndarray  # (N, d+1, d), outward unit normals
    height: np.ndarray  # (N, d+1)

    @property
    def sigma_min(self) -> float:
        return float(self.height.min())


def compute_geometry(mesh: SimplicialMesh, positions: np.ndarray, check: bool = True) -> Geometry:
    """Element measures, face measures, outward normals and heights.

    Uses ``|e| = d |K| |grad lambda_j|`` and ``sigma_e = 1/|grad lambda_j|``;
    in 1D this yields ``|e| = 1`` automatically.
    """
    d = mesh.dim
    x = np.asarray(positions, dtype=float).reshape(-1, d)
    el = mesh.elements
    jac = np.transpose(x[el[:, 1:]] - x[el[:, :1]], (0, 2, 1))  # (N, d, d)
    if d == 1:
        det = jac[:, 0, 0]
    else:
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    measure = det / math.factorial(d)
    if check and np.any(measure <= 0.0):
        bad = int(np.argmin(measure))
        raise GeometryError(f"element {bad} has non-positive measure {measure[bad]:.3e}")
    if d == 1:
        inv = (1.0 / det)[:, None, None]
    else:
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv /= det[:, None, None]
    grad = np.empty((len(el), d + 1, d))
    grad[:, 1:, :] = inv  # rows of J^{-1} are gradients of lambda_1..lambda_d
    grad[:, 0, :] = -inv.sum(axis=1)
    gnorm = np.linalg.norm(grad, axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        normal = -grad / gnorm[:, :, None]
        height = 1.0 / gnorm
    face_measure = d * np.abs(measure)[:, None] * gnorm
    return Geometry(measure, jac, grad, face_measure, normal, height)


def element_measure(positions: np.ndarray, mesh: SimplicialMesh, K: int) -> float:
    return float(compute_geometry(mesh, positions).measure[K])


def edge_measure(positions: np.ndarray, mesh: SimplicialMesh, K: int, j: int) -> float:
    return float(compute_geometry(mesh, positions).face_measure[K, j])


def outward_normal(positions: np.ndarray, mesh: SimplicialMesh, K: int, j: int) -> np.ndarray:
    return compute_geometry(mesh, positions).normal[K, j].copy()


def edge_height(positions: np.ndarray, mesh: SimplicialMesh, K: int, j: int) -> float:
    return float(compute_geometry(mesh, positions).height[K, j])


@dataclass
class MeshReport:
    min_measure: float
    min_height: float
    inverted: np.ndarray

    @property
    def ok(self) -> bool:
        return self.min_measure > 0.0


def validate_mesh(positions: np.ndarray, mesh: SimplicialMesh) -> MeshReport:
    """Diagnostic check; never raises for inverted elements."""
    geo = compute_geometry(mesh, positions, check=False)
    inverted = np.flatnonzero(geo.measure <= 0.0)
    return MeshReport(float(geo.measure.min()), float(np.nanmin(geo.height)), inverted)


@dataclass
class MovingMesh:
    """A mesh whose vertices move linearly from ``x_old`` at ``t_n`` to ``x_new`` at ``t_next``."""

    mesh: SimplicialMesh
    x_old: np.ndarray
    x_new: np.ndarray
    t_n: float
    t_next: float

    def __post_init__(self):
        if self.x_old.shape != self.x_new.shape:
            raise ValueError("x_old and x_new must have identical shape")
        if not self.t_next > self.t_n:
            raise ValueError("t_next must exceed t_n")

    @property
    def dt(self) -> float:
        return self.t_next - self.t_n

    @property
    def velocities(self) -> np.ndarray:
        return (self.x_new - self.x_old) / self.dt

    def theta(self, t: float) -> float:
        if t < self.t_n or t > self.t_next:
            raise ValueError(f"t={t} outside [{self.t_n}, {self.t_next}]")
        return (t - self.t_n) / self.dt

    def positions_at(self, t: float) -> np.ndarray:
        if t == self.t_n:
            return self.x_old.copy()
        if t == self.t_next:
            return self.x_new.copy()
        th = self.theta(t)
        return (1.0 - th) * self.x_old + th * self.x_new

    def geometry_at(self, t: float) -> Geometry:
        return compute_geometry(self.mesh, self.positions_at(t))

    def mesh_velocity(self, x, t: float, K: int) -> np.ndarray:
        """Piecewise-linear mesh velocity at point ``x`` of element ``K``."""
        pos = self.positions_at(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        verts = pos[self.mesh.elements[K]]
        geo_jac = (verts[1:] - verts[0]).T
        lam = np.linalg.solve(geo_jac, x - verts[0])
        bary = np.concatenate([[1.0 - lam.sum()], lam])
        if np.any(bary < -1e-12):
            raise ValueError("point is outside the element")
        return bary @ self.velocities[self.mesh.elements[K]]


def write_mesh(path, positions: np.ndarray, mesh: SimplicialMesh) -> None:
    """Plain-text mesh snapshot: ``dim N_v N``, vertex rows, element rows."""
    positions = np.asarray(positions).reshape(-1, mesh.dim)
    with open(path, "w", encoding="utf-8") as fh:
        write_mesh_block(fh, positions, mesh.elements)


def write_mesh_block(fh, positions: np.ndarray, elements: np.ndarray) -> None:
    dim = positions.shape[1]
    fh.write(f"{dim} {len(positions)} {len(elements)}\n")
    for row in positions:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    for row in elements:
        fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_mesh_blocks(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read one or more consecutive mesh snapshot blocks."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    blocks = []
    i = 0
    while i < len(lines):
        if lines[i].startswith("#"):
            i += 1
            continue
        dim, nv, ne = (int(v) for v in lines[i].split())
        i += 1
        pos = np.array([[float(v) for v in lines[i + r].split()] for r in range(nv)]).reshape(nv, dim)
        i += nv
        el = np.array([[int(v) for v in lines[i + r].split()] for r in range(ne)], dtype=np.int64)
        i += ne
        blocks.append((pos, el))
    return blocks


def read_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    return read_mesh_blocks(path)[0]
