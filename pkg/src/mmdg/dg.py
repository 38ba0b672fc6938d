"""Modal P^k discontinuous Galerkin spaces on simplices.

The reference simplex has vertices ``0, e_1, ..., e_d`` and its measure is
normalised to one, so element integrals read ``|K| * sum_G w_G f(x_G)`` with
``sum_G w_G = 1``.  Basis functions are orthonormal for that measure, which
makes the mass matrix on a moving element equal to ``|K(t)| * I``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.special import roots_jacobi

from .mesh import Geometry, SimplicialMesh, TopologyError, compute_geometry

MAX_DEGREE = 3


def _exponents(d: int, k: int) -> list[tuple[int, ...]]:
    exps = [e for e in product(range(k + 1), repeat=d) if sum(e) <= k]
    return sorted(exps, key=lambda e: (sum(e), tuple(-v for v in e)))


def monomial_integral(exps: tuple[int, ...]) -> float:
    """Integral of a monomial over the reference simplex with unit total measure."""
    d = len(exps)
    num = math.prod(math.factorial(a) for a in exps)
    return math.factorial(d) * num / math.factorial(sum(exps) + d)


@dataclass(frozen=True)
class ReferenceBasis:
    dim: int
    degree: int
    exponents: tuple[tuple[int, ...], ...]
    coefficients: np.ndarray  # (n_b, n_monomials), rows are basis functions

    @property
    def size(self) -> int:
        return len(self.exponents)

    def _monomials(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(xi)
        out = np.ones((len(xi), self.size))
        for j, e in enumerate(self.exponents):
            for ax, p in enumerate(e):
                if p:
                    out[:, j] *= xi[:, ax] ** p
        return out

    def _monomial_grads(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(xi)
        out = np.zeros((len(xi), self.size, self.dim))
        for j, e in enumerate(self.exponents):
            for g in range(self.dim):
                if e[g] == 0:
                    continue
                term = np.full(len(xi), float(e[g]))
                for ax, p in enumerate(e):
                    q = p - 1 if ax == g else p
                    if q:
                        term = term * xi[:, ax] ** q
                out[:, j, g] = term
        return out

    def values(self, xi: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape ``(P, n_b)``."""
        return self._monomials(xi) @ self.coefficients.T

    def gradients(self, xi: np.ndarray) -> np.ndarray:
        """Reference gradients, shape ``(P, n_b, d)``."""
        return np.einsum("bm,pmd->pbd", self.coefficients, self._monomial_grads(xi))


@lru_cache(maxsize=None)
def make_basis(d: int, k: int) -> ReferenceBasis:
    """Orthonormal modal basis of P^k on the reference simplex (basis 0 is 1)."""
    if d not in (1, 2):
        raise ValueError(f"unsupported dimension {d}")
    if not 0 <= k <= MAX_DEGREE:
        raise ValueError(f"unsupported degree {k}; expected 0..{MAX_DEGREE}")
    exps = _exponents(d, k)
    n = len(exps)
    gram = np.empty((n, n))
    for i, a in enumerate(exps):
        for j, b in enumerate(exps):
            gram[i, j] = monomial_integral(tuple(x + y for x, y in zip(a, b)))
    chol = np.linalg.cholesky(gram)
    coeffs = np.linalg.inv(chol)
    return ReferenceBasis(d, k, tuple(exps), coeffs)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (P, d) reference coordinates
    weights: np.ndarray  # (P,), sum to one
    degree: int


@lru_cache(maxsize=None)
def _gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def make_quadrature(d: int, degree: int) -> QuadratureRule:
    """Element rule with positive weights, exact up to ``degree``.

    1D uses Gauss-Legendre; triangles use the collapsed (Duffy) product of
    Gauss-Legendre and Gauss-Jacobi(1, 0) rules.
    """
    if degree < 0 or degree > 4 * MAX_DEGREE + 2:
        raise ValueError(f"unsupported quadrature degree {degree}")
    n = max(1, (degree + 2) // 2)
    if d == 1:
        x, w = _gauss_legendre01(n)
        return QuadratureRule(x[:, None], w, 2 * n - 1)
    if d == 2:
        u, wu = _gauss_legendre01(n)
        r, wr = roots_jacobi(n, 1.0, 0.0)
        v = 0.5 * (r + 1.0)
        wv = wr / 4.0  # (1 - v) dv weight on [0, 1]
        uu, vv = np.meshgrid(u, v, indexing="ij")
        ww = np.outer(wu, wv)
        pts = np.column_stack([(uu * (1.0 - vv)).ravel(), vv.ravel()])
        w = ww.ravel()
        return QuadratureRule(pts, w / w.sum(), 2 * n - 1)
    raise ValueError(f"unsupported dimension {d}")


@lru_cache(maxsize=None)
def make_edge_quadrature(d: int, degree: int) -> QuadratureRule:
    """Rule on a face parametrised by ``s in [0, 1]`` (a single point in 1D)."""
    if d == 1:
        return QuadratureRule(np.zeros((1, 0)), np.ones(1), 10**6)
    n = max(1, (degree + 2) // 2)
    s, w = _gauss_legendre01(n)
    return QuadratureRule(s[:, None], w, 2 * n - 1)


@dataclass(frozen=True)
class FaceQuadrature:
    """Gauss points of every mesh face expressed in both adjacent elements."""

    weights: np.ndarray  # (Q,)
    bary_left: np.ndarray  # (N_f, Q, d+1)
    bary_right: np.ndarray  # (N_f, Q, d+1); copies of the left data on boundary faces


def build_face_quadrature(mesh: SimplicialMesh, rule: QuadratureRule) -> FaceQuadrature:
    d = mesh.dim
    nf = mesh.n_faces
    q = len(rule.weights)
    s = rule.points[:, 0] if d == 2 else np.zeros(1)
    local = [(1,), (0,)] if d == 1 else [(1, 2), (2, 0), (0, 1)]
    bl = np.zeros((nf, q, d + 1))
    br = np.zeros((nf, q, d + 1))
    pos = mesh.vertices
    for f in range(nf):
        kl, kr = mesh.face_elements[f]
        jl, jr = mesh.face_local[f]
        lv = local[jl]
        if d == 1:
            bl[f, :, lv[0]] = 1.0
        else:
            bl[f, :, lv[0]] = 1.0 - s
            bl[f, :, lv[1]] = s
        if kr < 0:
            br[f] = bl[f]
            continue
        rv = local[jr]
        shift = mesh.face_shift[f]
        left_pts = pos[mesh.elements[kl, list(lv)]]
        right_pts = pos[mesh.elements[kr, list(rv)]] + shift
        # which right-local vertex coincides with each left-face vertex
        for a, la in enumerate(lv):
            dist = np.linalg.norm(right_pts - left_pts[a], axis=1)
            b = int(np.argmin(dist))
            if dist[b] > 1e-9 * np.max(mesh.period):
                raise ValueError(f"face {f}: vertices of adjacent elements do not match")
            br[f, :, rv[b]] = bl[f, :, la]
    return FaceQuadrature(rule.weights, bl, br)


class DGSpace:
    """Precomputed basis tables for one mesh, degree and component count."""

    def __init__(self, mesh: SimplicialMesh, k: int, m: int = 1):
        self.mesh = mesh
        self.k = k
        self.m = m
        d = mesh.dim
        self.basis = make_basis(d, k)
        self.quad = make_quadrature(d, max(2 * k, 1))
        self.edge_quad = make_edge_quadrature(d, 2 * k + 1)
        self.face_quad = build_face_quadrature(mesh, self.edge_quad)
        xi = self.quad.points
        self.phi = self.basis.values(xi)  # (Pq, nb)
        self.dphi_ref = self.basis.gradients(xi)  # (Pq, nb, d)
        fq = self.face_quad
        self.phi_left = self.basis.values(fq.bary_left[..., 1:].reshape(-1, d)).reshape(
            mesh.n_faces, -1, self.basis.size
        )
        self.phi_right = self.basis.values(fq.bary_right[..., 1:].reshape(-1, d)).reshape(
            mesh.n_faces, -1, self.basis.size
        )
        bary_q = np.column_stack([1.0 - xi.sum(axis=1), xi])
        self.bary_quad = bary_q  # (Pq, d+1)

    @property
    def n_basis(self) -> int:
        return self.basis.size

    def element_points(self, positions: np.ndarray) -> np.ndarray:
        """Physical element quadrature points, ``(N, Pq, d)``."""
        verts = positions[self.mesh.elements]  # (N, d+1, d)
        return self.bary_quad @ verts

    def face_points(self, positions: np.ndarray) -> np.ndarray:
        """Physical face Gauss points from the left element, ``(N_f, Q, d)``."""
        kl = self.mesh.face_elements[:, 0]
        verts = positions[self.mesh.elements[kl]]
        return self.face_quad.bary_left @ verts

    def face_velocity(self, velocities: np.ndarray) -> np.ndarray:
        """Piecewise-linear mesh velocity at face Gauss points, ``(N_f, Q, d)``."""
        kl = self.mesh.face_elements[:, 0]
        vel = velocities[self.mesh.elements[kl]]
        return self.face_quad.bary_left @ vel

    def element_velocity(self, velocities: np.ndarray) -> np.ndarray:
        vel = velocities[self.mesh.elements]
        return self.bary_quad @ vel

    def face_normals(self, geo: Geometry) -> tuple[np.ndarray, np.ndarray]:
        """Outward normal (left view) and measure of every face."""
        kl = self.mesh.face_elements[:, 0]
        jl = self.mesh.face_local[:, 0]
        return geo.normal[kl, jl], geo.face_measure[kl, jl]

    def physical_gradients(self, geo: Geometry) -> np.ndarray:
        """Basis gradients at element quadrature points, ``(N, Pq, nb, d)``."""
        inv = geo.bary_grad[:, 1:, :]  # (N, d, d) = J^{-1}
        p, nb, r = self.dphi_ref.shape
        return (self.dphi_ref.reshape(p * nb, r) @ inv).reshape(len(inv), p, nb, -1)

    # field evaluation -------------------------------------------------
    def evaluate_quad(self, coeffs: np.ndarray) -> np.ndarray:
        """Values at element quadrature points, ``(N, Pq, m)``."""
        return self.phi @ coeffs.transpose(0, 2, 1)

    def traces(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Interior and exterior traces at face Gauss points, each ``(N_f, Q, m)``.

        On boundary faces the exterior trace is a copy of the interior one,
        i.e. a transmissive condition.
        """
        kl = self.mesh.face_elements[:, 0]
        kr = self.mesh.face_elements[:, 1]
        u_int = self.phi_left @ coeffs[kl].transpose(0, 2, 1)
        right = np.where(kr >= 0, kr, kl)
        u_ext = self.phi_right @ coeffs[right].transpose(0, 2, 1)
        return u_int, u_ext

    def zeros(self) -> np.ndarray:
        return np.zeros((self.mesh.n_elements, self.m, self.n_basis))


@dataclass
class DGField:
    """Modal coefficients ``(N, m, n_b)`` of a piecewise polynomial field."""

    space: DGSpace
    coeffs: np.ndarray

    @property
    def cell_averages(self) -> np.ndarray:
        return self.coeffs[:, :, 0]

    def copy(self) -> "DGField":
        return DGField(self.space, self.coeffs.copy())


def l2_project(f, positions: np.ndarray, space: DGSpace, quad: QuadratureRule | None = None) -> DGField:
    """Element-wise L2 projection of ``f(x) -> (P, m)`` onto the DG space."""
    mesh = space.mesh
    quad = quad or make_quadrature(mesh.dim, max(2 * space.k + 2, 4))
    xi = quad.points
    bary = np.column_stack([1.0 - xi.sum(axis=1), xi])
    verts = positions[mesh.elements]
    pts = np.einsum("pv,nvd->npd", bary, verts)
    vals = np.asarray(f(pts.reshape(-1, mesh.dim)), dtype=float)
    vals = vals.reshape(len(pts), len(xi), -1)
    phi = space.basis.values(xi)
    coeffs = np.einsum("p,npm,pb->nmb", quad.weights, vals, phi, optimize=True)
    return DGField(space, coeffs)


def evaluate(field: DGField, K: int, xi: np.ndarray) -> np.ndarray:
    """Value of the field in element ``K`` at reference point(s) ``xi``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    vals = np.einsum("mb,pb->pm", field.coeffs[K], field.space.basis.values(xi))
    return vals[0] if len(xi) == 1 else vals


def evaluate_physical(field: DGField, K: int, x, positions: np.ndarray) -> np.ndarray:
    """Value of the field at physical point ``x`` inside element ``K``."""
    mesh = field.space.mesh
    verts = positions[mesh.elements[K]]
    jac = (verts[1:] - verts[0]).T
    xi = np.linalg.solve(jac, np.atleast_1d(np.asarray(x, dtype=float)) - verts[0])
    return evaluate(field, K, xi)


def evaluate_trace(field: DGField, face: int, side: str) -> np.ndarray:
    """Trace on one face at its Gauss points, ``side`` in {"int", "ext"}."""
    mesh = field.space.mesh
    kl, kr = mesh.face_elements[face]
    sp = field.space
    if side == "int":
        return field.coeffs[kl] @ sp.phi_left[face].T
    if side == "ext":
        if kr < 0:
            if any(mesh.periodic):
                raise TopologyError(f"boundary face {face} has no periodic partner")
            return field.coeffs[kl] @ sp.phi_left[face].T
        return field.coeffs[kr] @ sp.phi_right[face].T
    raise ValueError("side must be 'int' or 'ext'")


def mass_matrix(positions: np.ndarray, K: int, space: DGSpace) -> np.ndarray:
    """Mass matrix of the moving element ``K`` at the given positions."""
    geo = compute_geometry(space.mesh, positions)
    quad = make_quadrature(space.mesh.dim, 2 * space.k)
    phi = space.basis.values(quad.points)
    return geo.measure[K] * np.einsum("p,pi,pj->ij", quad.weights, phi, phi, optimize=True)


def write_field(path, field: DGField) -> None:
    """Plain-text snapshot: ``k m N`` then one row of ``m * n_b`` coefficients per element."""
    c = field.coeffs
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{field.space.k} {c.shape[1]} {c.shape[0]}\n")
        for row in c.reshape(len(c), -1):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_field(path) -> tuple[int, int, np.ndarray]:
    """Inverse of :func:`write_field`; returns ``(k, m, coeffs)``."""
    with open(path, encoding="utf-8") as fh:
        k, m, n = (int(v) for v in fh.readline().split())
        data = np.array([[float(v) for v in ln.split()] for ln in fh if ln.strip()])
    return k, m, data.reshape(n, m, -1)
