"""TVB minmod slope limiting for modal DG fields.

1D follows the Cockburn-Shu recipe (characteristic-wise for the Euler
equations).  On triangles the edge-midpoint limiter of Cockburn and Shu is
applied component by component.  Cell averages are never touched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dg import DGSpace
from .flux import Euler, FluxModel
from .mesh import Geometry


@dataclass
class LimiterSpec:
    kind: str = "minmod"  # "minmod" or "none"
    tvb_m: float = 0.0
    characteristic: bool = True
    nu: float = 1.5  # 2D neighbour-difference weight

    @property
    def active(self) -> bool:
        return self.kind != "none"


def minmod(a, b, c):
    """Elementwise minmod of three arrays."""
    s = np.sign(a)
    same = (s == np.sign(b)) & (s == np.sign(c))
    return np.where(same, s * np.minimum(np.minimum(np.abs(a), np.abs(b)), np.abs(c)), 0.0)


def tvb_minmod(a, b, c, bound):
    return np.where(np.abs(a) <= bound, a, minmod(a, b, c))


def euler_eigenvectors_1d(U: np.ndarray, gamma: float):
    """Right/left eigenvector matrices of the 1D Euler Jacobian at states ``U[..., 3]``."""
    rho = U[..., 0]
    u = U[..., 1] / rho
    E = U[..., 2]
    P = (gamma - 1.0) * (E - 0.5 * rho * u**2)
    c = np.sqrt(np.maximum(gamma * P / rho, 1e-300))
    H = (E + P) / rho
    R = np.empty(U.shape[:-1] + (3, 3))
    R[..., 0, :] = 1.0
    R[..., 1, 0] = u - c
    R[..., 1, 1] = u
    R[..., 1, 2] = u + c
    R[..., 2, 0] = H - u * c
    R[..., 2, 1] = 0.5 * u**2
    R[..., 2, 2] = H + u * c
    return R, np.linalg.inv(R)


class Limiter:
    def __init__(self, space: DGSpace, model: FluxModel, spec: LimiterSpec):
        self.space = space
        self.model = model
        self.spec = spec
        mesh = space.mesh
        self.dim = mesh.dim
        fe = mesh.face_elements
        ef = mesh.element_faces
        # neighbour across every local face; boundary faces point back to the element itself
        side = mesh.element_face_side
        other = np.where(side == 0, fe[ef, 1], fe[ef, 0])
        self.neighbours = np.where(other >= 0, other, np.arange(mesh.n_elements)[:, None])
        basis = space.basis
        if self.dim == 1:
            # face 0 sits at the right end (xi = 1), face 1 at the left end (xi = 0)
            self.phi_right = basis.values(np.array([[1.0]]))[0]
            self.phi_left = basis.values(np.array([[0.0]]))[0]
            self.phi1_end = self.phi_right[1] if basis.size > 1 else 1.0
        else:
            mids = np.array([[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]])  # opposite vertex 0, 1, 2
            self.phi_mid = basis.values(mids)  # (3, nb)
            T = self.phi_mid[:, 1:3]
            self.T_pinv = np.linalg.pinv(T)

    def __call__(self, coeffs: np.ndarray, positions: np.ndarray, geo: Geometry | None = None) -> np.ndarray:
        if not self.spec.active or self.space.k == 0:
            return coeffs
        if self.dim == 1:
            return self._limit_1d(coeffs, positions)
        return self._limit_2d(coeffs, positions)

    # ------------------------------------------------------------------ 1D
    def _limit_1d(self, c: np.ndarray, positions: np.ndarray) -> np.ndarray:
        avg = c[:, :, 0]
        right_nb = self.neighbours[:, 0]
        left_nb = self.neighbours[:, 1]
        d_plus = avg[right_nb] - avg
        d_minus = avg - avg[left_nb]
        u_right = np.einsum("nmb,b->nm", c, self.phi_right) - avg
        u_left = avg - np.einsum("nmb,b->nm", c, self.phi_left)
        x = positions[:, 0]
        h = x[self.space.mesh.elements[:, 1]] - x[self.space.mesh.elements[:, 0]]
        bound = (self.spec.tvb_m * h**2)[:, None]
        use_char = self.spec.characteristic and isinstance(self.model, Euler)
        if use_char:
            R, L = euler_eigenvectors_1d(avg, self.model.gamma)

            def to_char(v):
                return np.einsum("nij,nj->ni", L, v)

            d_plus, d_minus = to_char(d_plus), to_char(d_minus)
            u_right, u_left = to_char(u_right), to_char(u_left)
        mod_r = tvb_minmod(u_right, d_plus, d_minus, bound)
        mod_l = tvb_minmod(u_left, d_plus, d_minus, bound)
        changed = np.any(~np.isclose(mod_r, u_right, rtol=1e-12, atol=1e-14)
                         | ~np.isclose(mod_l, u_left, rtol=1e-12, atol=1e-14), axis=1)
        if not np.any(changed):
            return c
        slope = c[:, :, 1] * self.phi1_end
        if use_char:
            slope = to_char(slope)
        new_slope = tvb_minmod(slope, d_plus, d_minus, bound)
        if use_char:
            new_slope = np.einsum("nij,nj->ni", R, new_slope)
        out = c.copy()
        out[changed, :, 1] = new_slope[changed] / self.phi1_end
        out[changed, :, 2:] = 0.0
        return out

    # ------------------------------------------------------------------ 2D
    def _limit_2d(self, c: np.ndarray, positions: np.ndarray) -> np.ndarray:
        mesh = self.space.mesh
        verts = positions[mesh.elements]
        b0 = verts.mean(axis=1)  # (N, 2)
        nb = self.neighbours  # (N, 3)
        off = b0[nb] - b0[:, None, :]
        for ax, per in enumerate(mesh.periodic):
            if per:
                L = mesh.period[ax]
                off[..., ax] -= L * np.round(off[..., ax] / L)
        # midpoints of faces opposite vertex i: average of the two other vertices
        mids = np.stack([0.5 * (verts[:, 1] + verts[:, 2]), 0.5 * (verts[:, 2] + verts[:, 0]),
                         0.5 * (verts[:, 0] + verts[:, 1])], axis=1) - b0[:, None, :]
        avg = c[:, :, 0]
        davg = avg[nb] - avg[:, None, :]  # (N, 3, m)
        delta_nb = np.zeros((len(c), 3, c.shape[1]))
        for i in range(3):
            j1, j2 = (i + 1) % 3, (i + 2) % 3
            best = np.full((len(c), c.shape[1]), np.nan)
            for a, b in ((i, j1), (i, j2), (j1, j2)):
                A = np.stack([off[:, a], off[:, b]], axis=2)  # columns are centroid offsets
                det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
                ok = np.abs(det) > 1e-14 * np.sum(off[:, a] ** 2, axis=1)
                sdet = np.where(ok, det, 1.0)
                a1 = (mids[:, i, 0] * A[:, 1, 1] - mids[:, i, 1] * A[:, 0, 1]) / sdet
                a2 = (A[:, 0, 0] * mids[:, i, 1] - A[:, 1, 0] * mids[:, i, 0]) / sdet
                good = ok & (a1 >= -1e-12) & (a2 >= -1e-12)
                val = a1[:, None] * davg[:, a] + a2[:, None] * davg[:, b]
                best = np.where(np.isnan(best) & good[:, None], val, best)
            # fallback: projection onto the direction of the neighbour across face i
            w = np.sum(mids[:, i] * off[:, i], axis=1) / np.maximum(np.sum(off[:, i] ** 2, axis=1), 1e-300)
            delta_nb[:, i] = np.where(np.isnan(best), w[:, None] * davg[:, i], best)
        u_mid = np.einsum("nmb,ib->nim", c, self.phi_mid) - avg[:, None, :]
        e1, e2 = verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]
        area = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) / 2
        bound = (self.spec.tvb_m * area)[:, None, None]
        lim = tvb_minmod(u_mid, self.spec.nu * delta_nb, self.spec.nu * delta_nb, bound)
        changed = np.any(~np.isclose(lim, u_mid, rtol=1e-12, atol=1e-14), axis=(1, 2))
        if not np.any(changed):
            return c
        pos = np.sum(np.maximum(lim, 0.0), axis=1)
        neg = np.sum(np.maximum(-lim, 0.0), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = np.where(pos > 0, np.minimum(1.0, neg / pos), 0.0)
            tn = np.where(neg > 0, np.minimum(1.0, pos / neg), 0.0)
        balanced = tp[:, None, :] * np.maximum(lim, 0.0) - tn[:, None, :] * np.maximum(-lim, 0.0)
        lin = np.einsum("bi,nim->nmb", self.T_pinv, balanced)  # (N, m, 2)
        out = c.copy()
        out[changed, :, 1:3] = lin[changed]
        out[changed, :, 3:] = 0.0
        return out
