"""Hessian-based metric tensors and an MMPDE mesh mover.

The mover integrates the gradient flow of the Huang meshing functional

    I_h = sum_K |K| G(J_K, det J_K, M_K),
    G = theta sqrt(det M) tr(J M^-1 J^T)^(d p / 2)
        + (1 - 2 theta) d^(d p / 2) sqrt(det M) (det J / sqrt(det M))^p,

where ``J_K`` maps the physical element onto its counterpart in the initial
uniform (computational) mesh.  Vertex velocities are
``dx_i/dt = -(P_i / tau) dI_h/dx_i`` with ``P_i = det(M_i)^((p-1)/2)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import GeometryError, SimplicialMesh, compute_geometry

log = logging.getLogger(__name__)


@dataclass
class MmpdeParams:
    """Mesh-mover settings; none of these values are fixed by the method itself."""

    tau: float = 1e-2
    n_sweeps: int = 4
    theta: float = 1.0 / 3.0
    p: float = 1.5
    n_smooth: int = 2
    max_step_fraction: float = 0.1
    max_substeps: int = 40
    max_retries: int = 12
    beta_floor: float = 1e-8
    # explicit sub-steps are kept below 1/|lambda_max| of the linearised flow
    stiffness_iters: int = 6

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be >= 1")


@dataclass
class RecoveredHessian:
    hessian: np.ndarray  # (N, d, d)

    @property
    def absolute(self) -> np.ndarray:
        return abs_matrix(self.hessian)


def abs_matrix(H: np.ndarray, noise_rtol: float = 0.0) -> np.ndarray:
    """``Q diag(|lambda|) Q^T`` for a stack of symmetric matrices.

    Eigenvalues below ``noise_rtol`` times the largest one in the whole stack
    are set to zero.
    """
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    lam, Q = np.linalg.eigh(H)
    lam = np.abs(lam)
    if noise_rtol > 0 and lam.size:
        lam = np.where(lam < noise_rtol * lam.max(), 0.0, lam)
    return np.einsum("...ij,...j,...kj->...ik", Q, lam, Q, optimize=True)


# ---------------------------------------------------------------- patches
def element_patches(mesh: SimplicialMesh) -> list[np.ndarray]:
    """Elements sharing at least one (periodically identified) vertex with each element."""
    canon = mesh.periodic_map[mesh.elements]
    by_vertex: dict[int, list[int]] = {}
    for k, row in enumerate(canon):
        for v in row:
            by_vertex.setdefault(int(v), []).append(k)
    patches = []
    for k, row in enumerate(canon):
        nb = set()
        for v in row:
            nb.update(by_vertex[int(v)])
        patches.append(np.array(sorted(nb), dtype=np.int64))
    return patches


def widen_patch(patches: list[np.ndarray], k: int) -> np.ndarray:
    return np.unique(np.concatenate([patches[j] for j in patches[k]]))


def _centroid_offsets(mesh, centroids, k, nb):
    off = centroids[nb] - centroids[k]
    for ax, per in enumerate(mesh.periodic):
        if per:
            L = mesh.period[ax]
            off[:, ax] -= L * np.round(off[:, ax] / L)
    return off


def _design_rows(offsets: np.ndarray, covs: np.ndarray, scale: float) -> np.ndarray:
    """Rows mapping quadratic coefficients to exact element averages."""
    d = offsets.shape[1]
    z = offsets / scale
    c = covs / scale**2
    cols = [np.ones(len(z))]
    cols += [z[:, i] for i in range(d)]
    for i in range(d):
        for j in range(i, d):
            second = z[:, i] * z[:, j] + c[:, i, j]
            cols.append(second if i != j else 0.5 * second)
    return np.column_stack(cols)


def recover_hessian(values: np.ndarray, positions: np.ndarray, mesh: SimplicialMesh,
                    patches: list[np.ndarray] | None = None) -> RecoveredHessian:
    """Least-squares quadratic fit of cell averages over vertex patches.

    The fit matches exact element averages of the quadratic, so globally
    quadratic data is reproduced to round-off on any mesh.
    """
    d = mesh.dim
    values = np.asarray(values, dtype=float)
    patches = patches if patches is not None else element_patches(mesh)
    verts = positions[mesh.elements]
    centroids = verts.mean(axis=1)
    w = verts - centroids[:, None, :]
    covs = np.einsum("nvi,nvj->nij", w, w) / ((d + 1) * (d + 2))
    geo = compute_geometry(mesh, positions, check=False)
    scales = np.abs(geo.measure) ** (1.0 / d)
    n_unknown = 1 + d + d * (d + 1) // 2
    H = np.zeros((mesh.n_elements, d, d))

    # group elements by patch size for batched solves
    sizes = np.array([len(p) for p in patches])
    for size in np.unique(sizes):
        ks = np.flatnonzero(sizes == size)
        if size < n_unknown:
            for k in ks:
                H[k] = _fit_single(values, centroids, covs, scales, mesh, k, widen_patch(patches, k), patches)
            continue
        nb = np.stack([patches[k] for k in ks])  # (B, size)
        off = centroids[nb] - centroids[ks][:, None, :]
        for ax, per in enumerate(mesh.periodic):
            if per:
                L = mesh.period[ax]
                off[..., ax] -= L * np.round(off[..., ax] / L)
        sc = scales[ks][:, None]
        z = off / sc[..., None]
        c = covs[nb] / (sc**2)[..., None, None]
        cols = [np.ones(z.shape[:2])] + [z[..., i] for i in range(d)]
        for i in range(d):
            for j in range(i, d):
                second = z[..., i] * z[..., j] + c[..., i, j]
                cols.append(second if i != j else 0.5 * second)
        A = np.stack(cols, axis=-1)  # (B, size, n_unknown)
        rhs = values[nb]
        AtA = A.transpose(0, 2, 1) @ A
        Atb = (A.transpose(0, 2, 1) @ rhs[..., None])[..., 0]
        eig = np.linalg.eigvalsh(AtA)
        good = eig[:, 0] > 1e-10 * eig[:, -1]
        coef = np.zeros((len(ks), n_unknown))
        if np.any(good):
            coef[good] = np.linalg.solve(AtA[good], Atb[good][..., None])[..., 0]
        Hz = _coef_to_hessian(coef, d)
        H[ks] = Hz / (scales[ks] ** 2)[:, None, None]
        for k in ks[~good]:
            H[k] = _fit_single(values, centroids, covs, scales, mesh, k, widen_patch(patches, k), patches)
    return RecoveredHessian(H)


def _coef_to_hessian(coef: np.ndarray, d: int) -> np.ndarray:
    H = np.zeros((len(coef), d, d))
    col = 1 + d
    for i in range(d):
        for j in range(i, d):
            H[:, i, j] = coef[:, col]
            H[:, j, i] = coef[:, col]
            col += 1
    return H


def _fit_single(values, centroids, covs, scales, mesh, k, patch, patches, depth=0):
    d = mesh.dim
    off = _centroid_offsets(mesh, centroids, k, patch)
    A = _design_rows(off, covs[patch], scales[k])
    sv = np.linalg.svd(A, compute_uv=False)
    n_unknown = A.shape[1]
    if len(sv) < n_unknown or sv[-1] < 1e-8 * sv[0]:
        if depth >= 2:
            raise np.linalg.LinAlgError(f"rank-deficient Hessian fit on element {k}")
        wider = np.unique(np.concatenate([patches[j] for j in patch]))
        return _fit_single(values, centroids, covs, scales, mesh, k, wider, patches, depth + 1)
    coef = np.linalg.lstsq(A, values[patch], rcond=None)[0]
    return _coef_to_hessian(coef[None], d)[0] / scales[k] ** 2


# ---------------------------------------------------------------- beta and metric
def _eig_abs(absH: np.ndarray) -> np.ndarray:
    return np.clip(np.linalg.eigvalsh(0.5 * (absH + np.swapaxes(absH, -1, -2))), 0.0, None)


def beta_residual(beta: float, measures: np.ndarray, mu: np.ndarray) -> float:
    """Left minus right side of the regularisation equation (``mu``: eigenvalues of ``|H_K|``)."""
    d = mu.shape[1]
    q = 2.0 / (d + 4)
    lhs = np.sum(measures * np.prod(beta + mu, axis=1) ** q)
    rhs = 2.0 * np.sum(measures * np.prod(mu, axis=1) ** q)
    return lhs - rhs


def _bracket(measures, mu):
    hi = max(float(mu.max()), 1e-300)
    while beta_residual(hi, measures, mu) <= 0:
        hi *= 2.0
    return 0.0, hi


def solve_beta_bisection(measures, absH, tol: float = 1e-14, maxiter: int = 400) -> float:
    mu = _eig_abs(absH)
    lo, hi = _bracket(measures, mu)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if beta_residual(mid, measures, mu) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def solve_beta_newton(measures, absH, tol: float = 1e-14, maxiter: int = 200) -> float:
    """Safeguarded Newton iteration on the (concave, increasing) residual."""
    mu = _eig_abs(absH)
    d = mu.shape[1]
    q = 2.0 / (d + 4)
    lo, hi = _bracket(measures, mu)
    beta = hi
    for _ in range(maxiter):
        f = beta_residual(beta, measures, mu)
        if f > 0:
            hi = beta
        else:
            lo = beta
        dets = np.prod(beta + mu, axis=1)
        df = np.sum(measures * q * dets**q * np.sum(1.0 / (beta + mu), axis=1))
        new = beta - f / df if df > 0 and np.isfinite(df) else 0.5 * (lo + hi)
        if not lo <= new <= hi:
            new = 0.5 * (lo + hi)
        if abs(new - beta) <= tol * max(beta, 1e-300):
            return new
        beta = new
    return beta


@dataclass
class BetaResult:
    beta: float
    degenerate: bool = False


def solve_beta(measures, absH, beta_floor: float = 1e-8, method: str = "newton") -> BetaResult:
    """Regularisation parameter ``beta_h``; returns ``beta_floor`` for flat data."""
    measures = np.asarray(measures, dtype=float)
    absH = np.asarray(absH, dtype=float)
    mu = _eig_abs(absH)
    d = mu.shape[1]
    if np.sum(measures * np.prod(mu, axis=1) ** (2.0 / (d + 4))) <= 0.0:
        return BetaResult(beta_floor, degenerate=True)
    solver = solve_beta_newton if method == "newton" else solve_beta_bisection
    return BetaResult(max(solver(measures, absH), beta_floor))


def metric_from_hessian(absH: np.ndarray, beta: float) -> np.ndarray:
    """``det(beta I + |H|)^(-1/(d+4)) (beta I + |H|)`` per element."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    d = absH.shape[-1]
    A = beta * np.eye(d) + absH
    det = np.linalg.det(A)
    return det[:, None, None] ** (-1.0 / (d + 4)) * A


def normalize_metric(M: np.ndarray) -> np.ndarray:
    """Divide the field by its largest absolute entry over all elements."""
    scale = np.max(np.abs(M))
    if not scale > 0:
        raise ValueError("cannot normalize a zero metric")
    return M / scale


def metric_intersection(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Intersection of metric ellipsoids via simultaneous diagonalisation.

    With ``A = L L^T`` and ``L^-1 B L^-T = Q diag(lam) Q^T`` the result is
    ``L Q diag(max(lam, 1)) Q^T L^T``; in 1D it is ``max(a, b)``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    L = np.linalg.cholesky(A)
    Linv = np.linalg.inv(L)
    C = Linv @ B @ np.swapaxes(Linv, -1, -2)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    lam, Q = np.linalg.eigh(C)
    D = np.einsum("...ij,...j,...kj->...ik", Q, np.maximum(lam, 1.0), Q, optimize=True)
    R = L @ D @ np.swapaxes(L, -1, -2)
    return 0.5 * (R + np.swapaxes(R, -1, -2))


def intersect_normalized(M1: np.ndarray, M2: np.ndarray) -> np.ndarray:
    return metric_intersection(normalize_metric(M1), normalize_metric(M2))


def metric_for_field(values: np.ndarray, positions: np.ndarray, mesh: SimplicialMesh,
                     patches=None, beta_floor: float = 1e-8, noise_rtol: float = 1e-10) -> np.ndarray:
    """Full pipeline: Hessian recovery, ``|H|``, ``beta_h`` and the metric.

    Recovered curvatures at round-off level (relative ``noise_rtol``) are
    dropped; the fractional power in the ``beta_h`` equation would otherwise
    turn them into visible changes of the metric.
    """
    geo = compute_geometry(mesh, positions, check=False)
    absH = abs_matrix(recover_hessian(values, positions, mesh, patches).hessian, noise_rtol)
    beta = solve_beta(np.abs(geo.measure), absH, beta_floor).beta
    return metric_from_hessian(absH, beta)


# ---------------------------------------------------------------- smoothing
def _vertex_average(mesh: SimplicialMesh, measure: np.ndarray, M: np.ndarray) -> np.ndarray:
    canon = mesh.periodic_map
    nv = mesh.n_vertices
    flat = M.reshape(len(M), -1)
    acc = np.zeros((nv, flat.shape[1]))
    wsum = np.zeros(nv)
    for j in range(mesh.dim + 1):
        idx = canon[mesh.elements[:, j]]
        np.add.at(acc, idx, measure[:, None] * flat)
        np.add.at(wsum, idx, measure)
    acc = acc[canon] / wsum[canon][:, None]
    return acc.reshape((nv,) + M.shape[1:])


def smooth_metric(mesh: SimplicialMesh, positions: np.ndarray, M: np.ndarray, n_smooth: int = 2):
    """Volume-weighted element -> vertex -> element averaging; returns element and vertex metrics."""
    measure = np.abs(compute_geometry(mesh, positions, check=False).measure)
    Mv = _vertex_average(mesh, measure, M)
    for _ in range(n_smooth):
        M = Mv[mesh.elements].mean(axis=1)
        Mv = _vertex_average(mesh, measure, M)
    return M, Mv


# ---------------------------------------------------------------- mover
def _inv_det(E: np.ndarray):
    d = E.shape[-1]
    if d == 1:
        det = E[:, 0, 0]
        return (1.0 / det)[:, None, None], det
    det = E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0]
    inv = np.empty_like(E)
    inv[:, 0, 0] = E[:, 1, 1]
    inv[:, 1, 1] = E[:, 0, 0]
    inv[:, 0, 1] = -E[:, 0, 1]
    inv[:, 1, 0] = -E[:, 1, 0]
    return inv / det[:, None, None], det


class MeshMover:
    """Gradient flow of the meshing functional on a fixed computational mesh."""

    def __init__(self, mesh: SimplicialMesh, params: MmpdeParams | None = None,
                 reference: np.ndarray | None = None):
        self.mesh = mesh
        self.params = params or MmpdeParams()
        ref = mesh.vertices if reference is None else reference
        d = mesh.dim
        el = mesh.elements
        self.E_hat = np.transpose(ref[el[:, 1:]] - ref[el[:, :1]], (0, 2, 1))
        _, self.det_E_hat = _inv_det(self.E_hat)
        bmask = mesh.boundary_vertex_mask()
        self.free = ~bmask  # (N_v, d): component may move
        self.patches = element_patches(mesh)
        self._fact = float(np.prod(np.arange(1, d + 1)))
        self._probe = None
        self._metric_cache = None
        self._vertex_cache = None

    # energy ---------------------------------------------------------
    def _metric_factors(self, M: np.ndarray):
        if self._metric_cache is None or self._metric_cache[0] is not M:
            self._metric_cache = (M, np.linalg.inv(M), np.sqrt(np.linalg.det(M)))
        return self._metric_cache[1:]

    def _terms(self, x: np.ndarray, M: np.ndarray):
        p, theta = self.params.p, self.params.theta
        d = self.mesh.dim
        el = self.mesh.elements
        E = np.transpose(x[el[:, 1:]] - x[el[:, :1]], (0, 2, 1))
        Einv, detE = _inv_det(E)
        J = self.E_hat @ Einv
        r = self.det_E_hat / detE
        Minv, sdet = self._metric_factors(M)
        JM = J @ Minv
        T = np.sum(JM * J, axis=(1, 2))
        a = d * p / 2.0
        G = theta * sdet * T**a + (1 - 2 * theta) * d**a * sdet * (r / sdet) ** p
        G_J = (d * p * theta * sdet * T ** (a - 1.0))[:, None, None] * JM
        G_r = p * (1 - 2 * theta) * d**a * sdet ** (1.0 - p) * r ** (p - 1.0)
        measure = detE / self._fact
        return E, Einv, detE, J, r, G, G_J, G_r, measure

    def energy(self, x: np.ndarray, M: np.ndarray) -> float:
        *_, G, _, _, measure = self._terms(x, M)
        return float(np.sum(measure * G))

    def gradient(self, x: np.ndarray, M: np.ndarray) -> np.ndarray:
        """``dI/dx`` for every vertex (periodic partners not yet merged)."""
        E, Einv, detE, J, r, G, G_J, G_r, measure = self._terms(x, M)
        Y = measure[:, None, None] * (
            (G - G_r * r)[:, None, None] * Einv - Einv @ np.swapaxes(G_J, 1, 2) @ J
        )
        el = self.mesh.elements
        grad = np.zeros_like(x)
        for j in range(1, self.mesh.dim + 1):
            np.add.at(grad, el[:, j], Y[:, j - 1, :])
        np.add.at(grad, el[:, 0], -Y.sum(axis=1))
        return grad

    def _merge_periodic(self, g: np.ndarray) -> np.ndarray:
        canon = self.mesh.periodic_map
        acc = np.zeros_like(g)
        np.add.at(acc, canon, g)
        return acc[canon]

    def velocity(self, x: np.ndarray, M: np.ndarray, Mv: np.ndarray) -> np.ndarray:
        """Mesh velocity of the MMPDE at positions ``x`` (boundary constraints applied)."""
        p = self.params.p
        g = self._merge_periodic(self.gradient(x, M))
        d = self.mesh.dim
        if self._vertex_cache is None or self._vertex_cache[0] is not Mv:
            detMv = np.linalg.det(Mv) if d > 1 else Mv[:, 0, 0]
            self._vertex_cache = (Mv, detMv ** ((p - 1.0) / 2.0))
        P = self._vertex_cache[1]
        v = -(P / self.params.tau)[:, None] * g
        return np.where(self.free, v, 0.0)

    def stiffness(self, x: np.ndarray, M: np.ndarray, Mv: np.ndarray, v0: np.ndarray | None = None,
                  iters: int | None = None, h: float | None = None) -> float:
        """Power-iteration estimate of the largest ``|eigenvalue|`` of ``d velocity / dx``.

        The probe vector is kept between calls so that successive estimates
        start close to the dominant mode.
        """
        v0 = self.velocity(x, M, Mv) if v0 is None else v0
        if self._probe is None:
            # deterministic sawtooth start, the mode explicit stepping amplifies first
            idx = np.arange(self.mesh.n_vertices)
            self._probe = np.where(self.free, ((-1.0) ** idx)[:, None] + 0.1 * np.cos(idx)[:, None], 0.0)
        w = self._probe
        if h is None:
            h = np.min(compute_geometry(self.mesh, x, check=False).height)
        lam = 0.0
        for _ in range(self.params.stiffness_iters if iters is None else iters):
            nrm = np.linalg.norm(w)
            if nrm == 0:
                break
            w = w / nrm
            eps = 1e-6 * h
            Jw = (self.velocity(x + eps * w, M, Mv) - v0) / eps
            lam = max(lam, float(np.linalg.norm(Jw)))
            w = Jw
        if np.linalg.norm(w) > 0:
            self._probe = w / np.linalg.norm(w)
        return lam

    def move(self, x: np.ndarray, M: np.ndarray, duration: float, Mv: np.ndarray | None = None) -> np.ndarray:
        """Integrate the MMPDE over ``duration`` starting from ``x``.

        The metric stays attached to the elements during the integration.
        Sub-steps are limited so that no vertex moves more than
        ``max_step_fraction`` of its smallest adjacent height and so that
        ``ds * |lambda_max| <= 1`` (no sign-alternating modes); a step that
        would invert an element is retried with half the size.  After
        ``max_substeps`` the relaxation stops even if ``duration`` is not
        exhausted.
        """
        prm = self.params
        if Mv is None:
            M, Mv = smooth_metric(self.mesh, x, M, prm.n_smooth)
        if duration <= 0:
            raise ValueError("duration must be positive")
        x = x.copy()
        el = self.mesh.elements
        remaining = duration
        base = duration / prm.n_sweeps
        steps = 0
        while remaining > 1e-14 * duration and steps < prm.max_substeps:
            geo = compute_geometry(self.mesh, x)
            vh = np.full(self.mesh.n_vertices, np.inf)
            for j in range(self.mesh.dim + 1):
                np.minimum.at(vh, el[:, j], geo.height.min(axis=1))
            v = self.velocity(x, M, Mv)
            ds_stable = np.inf
            if prm.stiffness_iters > 0:
                # full estimate first, then warm-started updates as the mesh deforms
                lam = self.stiffness(x, M, Mv, v, None if steps == 0 else 2, float(vh.min()))
                ds_stable = 1.0 / lam if lam > 0 else np.inf
            speed = np.linalg.norm(v, axis=1)
            with np.errstate(divide="ignore"):
                limit = np.min(np.where(speed > 0, prm.max_step_fraction * vh / speed, np.inf))
            ds = min(base, remaining, limit, ds_stable)
            for _ in range(prm.max_retries):
                trial = x + ds * v
                if np.all(compute_geometry(self.mesh, trial, check=False).measure > 0):
                    break
                ds *= 0.5
            else:
                raise GeometryError("mesh mover could not avoid element inversion")
            x = trial
            remaining -= ds
            steps += 1
        return x


def adapt_mesh(mover: MeshMover, positions: np.ndarray, metric: np.ndarray, duration: float) -> np.ndarray:
    """New positions after integrating the MMPDE for ``duration`` (connectivity unchanged)."""
    return mover.move(positions, metric, duration)


def nodal_velocity(x_old: np.ndarray, x_new: np.ndarray, dt_tilde: float) -> np.ndarray:
    if not dt_tilde > 0:
        raise ValueError("dt_tilde must be positive")
    return (x_new - x_old) / dt_tilde
