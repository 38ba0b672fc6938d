"""Quasi-Lagrange moving-mesh DG discretisation and time stepping.

The unknowns advanced in time are ``w_K = |K(t)| * c_K`` (mass-weighted modal
coefficients); the orthonormal basis makes the mass matrix ``|K(t)| I`` so
every stage is an explicit update followed by a division by the element
measure at the stage time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import cfl as cflmod
from .cfl import CflConfig, DtReport
from .dg import DGField, DGSpace
from .flux import AlphaPolicy, FluxModel, StateError, alpha_aggregate, alpha_pointwise, lf_flux
from .limiter import Limiter, LimiterSpec
from .mesh import Geometry, GeometryError, MovingMesh, SimplicialMesh, compute_geometry

log = logging.getLogger(__name__)


class InstabilityError(RuntimeError):
    """The run cannot continue: time-step collapse or a non-physical state."""

    def __init__(self, reason: str, t: float, step: int):
        super().__init__(f"{reason} (t={t:.6g}, step={step})")
        self.reason = reason
        self.t = t
        self.step = step


@dataclass
class SolverConfig:
    k: int
    cfl: CflConfig
    limiter: LimiterSpec = field(default_factory=lambda: LimiterSpec("none"))
    integrator: str = "ssp_rk3"
    dt_min: float = 1e-13

    def __post_init__(self):
        if self.integrator not in ("ssp_rk3", "euler_p0"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.integrator == "euler_p0" and self.k != 0:
            raise ValueError("euler_p0 requires k = 0")


class Discretization:
    """Residual evaluation for one mesh, model and polynomial degree."""

    def __init__(self, mesh: SimplicialMesh, model: FluxModel, k: int, limiter: LimiterSpec | None = None):
        self.mesh = mesh
        self.model = model
        self.space = DGSpace(mesh, k, model.m)
        self.limiter = Limiter(self.space, model, limiter or LimiterSpec("none"))
        fe = mesh.face_elements
        nf, n = mesh.n_faces, mesh.n_elements
        interior = fe[:, 1] >= 0
        self.boundary = ~interior
        rows = np.arange(nf)
        self.scatter_left = sp.csr_matrix((np.ones(nf), (fe[:, 0], rows)), shape=(n, nf))
        self.scatter_right = sp.csr_matrix(
            (np.ones(interior.sum()), (fe[interior, 1], rows[interior])), shape=(n, nf)
        )
        self.weights_face = self.space.face_quad.weights
        self.weights_elem = self.space.quad.weights

    # ------------------------------------------------------------------ alpha
    def alpha_points(self, coeffs, positions, velocities, t, geo: Geometry | None = None) -> np.ndarray:
        """Pointwise alpha at every face Gauss point, ``(N_f, Q)``."""
        geo = geo or compute_geometry(self.mesh, positions)
        sp_ = self.space
        u_int, u_ext = sp_.traces(coeffs)
        n, _ = sp_.face_normals(geo)
        xf = sp_.face_points(positions)
        vf = sp_.face_velocity(velocities)
        nq = np.broadcast_to(n[:, None, :], xf.shape)
        return alpha_pointwise(self.model, u_int, u_ext, xf, t, nq, vf)

    def aggregate(self, policy, alpha_pts: np.ndarray) -> np.ndarray:
        return alpha_aggregate(policy, alpha_pts, self.mesh.face_elements, self.mesh.element_faces)

    # ------------------------------------------------------------------ residual
    def residual(self, coeffs, positions, velocities, t, alpha_lf, return_boundary: bool = False):
        """Time derivative of ``|K| * coeffs`` with geometry taken at ``positions``.

        Implements ``|K| sum_G w_G H . grad(phi) - sum_e |e| sum_G w_G phi Hhat``.
        """
        sp_ = self.space
        mesh = self.mesh
        geo = compute_geometry(mesh, positions)
        n_el, m, nb = coeffs.shape
        # volume term
        if nb > 1:
            uq = sp_.evaluate_quad(coeffs)
            xq = sp_.element_points(positions)
            vq = sp_.element_velocity(velocities)
            H = self.model.modified_flux(uq, xq, t, vq)  # (N, P, m, d)
            grads = sp_.physical_gradients(geo)  # (N, P, nb, d)
            Hw = H * (self.weights_elem * geo.measure[:, None])[:, :, None, None]
            P, d = H.shape[1], H.shape[3]
            vol = Hw.transpose(0, 2, 1, 3).reshape(n_el, m, P * d) @ grads.transpose(0, 1, 3, 2).reshape(n_el, P * d, nb)
        else:
            vol = np.zeros_like(coeffs)
        # face term
        u_int, u_ext = sp_.traces(coeffs)
        normal, fmeas = sp_.face_normals(geo)
        xf = sp_.face_points(positions)
        vf = sp_.face_velocity(velocities)
        nq = np.broadcast_to(normal[:, None, :], xf.shape)
        hhat = lf_flux(self.model, u_int, u_ext, xf, t, nq, vf, alpha_lf)  # (N_f, Q, m)
        wq = self.weights_face * 1.0
        hw = (hhat * (wq * fmeas[:, None])[:, :, None]).transpose(0, 2, 1)
        left = hw @ sp_.phi_left
        right = hw @ sp_.phi_right
        nf = mesh.n_faces
        res = vol - (self.scatter_left @ left.reshape(nf, -1)).reshape(n_el, m, nb)
        res += (self.scatter_right @ right.reshape(nf, -1)).reshape(n_el, m, nb)
        if return_boundary:
            # outflow through transmissive faces, per component
            bflux = np.einsum("q,fqm->fm", wq, hhat[self.boundary]) * fmeas[self.boundary, None]
            return res, bflux.sum(axis=0)
        return res

    # ------------------------------------------------------------------ steppers
    def euler_step_p0(self, coeffs, moving: MovingMesh, alpha_lf):
        """``|K^{n+1}| U^{n+1} = |K^n| U^n - dt sum_e |e| sum_G w_G Hhat``."""
        if self.space.k != 0:
            raise ValueError("euler_step_p0 needs k = 0")
        dt = moving.dt
        if not dt > 0:
            raise ValueError("dt must be positive")
        geo0 = compute_geometry(self.mesh, moving.x_old)
        geo1 = compute_geometry(self.mesh, moving.x_new)
        w = geo0.measure[:, None, None] * coeffs
        res = self.residual(coeffs, moving.x_old, moving.velocities, moving.t_n, alpha_lf)
        return (w + dt * res) / geo1.measure[:, None, None]

    def ssp_rk3_step(self, coeffs, moving: MovingMesh, alpha_lf, with_outflow: bool = False):
        """Shu-Osher SSP-RK3 on the mass-weighted coefficients of a moving mesh.

        Stages use the mesh at ``t_n``, ``t_{n+1}`` and ``t_n + dt/2``; the
        alpha table stays frozen and the limiter runs after each stage.
        """
        t0, dt = moving.t_n, moving.dt
        vel = moving.velocities
        x0 = moving.x_old
        x1 = moving.x_new
        xh = moving.positions_at(t0 + 0.5 * dt)
        m0 = compute_geometry(self.mesh, x0).measure[:, None, None]
        m1 = compute_geometry(self.mesh, x1).measure[:, None, None]
        mh = compute_geometry(self.mesh, xh).measure[:, None, None]
        lim = self.limiter

        w0 = m0 * coeffs
        r, b1 = self.residual(coeffs, x0, vel, t0, alpha_lf, return_boundary=True)
        c1 = lim((w0 + dt * r) / m1, x1)
        self._check(c1)
        r, b2 = self.residual(c1, x1, vel, moving.t_next, alpha_lf, return_boundary=True)
        w2 = 0.75 * w0 + 0.25 * (m1 * c1 + dt * r)
        c2 = lim(w2 / mh, xh)
        self._check(c2)
        r, b3 = self.residual(c2, xh, vel, t0 + 0.5 * dt, alpha_lf, return_boundary=True)
        w3 = w0 / 3.0 + 2.0 / 3.0 * (mh * c2 + dt * r)
        c3 = lim(w3 / m1, x1)
        self._check(c3)
        if with_outflow:
            return c3, dt * (b1 / 6.0 + b2 / 6.0 + 2.0 * b3 / 3.0)
        return c3

    def _check(self, coeffs):
        if not np.all(np.isfinite(coeffs)):
            raise StateError("non-finite coefficients")
        self.model.check_state(coeffs[:, :, 0])

    def apply_limiter(self, coeffs, positions):
        return self.limiter(coeffs, positions)


# ---------------------------------------------------------------------- moving-mesh time stepping
@dataclass
class SolverState:
    coeffs: np.ndarray
    positions: np.ndarray
    t: float = 0.0
    step: int = 0
    outflow: np.ndarray | None = None  # time-integrated boundary flux per component


@dataclass
class StepRecord:
    step: int
    t: float
    dt: float
    dt_tilde: float
    argmax_element: int
    dominance_ok: bool
    cap_reason: str
    l1: float
    mass: float
    min_measure: float
    min_sigma: float
    # pointwise alpha (with mesh velocity) on the old and target meshes, for replay
    alpha_pts_old: np.ndarray | None = field(default=None, repr=False)
    alpha_pts_new: np.ndarray | None = field(default=None, repr=False)
    x_old: np.ndarray | None = field(default=None, repr=False)
    x_new: np.ndarray | None = field(default=None, repr=False)


MeshHook = Callable[[SolverState, float], np.ndarray]


class MMDGSolver:
    """Adaptive moving-mesh DG driver (mesh adaptation then physical step).

    ``adapt`` maps ``(state, dt_tilde)`` to the MMPDE target positions; when it
    is ``None`` the mesh stays fixed.
    """

    def __init__(self, disc: Discretization, config: SolverConfig, adapt: MeshHook | None = None,
                 record_tables: bool = False):
        self.disc = disc
        self.config = config
        self.adapt = adapt
        self.record_tables = record_tables

    def time_step(self, state: SolverState, velocities: np.ndarray, x_target: np.ndarray,
                  alpha_old_pts: np.ndarray) -> tuple[DtReport, np.ndarray, np.ndarray]:
        """Two-mesh time step with alpha evaluated on both meshes.

        Returns the report, the aggregated old-mesh table and the pointwise
        new-mesh table.
        """
        d = self.disc
        cfg = self.config.cfl
        geo_old = compute_geometry(d.mesh, state.positions)
        geo_new = compute_geometry(d.mesh, x_target)
        a_old = d.aggregate(cfg.cfl_policy, alpha_old_pts)
        a_new_pts = d.alpha_points(state.coeffs, x_target, velocities, state.t, geo_new)
        a_new = d.aggregate(cfg.cfl_policy, a_new_pts)
        w = d.weights_face
        if cfg.formula == "two_mesh":
            rep = cflmod.dt_two_mesh(geo_old, geo_new, d.mesh, a_old, cfg.c_cfl, a_new, w)
        else:
            rep = cflmod._report(cflmod.element_load(geo_old, d.mesh, a_old, w), cfg.c_cfl)
        return rep, a_old, a_new_pts

    def advance(self, state: SolverState, t_end: float, next_output: float | None = None) -> StepRecord:
        """One step of the moving-mesh algorithm; updates ``state`` in place.

        Raises
        ------
        InstabilityError
            On non-physical states, mesh tangling or a collapsed time step.
        """
        try:
            return self._advance(state, t_end, next_output)
        except StateError as exc:
            raise InstabilityError(f"non-physical state: {exc}", state.t, state.step) from exc

    def _advance(self, state: SolverState, t_end: float, next_output: float | None) -> StepRecord:
        d = self.disc
        cfg = self.config
        c = cfg.cfl
        mesh = d.mesh
        x_n = state.positions
        zero = np.zeros_like(x_n)
        geo_n = compute_geometry(mesh, x_n)

        # step 1.1: time step on the fixed mesh, alpha from F . n only
        a_fixed_pts = d.alpha_points(state.coeffs, x_n, zero, state.t, geo_n)
        a_fixed = d.aggregate(c.cfl_policy, a_fixed_pts)
        try:
            rep_t = cflmod._report(cflmod.element_load(geo_n, mesh, a_fixed, d.weights_face), c.c_cfl)
        except cflmod.UnboundedTimeStep:
            rep_t = DtReport(c.dt_max, 0, np.zeros(mesh.n_elements))
        rep_t = cflmod.apply_caps(rep_t, state.t, t_end, next_output, c.dt_max)
        dt_tilde = rep_t.dt

        # steps 1.2-1.4: metric, MMPDE target, nodal velocity
        if self.adapt is not None:
            try:
                x_target = self.adapt(state, dt_tilde)
            except StateError as exc:
                raise InstabilityError(f"non-physical state in metric: {exc}", state.t, state.step) from exc
            except GeometryError as exc:
                raise InstabilityError(f"mesh adaptation failed: {exc}", state.t, state.step) from exc
            vel = (x_target - x_n) / dt_tilde
        else:
            x_target = x_n
            vel = zero

        # step 1.5: two-mesh time step with the mesh velocity
        a_old_pts = a_fixed_pts if self.adapt is None else d.alpha_points(state.coeffs, x_n, vel, state.t, geo_n)
        try:
            rep, a_old, a_new_pts = self.time_step(state, vel, x_target, a_old_pts)
        except cflmod.UnboundedTimeStep:
            rep = DtReport(c.dt_max, 0, np.zeros(mesh.n_elements))
            a_old = d.aggregate(c.cfl_policy, a_old_pts)
            a_new_pts = a_old_pts
        rep = cflmod.apply_caps(rep, state.t, t_end, next_output, c.dt_max)

        # step 1.6: realised mesh; shrink dt if extrapolating past the target would tangle
        dt = rep.dt
        for _ in range(60):
            x_next = x_n + dt * vel
            if np.all(compute_geometry(mesh, x_next, check=False).measure > 0):
                break
            dt *= 0.5
            rep.cap_reason = (rep.cap_reason + ";tangle").lstrip(";")
        else:
            raise InstabilityError("mesh tangling", state.t, state.step)
        if dt < cfg.dt_min:
            raise InstabilityError(f"time step collapsed to {dt:.3e}", state.t, state.step)

        alpha_lf = d.aggregate(c.lf_policy, a_old_pts)
        ok, _ = cflmod.check_dominance(a_old, alpha_lf)

        # step 2: physical step from t_n to t_n + dt; capped steps land exactly on their target
        t_next = state.t + dt
        if rep.cap_reason == "t_end":
            t_next = t_end
        elif rep.cap_reason == "output":
            t_next = next_output
        moving = MovingMesh(mesh, x_n, x_next, state.t, t_next)
        try:
            if cfg.integrator == "euler_p0":
                new = d.euler_step_p0(state.coeffs, moving, alpha_lf)
                outflow = np.zeros(d.model.m)
            else:
                new, outflow = d.ssp_rk3_step(state.coeffs, moving, alpha_lf, with_outflow=True)
        except StateError as exc:
            raise InstabilityError(f"non-physical state: {exc}", state.t, state.step) from exc
        except GeometryError as exc:
            raise InstabilityError(f"geometry failure: {exc}", state.t, state.step) from exc

        rec = StepRecord(
            step=state.step, t=state.t, dt=dt, dt_tilde=dt_tilde, argmax_element=rep.argmax_element,
            dominance_ok=bool(ok), cap_reason=rep.cap_reason, l1=0.0, mass=0.0, min_measure=0.0,
            min_sigma=0.0,
        )
        if self.record_tables:
            rec.alpha_pts_old, rec.alpha_pts_new = a_old_pts, a_new_pts
            rec.x_old, rec.x_new = x_n.copy(), x_target.copy()
        state.coeffs = new
        state.positions = x_next
        state.t = moving.t_next
        state.step += 1
        state.outflow = outflow if state.outflow is None else state.outflow + outflow
        geo = compute_geometry(mesh, x_next)
        rec.l1 = float(np.sum(geo.measure * np.abs(new[:, 0, 0])))
        rec.mass = float(np.sum(geo.measure * new[:, 0, 0]))
        rec.min_measure = float(geo.measure.min())
        rec.min_sigma = geo.sigma_min
        return rec


def total_mass(coeffs: np.ndarray, positions: np.ndarray, mesh: SimplicialMesh) -> np.ndarray:
    """``sum_K |K| * average`` per component."""
    geo = compute_geometry(mesh, positions)
    return np.einsum("n,nm->m", geo.measure, coeffs[:, :, 0])


def l1_norm(coeffs: np.ndarray, positions: np.ndarray, mesh: SimplicialMesh) -> float:
    geo = compute_geometry(mesh, positions)
    return float(np.sum(geo.measure[:, None] * np.abs(coeffs[:, :, 0])))


def initial_state(disc: Discretization, f, positions: np.ndarray | None = None, limit: bool = True) -> SolverState:
    from .dg import l2_project

    x = disc.mesh.vertices.copy() if positions is None else positions.copy()
    field_ = l2_project(f, x, disc.space)
    coeffs = field_.coeffs
    if limit:
        coeffs = disc.apply_limiter(coeffs, x)
    return SolverState(coeffs, x, 0.0, 0, np.zeros(disc.model.m))
