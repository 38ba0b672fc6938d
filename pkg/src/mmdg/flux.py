"""Conservation laws, the mesh-modified flux and Lax-Friedrichs fluxes.

Every model works on batched states ``U[..., m]`` with matching point,
normal and mesh-velocity arrays ``[..., d]``.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

GAMMA = 1.4


class StateError(ArithmeticError):
    """Raised when a state is not physical (e.g. negative density or pressure)."""

    def __init__(self, message: str, where=None):
        super().__init__(message)
        self.where = where


class FluxModel:
    m: int = 1
    d: int = 1
    name: str = "model"

    def flux(self, U: np.ndarray, x: np.ndarray, t: float) -> np.ndarray:
        """Physical flux ``F(U, x, t)``, shape ``(..., m, d)``."""
        raise NotImplementedError

    def max_abs_eig(self, U, x, t, n, xdot) -> np.ndarray:
        """Spectral radius of ``d/dU [(F - U xdot) . n]``."""
        raise NotImplementedError

    def check_state(self, U: np.ndarray) -> None:
        pass

    def modified_flux(self, U, x, t, xdot) -> np.ndarray:
        """``H = F - U (x) xdot``, shape ``(..., m, d)``."""
        return self.flux(U, x, t) - U[..., :, None] * np.asarray(xdot)[..., None, :]

    def normal_flux(self, U, x, t, n, xdot) -> np.ndarray:
        return np.einsum("...md,...d->...m", self.modified_flux(U, x, t, xdot), n)


class LinearAdvection(FluxModel):
    """``F = a(x, t) U`` for a constant vector or a callable velocity field."""

    name = "linear_advection"

    def __init__(self, velocity, d: int | None = None):
        self._velocity = velocity
        if callable(velocity):
            if d is None:
                raise ValueError("dimension required for a callable velocity")
            self.d = d
        else:
            self.d = int(np.atleast_1d(velocity).size)
        self.m = 1

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if callable(self._velocity):
            return np.asarray(self._velocity(x, t), dtype=float).reshape(x.shape)
        return np.broadcast_to(np.atleast_1d(np.asarray(self._velocity, dtype=float)), x.shape)

    def flux(self, U, x, t):
        return U[..., :, None] * self.velocity(x, t)[..., None, :]

    def eigenvalue(self, x, t, n, xdot) -> np.ndarray:
        return np.einsum("...d,...d->...", self.velocity(x, t) - xdot, n)

    def max_abs_eig(self, U, x, t, n, xdot):
        return np.abs(self.eigenvalue(x, t, n, xdot))


class Burgers(FluxModel):
    """``F = (u^2/2, ..., u^2/2)`` in ``d`` dimensions."""

    name = "burgers"

    def __init__(self, d: int = 1):
        self.d = d
        self.m = 1

    def flux(self, U, x, t):
        half = 0.5 * U[..., :, None] ** 2
        return np.broadcast_to(half, U.shape + (self.d,)).copy()

    def max_abs_eig(self, U, x, t, n, xdot):
        u = U[..., 0]
        return np.abs(u * n.sum(axis=-1) - np.einsum("...d,...d->...", xdot, n))


class Euler(FluxModel):
    """Compressible Euler equations with an ideal-gas law (``gamma = 1.4``)."""

    name = "euler"

    def __init__(self, d: int = 1, gamma: float = GAMMA):
        self.d = d
        self.m = d + 2
        self.gamma = gamma

    def primitive(self, U):
        """Return ``rho, velocity[..., d], P``."""
        rho = U[..., 0]
        vel = U[..., 1 : 1 + self.d] / rho[..., None]
        kinetic = 0.5 * rho * np.sum(vel**2, axis=-1)
        P = (self.gamma - 1.0) * (U[..., -1] - kinetic)
        return rho, vel, P

    def conservative(self, rho, vel, P):
        rho = np.asarray(rho, dtype=float)
        vel = np.asarray(vel, dtype=float).reshape(rho.shape + (self.d,))
        P = np.asarray(P, dtype=float)
        E = P / (self.gamma - 1.0) + 0.5 * rho * np.sum(vel**2, axis=-1)
        return np.concatenate([rho[..., None], rho[..., None] * vel, E[..., None]], axis=-1)

    def check_state(self, U):
        rho, _, P = self.primitive(U)
        bad = ~((rho > 0.0) & (P > 0.0))
        if np.any(bad):
            idx = np.unravel_index(int(np.argmax(bad)), bad.shape)
            raise StateError(
                f"non-physical Euler state rho={rho[idx]:.4g}, P={P[idx]:.4g}", where=idx
            )

    def sound_speed(self, U):
        rho, _, P = self.primitive(U)
        return np.sqrt(self.gamma * P / rho)

    def flux(self, U, x, t):
        self.check_state(U)
        rho, vel, P = self.primitive(U)
        E = U[..., -1]
        F = np.empty(U.shape + (self.d,))
        F[..., 0, :] = U[..., 1 : 1 + self.d]
        for i in range(self.d):
            F[..., 1 + i, :] = rho[..., None] * vel[..., i : i + 1] * vel
            F[..., 1 + i, i] += P
        F[..., -1, :] = (E + P)[..., None] * vel
        return F

    def max_abs_eig(self, U, x, t, n, xdot):
        self.check_state(U)
        rho, vel, P = self.primitive(U)
        c = np.sqrt(self.gamma * P / rho)
        return np.abs(np.einsum("...d,...d->...", vel - xdot, n)) + c


class AlphaPolicy(str, Enum):
    """Aggregation scope of the alpha function."""

    POINTWISE = "pointwise"
    PER_EDGE = "per_edge"
    PER_ELEMENT = "per_element"
    GLOBAL = "global"

    @property
    def rank(self) -> int:
        return ["pointwise", "per_edge", "per_element", "global"].index(self.value)

    @classmethod
    def parse(cls, value) -> "AlphaPolicy":
        aliases = {"p": "pointwise", "e": "per_edge", "edge": "per_edge", "k": "per_element",
                   "element": "per_element", "h": "global"}
        if isinstance(value, cls):
            return value
        return cls(aliases.get(value, value))


def alpha_pointwise(model: FluxModel, u_int, u_ext, x, t, n, xdot) -> np.ndarray:
    """Alpha at each Gauss point: max spectral radius over interior and exterior states."""
    a_int = model.max_abs_eig(u_int, x, t, n, xdot)
    a_ext = model.max_abs_eig(u_ext, x, t, n, xdot)
    return np.maximum(a_int, a_ext)


def alpha_aggregate(policy, alpha: np.ndarray, face_elements: np.ndarray | None = None,
                    element_faces: np.ndarray | None = None) -> np.ndarray:
    """Aggregate a ``(N_f, Q)`` pointwise table according to ``policy``.

    The result has the same shape so that it can be looked up per Gauss point.
    The per-element value on a face is the larger of its two elements' maxima,
    which keeps the flux single-valued.
    """
    policy = AlphaPolicy.parse(policy)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size == 0:
        raise ValueError("empty alpha table")
    if policy is AlphaPolicy.POINTWISE:
        return alpha.copy()
    per_face = alpha.max(axis=1)
    if policy is AlphaPolicy.PER_EDGE:
        return np.repeat(per_face[:, None], alpha.shape[1], axis=1)
    if policy is AlphaPolicy.GLOBAL:
        return np.full_like(alpha, per_face.max())
    if face_elements is None or element_faces is None:
        raise ValueError("per_element aggregation needs connectivity")
    per_elem = per_face[element_faces].max(axis=1)
    right = np.where(face_elements[:, 1] >= 0, face_elements[:, 1], face_elements[:, 0])
    val = np.maximum(per_elem[face_elements[:, 0]], per_elem[right])
    return np.repeat(val[:, None], alpha.shape[1], axis=1)


def lf_flux(model: FluxModel, u_int, u_ext, x, t, n, xdot, alpha_lf) -> np.ndarray:
    """Lax-Friedrichs flux of ``H . n`` with dissipation ``alpha_lf``."""
    alpha_lf = np.asarray(alpha_lf, dtype=float)
    if np.any(alpha_lf < 0):
        raise ValueError("alpha_LF must be non-negative")
    h_int = model.normal_flux(u_int, x, t, n, xdot)
    h_ext = model.normal_flux(u_ext, x, t, n, xdot)
    return 0.5 * (h_int + h_ext - alpha_lf[..., None] * (u_ext - u_int))


def modified_flux(model: FluxModel, U, x, t, xdot) -> np.ndarray:
    return model.modified_flux(np.asarray(U, dtype=float), x, t, xdot)
