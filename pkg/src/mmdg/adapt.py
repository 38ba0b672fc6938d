"""Mesh-adaptation hook for the time loop (metric from the solution, then MMPDE)."""
from __future__ import annotations

import numpy as np

from .flux import Euler, FluxModel
from .mesh import SimplicialMesh
from .mmpde import MeshMover, MmpdeParams, element_patches, intersect_normalized, metric_for_field


def entropy(model: Euler, averages: np.ndarray) -> np.ndarray:
    """``S = ln(P rho^-gamma)`` from conservative cell averages."""
    model.check_state(averages)
    rho, _, P = model.primitive(averages)
    return np.log(P * rho ** (-model.gamma))


class MetricAdaptation:
    """Callable ``(state, dt_tilde) -> target positions`` for the solver.

    ``source`` selects the adaptation variable: ``"u"`` uses the first
    component, ``"rho_entropy"`` intersects the normalized density and
    entropy metrics.
    """

    def __init__(self, mesh: SimplicialMesh, model: FluxModel, source: str = "u",
                 params: MmpdeParams | None = None):
        if source not in ("u", "rho_entropy"):
            raise ValueError(f"unknown metric source {source!r}")
        if source == "rho_entropy" and not isinstance(model, Euler):
            raise ValueError("rho_entropy metric needs the Euler model")
        self.mesh = mesh
        self.model = model
        self.source = source
        self.params = params or MmpdeParams()
        self.mover = MeshMover(mesh, self.params)
        self.patches = element_patches(mesh)

    def metric(self, coeffs: np.ndarray, positions: np.ndarray) -> np.ndarray:
        avg = coeffs[:, :, 0]
        floor = self.params.beta_floor
        if self.source == "u":
            return metric_for_field(avg[:, 0], positions, self.mesh, self.patches, floor)
        S = entropy(self.model, avg)
        m_rho = metric_for_field(avg[:, 0], positions, self.mesh, self.patches, floor)
        m_s = metric_for_field(S, positions, self.mesh, self.patches, floor)
        return intersect_normalized(m_s, m_rho)

    def __call__(self, state, dt_tilde: float) -> np.ndarray:
        M = self.metric(state.coeffs, state.positions)
        return self.mover.move(state.positions, M, dt_tilde)
