"""Time-step formulas for DG on moving meshes.

All coupled formulas share one building block: the per-element load

    S_K = (1/|K|) * sum_{e in dK} |e| * sum_G w_G alpha(x_G)

so that ``dt = C / max_K S_K``.  With alpha constant per edge this is the
edge-coupled condition; with alpha replaced by its global maximum it is the
classic edge-sum condition.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flux import AlphaPolicy
from .mesh import Geometry, SimplicialMesh


class UnboundedTimeStep(ValueError):
    """All alpha values vanish, so the formula imposes no bound."""


FORMULAS = ("classic_height", "classic_edge_sum", "coupled_edge", "weighted_quadrature", "two_mesh")

# (alpha_CFL, alpha_LF) pairings studied in the numerical experiments
PRESETS = {
    "ee": (AlphaPolicy.PER_EDGE, AlphaPolicy.PER_EDGE),
    "he": (AlphaPolicy.GLOBAL, AlphaPolicy.PER_EDGE),
    "hh": (AlphaPolicy.GLOBAL, AlphaPolicy.GLOBAL),
    "eh": (AlphaPolicy.PER_EDGE, AlphaPolicy.GLOBAL),
}
UNSTABLE_PRESETS = {"eh"}

# default CFL numbers for P1, P2, P3
DEFAULT_CFL = {0: 0.5, 1: 0.3, 2: 0.15, 3: 0.1}


@dataclass
class CflConfig:
    c_cfl: float
    cfl_policy: AlphaPolicy = AlphaPolicy.PER_EDGE
    lf_policy: AlphaPolicy = AlphaPolicy.PER_EDGE
    formula: str = "two_mesh"
    dt_max: float = np.inf

    def __post_init__(self):
        if not self.c_cfl > 0:
            raise ValueError("c_cfl must be positive")
        self.cfl_policy = AlphaPolicy.parse(self.cfl_policy)
        self.lf_policy = AlphaPolicy.parse(self.lf_policy)
        if self.formula not in FORMULAS:
            raise ValueError(f"unknown formula {self.formula!r}")

    @property
    def dominance(self) -> bool:
        """Whether the CFL aggregation scope contains the LF one."""
        return self.cfl_policy.rank >= self.lf_policy.rank

    @classmethod
    def from_preset(cls, name: str, c_cfl: float, allow_unstable: bool = False, **kw) -> "CflConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        if name in UNSTABLE_PRESETS and not allow_unstable:
            raise ValueError(f"preset {name!r} violates alpha_CFL >= alpha_LF; pass allow_unstable")
        cfl, lf = PRESETS[name]
        return cls(c_cfl, cfl, lf, **kw)


@dataclass
class DtReport:
    dt: float
    argmax_element: int
    element_load: np.ndarray = field(repr=False)
    dominance_ok: bool = True
    cap_reason: str = ""


def element_load(geo: Geometry, mesh: SimplicialMesh, alpha: np.ndarray, weights=None) -> np.ndarray:
    """Per-element ``S_K`` for a per-face ``(N_f,)`` or per-Gauss-point ``(N_f, Q)`` alpha table."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 2:
        w = np.full(alpha.shape[1], 1.0 / alpha.shape[1]) if weights is None else np.asarray(weights)
        if not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-14) or np.any(w < 0):
            raise ValueError("edge weights must be non-negative and sum to one")
        alpha = alpha @ w
    if alpha.shape != (mesh.n_faces,):
        raise ValueError("alpha table does not match the mesh faces")
    if np.any(alpha < 0):
        raise ValueError("alpha must be non-negative")
    per_face = alpha[mesh.element_faces]  # (N, d+1)
    return np.sum(geo.face_measure * per_face, axis=1) / geo.measure


def _report(load: np.ndarray, c_cfl: float) -> DtReport:
    kmax = int(np.argmax(load))
    if load[kmax] <= 0.0:
        raise UnboundedTimeStep("alpha vanishes on every edge")
    return DtReport(c_cfl / load[kmax], kmax, load)


def dt_classic_height(alpha_h: float, sigma_min: float, c_cfl: float) -> float:
    """``C * sigma_min / alpha_h``."""
    if sigma_min <= 0:
        raise ValueError("sigma_min must be positive")
    if alpha_h <= 0:
        raise UnboundedTimeStep("alpha_h is zero")
    return c_cfl * sigma_min / alpha_h


def edge_sum_factor(geo: Geometry) -> np.ndarray:
    """``(1/|K|) sum_e |e|`` per element."""
    return geo.face_measure.sum(axis=1) / geo.measure


def dt_classic_edge_sum(geo: Geometry, alpha_h: float, c_cfl: float) -> float:
    """``C / (alpha_h * max_K (1/|K|) sum_e |e|)``."""
    if alpha_h <= 0:
        raise UnboundedTimeStep("alpha_h is zero")
    return c_cfl / (alpha_h * edge_sum_factor(geo).max())


def dt_coupled(geo: Geometry, mesh: SimplicialMesh, alpha_edge: np.ndarray, c_cfl: float) -> DtReport:
    """``C / max_K sum_e alpha_e |e| / |K|`` for per-face ``alpha_e``."""
    alpha_edge = np.asarray(alpha_edge, dtype=float)
    if alpha_edge.ndim != 1:
        raise ValueError("dt_coupled expects one alpha per face")
    return _report(element_load(geo, mesh, alpha_edge), c_cfl)


def dt_weighted(geo: Geometry, mesh: SimplicialMesh, alpha_points: np.ndarray, weights) -> float:
    """L1-stability bound for P0 / explicit Euler (no CFL factor)."""
    alpha_points = np.atleast_2d(np.asarray(alpha_points, dtype=float))
    return _report(element_load(geo, mesh, alpha_points, weights), 1.0).dt


def dt_two_mesh(geo_old: Geometry, geo_new: Geometry, mesh: SimplicialMesh, alpha_old: np.ndarray,
                c_cfl: float, alpha_new: np.ndarray | None = None, weights=None) -> DtReport:
    """Two-mesh condition: the element load is the larger of the old- and new-mesh loads."""
    alpha_new = alpha_old if alpha_new is None else alpha_new
    load = np.maximum(
        element_load(geo_old, mesh, alpha_old, weights), element_load(geo_new, mesh, alpha_new, weights)
    )
    return _report(load, c_cfl)


def check_dominance(alpha_cfl: np.ndarray, alpha_lf: np.ndarray, rtol: float = 0.0):
    """Return ``(ok, witness)``; ``witness`` is the ``(face, gauss)`` index of the worst violation."""
    alpha_cfl = np.asarray(alpha_cfl, dtype=float)
    alpha_lf = np.asarray(alpha_lf, dtype=float)
    if alpha_cfl.shape != alpha_lf.shape:
        raise ValueError("alpha tables do not cover the same Gauss points")
    gap = alpha_cfl - alpha_lf * (1.0 - rtol)
    if np.all(gap >= 0):
        return True, None
    idx = np.unravel_index(int(np.argmin(gap)), gap.shape)
    return False, tuple(int(i) for i in idx)


def apply_caps(report: DtReport, t: float, t_end: float, next_output: float | None = None,
               dt_max: float = np.inf) -> DtReport:
    """Shorten ``report.dt`` so the step lands on the final or next output time."""
    reasons = []
    dt = report.dt
    if dt > dt_max:
        dt, reasons = dt_max, ["dt_max"]
    if next_output is not None and t + dt >= next_output and next_output < t_end:
        dt, reasons = next_output - t, ["output"]
    if t + dt >= t_end:
        dt, reasons = t_end - t, ["t_end"]
    report.dt = dt
    report.cap_reason = ";".join(reasons)
    return report
