"""L1-stability laboratory for the P0 / explicit-Euler moving-mesh scheme.

Linear advection on a periodic box, vertices oscillating sinusoidally with a
prescribed velocity, and the time step set at the sufficient bound
``dt = 1 / max_K (1/|K|) sum_e |e| sum_G w_G alpha_CFL`` (equality).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cfl as cflmod
from .cfl import PRESETS
from .flux import LinearAdvection
from .mesh import MovingMesh, SimplicialMesh, build_structured_mesh, compute_geometry
from .problems import advection_velocity
from .solver import Discretization

EXIT_OK, EXIT_UNSTABLE = 0, 2


def random_periodic_velocity(seed: int, d: int = 1, n_modes: int = 3, base: float = 1.0):
    """Smooth, periodic-in-space velocity with random Fourier content (positive in 1D)."""
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.1, 0.4, size=(n_modes, d)) / n_modes
    phase = rng.uniform(0, 2 * np.pi, size=(n_modes, d))
    freq = rng.uniform(0.5, 2.0, size=n_modes)

    def a(x, t):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, base)
        for m in range(n_modes):
            arg = 2 * np.pi * (m + 1) * x + phase[m]
            out = out + amp[m] * np.sin(arg) * np.cos(freq[m] * t)
        return out

    return LinearAdvection(a, d=d)


def oscillation_displacement(mesh: SimplicialMesh, amplitude: float):
    """Per-vertex displacement shape ``A h sin(2 pi x)`` (products over axes in 2D).

    The shape vanishes on every facet normal to its component, so boundary
    vertices slide tangentially and periodic partners move together.
    """
    x0 = mesh.vertices
    L = mesh.upper - mesh.lower
    s = np.sin(2 * np.pi * (x0 - mesh.lower) / L)
    h = np.min(L / np.array([len(np.unique(np.round(x0[:, i], 12))) - 1 for i in range(mesh.dim)]))
    if mesh.dim == 1:
        shape = s
    else:
        shape = np.column_stack([s[:, 0] * s[:, 1], s[:, 0] * s[:, 1]])
    return amplitude * h * shape


def sign_changing_initial(p):
    """Mean-zero data, so the L1 norm is not just the (conserved) mass."""
    u = np.sin(2 * np.pi * p[:, 0])
    if p.shape[1] > 1:
        u = u + 0.5 * np.cos(2 * np.pi * p[:, 1])
    return u[:, None]


@dataclass
class PairingResult:
    pairing: str
    dominance_ok: bool
    witness: tuple | None
    l1: np.ndarray = field(repr=False)
    dts: np.ndarray = field(repr=False)
    max_increase: float = 0.0
    monotone: bool = True
    asserted: bool = True

    @property
    def passed(self) -> bool:
        return self.monotone or not self.asserted


def run_pairing(mesh: SimplicialMesh, model, pairing: str, steps: int = 500, amplitude: float = 0.3,
                omega: float = 2 * np.pi, initial=None, slack: float = 1e-12) -> PairingResult:
    """P0/Euler run with ``dt`` at the sufficient bound for one ``(alpha_CFL, alpha_LF)`` pairing."""
    cfl_pol, lf_pol = PRESETS[pairing]
    disc = Discretization(mesh, model, 0)
    shape = oscillation_displacement(mesh, amplitude)
    x = mesh.vertices.copy()
    if initial is None:
        initial = sign_changing_initial
    from .dg import l2_project

    c = l2_project(initial, x, disc.space).coeffs
    geo = compute_geometry(mesh, x)
    l1 = [float(np.sum(geo.measure * np.abs(c[:, 0, 0])))]
    dts = []
    t = 0.0
    dom_ok, witness = True, None
    for _ in range(steps):
        vel = shape * omega * np.cos(omega * t)
        pts = disc.alpha_points(c, x, vel, t, geo)
        a_cfl = disc.aggregate(cfl_pol, pts)
        a_lf = disc.aggregate(lf_pol, pts)
        ok, w = cflmod.check_dominance(a_cfl, a_lf)
        if not ok and dom_ok:
            dom_ok, witness = False, w
        dt = cflmod.dt_weighted(geo, mesh, a_cfl, disc.weights_face)
        x_new = x + dt * vel
        c = disc.euler_step_p0(c, MovingMesh(mesh, x, x_new, t, t + dt), a_lf)
        x, t = x_new, t + dt
        geo = compute_geometry(mesh, x)
        l1.append(float(np.sum(geo.measure * np.abs(c[:, 0, 0]))))
        dts.append(dt)
    l1 = np.array(l1)
    inc = np.diff(l1)
    max_inc = float(inc.max()) if len(inc) else 0.0
    monotone = bool(np.all(inc <= slack * l1[0]))
    return PairingResult(pairing, dom_ok, witness, l1, np.array(dts), max_inc, monotone,
                         asserted=pairing not in cflmod.UNSTABLE_PRESETS)


@dataclass
class StabilityReport:
    results: list
    status: str = "completed"
    exit_code: int = EXIT_OK
    out_dir: Path | None = None

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)


def lab_mesh(velocity: str, n: int) -> SimplicialMesh:
    if velocity.endswith("2d"):
        return build_structured_mesh([0.0, 0.0], [1.0, 1.0], [n, n], "four_triangles_per_cell", [True, True])
    return build_structured_mesh([0.0], [1.0], [n], periodic=[True])


def lab_model(velocity: str, seed: int = 0):
    if velocity == "random1d":
        return random_periodic_velocity(seed, 1)
    if velocity == "random2d":
        return random_periodic_velocity(seed, 2)
    return advection_velocity(velocity)


def stability_lab(cfg, out_dir=None):
    """Run every requested pairing and write per-step L1 series plus a summary.

    ``problem: dt_comparison`` instead records a benchmark trajectory and
    replays its time steps for both aggregation scopes.
    """
    if cfg.problem == "dt_comparison":
        res, cmp_ = dt_comparison(cfg, out_dir)
        if res.exit_code == EXIT_OK and cmp_.ordered_fraction < 1.0:
            res.status, res.exit_code = "ordering_violated", EXIT_UNSTABLE
        return res
    n = cfg.cells[0] if cfg.n_cells else (64 if not cfg.velocity.endswith("2d") else 16)
    mesh = lab_mesh(cfg.velocity, n)
    model = lab_model(cfg.velocity, cfg.seed)
    results = []
    for pairing in cfg.pairings:
        if pairing in cflmod.UNSTABLE_PRESETS and not cfg.allow_unstable:
            raise ValueError(f"pairing {pairing!r} needs allow_unstable")
        results.append(run_pairing(mesh, model, pairing, cfg.steps, cfg.amplitude))
    rep = StabilityReport(results)
    if not rep.ok:
        rep.status, rep.exit_code = "unstable", EXIT_UNSTABLE
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        from .config import dump_config

        dump_config(cfg, out / "config.yaml")
        with open(out / "l1_series.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write("# mmdg-v1 l1_series\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step"] + [r.pairing for r in results])
            for i in range(len(results[0].l1)):
                w.writerow([i] + [repr(float(r.l1[i])) for r in results])
        summary = {
            r.pairing: {
                "dominance_ok": r.dominance_ok,
                "witness": list(r.witness) if r.witness else None,
                "monotone": r.monotone,
                "asserted": r.asserted,
                "max_increase": r.max_increase,
                "l1_initial": float(r.l1[0]),
                "l1_final": float(r.l1[-1]),
            }
            for r in results
        }
        (out / "report.json").write_text(
            json.dumps({"schema": "mmdg-v1", "status": rep.status, "pairings": summary}, indent=2, sort_keys=True),
            encoding="utf-8",
        )
        rep.out_dir = out
    return rep


# ---------------------------------------------------------------- dt comparison
@dataclass
class DtComparison:
    dt_edge: np.ndarray
    dt_global: np.ndarray

    @property
    def ordered_fraction(self) -> float:
        return float(np.mean(self.dt_edge >= self.dt_global)) if len(self.dt_edge) else 1.0

    @property
    def max_relative_gap(self) -> float:
        return float(np.max((self.dt_edge - self.dt_global) / self.dt_global))


def replay_dt(disc: Discretization, x_old, x_new, alpha_old, alpha_new, c_cfl: float) -> DtComparison:
    """Recompute the two-mesh step for both aggregation scopes from stored pointwise tables.

    Every step reuses the same mesh pair and alpha tables, so the only difference
    between the two series is how alpha is aggregated before the element sums.
    """
    mesh = disc.mesh
    out = {cflmod.AlphaPolicy.PER_EDGE: [], cflmod.AlphaPolicy.GLOBAL: []}
    for xo, xn, ao, an in zip(x_old, x_new, alpha_old, alpha_new):
        geo_o, geo_n = compute_geometry(mesh, xo), compute_geometry(mesh, xn)
        for pol, dts in out.items():
            rep = cflmod.dt_two_mesh(geo_o, geo_n, mesh, disc.aggregate(pol, ao), c_cfl,
                                   disc.aggregate(pol, an), disc.weights_face)
            dts.append(rep.dt)
    return DtComparison(np.array(out[cflmod.AlphaPolicy.PER_EDGE]), np.array(out[cflmod.AlphaPolicy.GLOBAL]))


def dt_comparison(cfg, out_dir=None, base_problem: str = "burgers1d"):
    """Record one MMDG trajectory with pointwise alpha tables, then replay both scopes."""
    from .config import ExperimentConfig
    from .runner import run_experiment

    base = ExperimentConfig(base_problem, k=cfg.k, preset=cfg.preset, c_cfl=cfg.c_cfl, n_cells=cfg.n_cells,
                            t_end=cfg.t_end, outputs=cfg.outputs, moving=cfg.moving, limiter=cfg.limiter,
                            mmpde=cfg.mmpde, record_tables=True)
    res = run_experiment(base, out_dir)
    recs = res.records
    cmp_ = replay_dt(res.disc, [r.x_old for r in recs], [r.x_new for r in recs],
                     [r.alpha_pts_old for r in recs], [r.alpha_pts_new for r in recs], base.cfl_number)
    if out_dir is not None:
        with open(Path(out_dir) / "dt_comparison.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write("# mmdg-v1 dt_comparison\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "dt_edge", "dt_global"])
            for i, (a, b) in enumerate(zip(cmp_.dt_edge, cmp_.dt_global)):
                w.writerow([i, repr(float(a)), repr(float(b))])
    return res, cmp_
