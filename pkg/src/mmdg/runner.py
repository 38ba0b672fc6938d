"""Run the benchmark problems and write their artifacts; offline verification."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cfl as cflmod
from .adapt import MetricAdaptation
from .cfl import CflConfig
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .dg import DGField, write_field
from .mesh import SimplicialMesh, build_structured_mesh, compute_geometry, write_mesh_block
from .problems import PROBLEMS, get_problem
from .solver import Discretization, InstabilityError, MMDGSolver, SolverConfig, initial_state, total_mass

log = logging.getLogger(__name__)

SCHEMA = "mmdg-v1"
DT_COLUMNS = ["step", "t", "dt", "dt_tilde", "argmax_element", "dominance_ok", "cap_reason"]
DIAG_COLUMNS = ["step", "t", "l1", "mass", "min_measure", "min_sigma"]

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE = 0, 1, 2


@dataclass
class RunResult:
    status: str  # "completed" or "unstable"
    exit_code: int
    steps: int
    t_final: float
    out_dir: Path | None
    reason: str = ""
    records: list = field(default_factory=list, repr=False)
    state: object = field(default=None, repr=False)
    mesh: SimplicialMesh | None = field(default=None, repr=False)
    disc: Discretization | None = field(default=None, repr=False)
    elapsed: float = 0.0


def build_problem_mesh(cfg: ExperimentConfig) -> SimplicialMesh:
    prob = get_problem(cfg.problem)
    pattern = "interval" if prob.dim == 1 else "four_triangles_per_cell"
    return build_structured_mesh(prob.lower, prob.upper, cfg.cells, pattern, cfg.periodic())


def build_solver(cfg: ExperimentConfig, mesh: SimplicialMesh | None = None):
    """Assemble discretisation, solver and adaptation hook for a problem config."""
    if cfg.problem not in PROBLEMS:
        raise ConfigError(f"{cfg.problem!r} is not a time-dependent benchmark; use the stability lab")
    prob = get_problem(cfg.problem)
    mesh = mesh or build_problem_mesh(cfg)
    model = prob.model()
    lim = cfg.limiter_spec()
    disc = Discretization(mesh, model, cfg.k, lim)
    cflc = CflConfig.from_preset(cfg.preset, cfg.cfl_number, allow_unstable=cfg.allow_unstable)
    integrator = "euler_p0" if cfg.k == 0 else "ssp_rk3"
    scfg = SolverConfig(cfg.k, cflc, lim, integrator, cfg.dt_min)
    hook = MetricAdaptation(mesh, model, prob.metric_source, cfg.mmpde_params()) if cfg.moving else None
    return disc, MMDGSolver(disc, scfg, hook, record_tables=cfg.record_tables)


def _fmt(v: float) -> str:
    return repr(float(v))


class _Writer:
    """Serialises all run artifacts into ``out_dir``."""

    def __init__(self, out_dir: Path, cfg: ExperimentConfig, mesh: SimplicialMesh):
        self.out = out_dir
        self.mesh = mesh
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "snapshots").mkdir(exist_ok=True)
        dump_config(cfg, out_dir / "config.yaml")
        self.dt_fh = open(out_dir / "dt.csv", "w", newline="", encoding="utf-8")
        self.dt_fh.write(f"# {SCHEMA} dt\n")
        self.dt_csv = csv.writer(self.dt_fh, lineterminator="\n")
        self.dt_csv.writerow(DT_COLUMNS)
        self.diag_fh = open(out_dir / "l1_mass.csv", "w", newline="", encoding="utf-8")
        self.diag_fh.write(f"# {SCHEMA} l1_mass\n")
        self.diag_csv = csv.writer(self.diag_fh, lineterminator="\n")
        self.diag_csv.writerow(DIAG_COLUMNS)
        self.sp_fh = open(out_dir / "spacing.csv", "w", newline="", encoding="utf-8")
        self.sp_fh.write(f"# {SCHEMA} spacing\n")
        self.sp_csv = csv.writer(self.sp_fh, lineterminator="\n")
        self.sp_csv.writerow(["step", "t", "min_spacing"])
        self.traj_fh = open(out_dir / "mesh_trajectory.txt", "w", encoding="utf-8")
        self.log_fh = open(out_dir / "run.log", "w", encoding="utf-8")
        self.log_fh.write("# n, t, dt, dt_tilde, L1, mass, min|K|, min_sigma\n")
        self.tables: dict[str, list] = {"x_old": [], "x_new": [], "alpha_old": [], "alpha_new": []}
        self.n_snap = 0

    def diagnostics(self, step, t, coeffs, positions):
        geo = compute_geometry(self.mesh, positions)
        avg = coeffs[:, 0, 0]
        l1 = float(np.sum(geo.measure * np.abs(avg)))
        mass = float(np.sum(geo.measure * avg))
        self.diag_csv.writerow([step, _fmt(t), _fmt(l1), _fmt(mass), _fmt(geo.measure.min()), _fmt(geo.sigma_min)])
        self.sp_csv.writerow([step, _fmt(t), _fmt(geo.height.min())])

    def step(self, rec):
        self.dt_csv.writerow([rec.step, _fmt(rec.t), _fmt(rec.dt), _fmt(rec.dt_tilde), rec.argmax_element,
                              int(rec.dominance_ok), rec.cap_reason])
        self.log_fh.write(
            f"{rec.step}, {rec.t:.16e}, {rec.dt:.16e}, {rec.dt_tilde:.16e}, {rec.l1:.16e}, "
            f"{rec.mass:.16e}, {rec.min_measure:.16e}, {rec.min_sigma:.16e}\n"
        )
        if rec.alpha_pts_old is not None:
            self.tables["x_old"].append(rec.x_old)
            self.tables["x_new"].append(rec.x_new)
            self.tables["alpha_old"].append(rec.alpha_pts_old)
            self.tables["alpha_new"].append(rec.alpha_pts_new)

    def snapshot(self, t, disc, coeffs, positions):
        self.traj_fh.write(f"# t = {t!r}\n")
        write_mesh_block(self.traj_fh, positions, self.mesh.elements)
        name = self.out / "snapshots" / f"snap_{self.n_snap:03d}"
        write_field(f"{name}.field", DGField(disc.space, coeffs))
        with open(f"{name}.mesh", "w", encoding="utf-8") as fh:
            fh.write(f"# t = {t!r}\n")
            write_mesh_block(fh, positions, self.mesh.elements)
        self.n_snap += 1

    def close(self, report: dict):
        for fh in (self.dt_fh, self.diag_fh, self.sp_fh, self.traj_fh, self.log_fh):
            fh.close()
        if self.tables["x_old"]:
            np.savez_compressed(self.out / "tables.npz", **{k: np.stack(v) for k, v in self.tables.items()})
        (self.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out_dir=None, progress: bool = False) -> RunResult:
    """Run one benchmark to ``T_end`` (or until an instability report)."""
    if cfg.problem not in PROBLEMS:
        from .stability import stability_lab

        return stability_lab(cfg, out_dir)
    prob = get_problem(cfg.problem)
    mesh = build_problem_mesh(cfg)
    disc, solver = build_solver(cfg, mesh)
    state = initial_state(disc, prob.initial, limit=disc.limiter.spec.active)
    T = cfg.final_time
    outputs = cfg.output_times()[1:]
    writer = _Writer(Path(out_dir), cfg, mesh) if out_dir is not None else None
    if writer:
        writer.diagnostics(0, 0.0, state.coeffs, state.positions)
        writer.snapshot(0.0, disc, state.coeffs, state.positions)
    m0 = total_mass(state.coeffs, state.positions, mesh)
    records = []
    status, reason, code = "completed", "", EXIT_OK
    t0 = time.perf_counter()
    oi = 0
    try:
        while state.t < T:
            nxt = outputs[oi] if oi < len(outputs) else None
            rec = solver.advance(state, T, nxt)
            records.append(rec)
            if writer:
                writer.step(rec)
                writer.diagnostics(state.step, state.t, state.coeffs, state.positions)
            if nxt is not None and state.t >= nxt:
                if writer and nxt < T:
                    writer.snapshot(state.t, disc, state.coeffs, state.positions)
                oi += 1
            if progress and state.step % 100 == 0:
                log.info("step %d t=%.6g dt=%.3e", state.step, state.t, rec.dt)
            if state.t >= T:
                break
    except InstabilityError as exc:
        status, reason, code = "unstable", str(exc), EXIT_UNSTABLE
        log.warning("instability: %s", exc)
    if writer:
        writer.snapshot(state.t, disc, state.coeffs, state.positions)
    elapsed = time.perf_counter() - t0
    m1 = total_mass(state.coeffs, state.positions, mesh)
    outflow = state.outflow if state.outflow is not None else np.zeros_like(m0)
    report = {
        "schema": SCHEMA,
        "status": status,
        "reason": reason,
        "steps": state.step,
        "t_final": state.t,
        "exit_code": code,
        "mass_initial": m0.tolist(),
        "mass_final": m1.tolist(),
        "boundary_outflow": outflow.tolist(),
        "elapsed_seconds": elapsed,
    }
    if writer:
        report.pop("elapsed_seconds")  # keep artifacts byte-reproducible
        writer.close(report)
    return RunResult(status, code, state.step, state.t, Path(out_dir) if out_dir else None, reason,
                     records, state, mesh, disc, elapsed)


# ---------------------------------------------------------------- verification
def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class VerifyReport:
    ok: bool
    checks: dict

    def lines(self) -> list[str]:
        return [f"{'PASS' if v['ok'] else 'FAIL'} {k}: {v['detail']}" for k, v in self.checks.items()]


def verify_run(run_dir) -> VerifyReport:
    """Recompute time steps and invariants of a finished run from its artifacts."""
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.yaml")
    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    dt_rows = read_csv(run_dir / "dt.csv")
    diag = read_csv(run_dir / "l1_mass.csv")
    checks = {}

    dts = np.array([float(r["dt"]) for r in dt_rows])
    checks["positive_dt"] = {"ok": bool(np.all(dts > 0)), "detail": f"min dt = {dts.min() if len(dts) else 'n/a'}"}
    minK = np.array([float(r["min_measure"]) for r in diag])
    checks["nonsingular_mesh"] = {"ok": bool(np.all(minK > 0)), "detail": f"min |K| = {minK.min():.3e}"}

    mass = np.array([float(r["mass"]) for r in diag])
    scale = max(abs(mass[0]), np.finfo(float).tiny)
    if all(cfg.periodic()) if cfg.problem in PROBLEMS else True:
        drift = float(np.max(np.abs(mass - mass[0])) / scale)
        checks["mass_conservation"] = {"ok": drift <= 1e-11, "detail": f"relative drift {drift:.2e}"}
    else:
        out = report["boundary_outflow"][0]
        drift = abs(mass[-1] - mass[0] + out) / scale
        checks["mass_balance"] = {"ok": drift <= 1e-10, "detail": f"relative imbalance {drift:.2e} (outflow {out:.3e})"}

    tables = run_dir / "tables.npz"
    if tables.exists() and cfg.problem in PROBLEMS:
        data = np.load(tables)
        mesh = build_problem_mesh(cfg)
        disc, solver = build_solver(cfg, mesh)
        c = solver.config.cfl
        outputs = cfg.output_times()[1:]
        worst = 0.0
        for i, row in enumerate(dt_rows):
            geo_o = compute_geometry(mesh, data["x_old"][i])
            geo_n = compute_geometry(mesh, data["x_new"][i])
            a_old = disc.aggregate(c.cfl_policy, data["alpha_old"][i])
            a_new = disc.aggregate(c.cfl_policy, data["alpha_new"][i])
            rep = cflmod.dt_two_mesh(geo_o, geo_n, mesh, a_old, c.c_cfl, a_new, disc.weights_face)
            t = float(row["t"])
            nxt = next((o for o in outputs if o > t), None)
            rep = cflmod.apply_caps(rep, t, cfg.final_time, nxt, c.dt_max)
            expect = rep.dt
            while "tangle" in row["cap_reason"] and expect > float(row["dt"]) * (1 + 1e-15):
                expect *= 0.5
            worst = max(worst, abs(expect - float(row["dt"])) / expect)
        checks["dt_formula"] = {"ok": worst <= 1e-13, "detail": f"max relative mismatch {worst:.2e} over {len(dt_rows)} steps"}
    ok = all(v["ok"] for v in checks.values())
    return VerifyReport(ok, checks)
