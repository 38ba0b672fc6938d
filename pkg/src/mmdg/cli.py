"""Command-line entry point: ``mmdg run|verify|oracle``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import ConfigError, load_config
from .runner import EXIT_OK, EXIT_UNSTABLE, EXIT_USAGE, verify_run


def _triple(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected rho,u,P but got {text!r}") from exc
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers rho,u,P")
    return vals


def _ints(text: str):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmdg", description="Moving-mesh DG experiments and oracles.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a YAML config")
    r.add_argument("config")
    r.add_argument("-o", "--out", default=None, help="output directory (default: run_<problem>_<preset>)")
    r.add_argument("--k", type=int)
    r.add_argument("--preset", choices=["ee", "he", "hh", "eh"])
    r.add_argument("--c-cfl", type=float, dest="c_cfl")
    r.add_argument("--t-end", type=float, dest="t_end")
    r.add_argument("--n-cells", type=_ints, dest="n_cells")
    r.add_argument("--outputs", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--fixed", action="store_const", const=False, dest="moving", help="keep the mesh fixed")
    r.add_argument("--allow-unstable", action="store_const", const=True, dest="allow_unstable")
    r.add_argument("--record-tables", action="store_const", const=True, dest="record_tables")

    v = sub.add_parser("verify", help="recompute time steps and invariants from a run directory")
    v.add_argument("run_dir")

    o = sub.add_parser("oracle", help="evaluate an exact solution")
    osub = o.add_subparsers(dest="oracle", required=True)
    rie = osub.add_parser("riemann", help="exact 1D Euler Riemann solution")
    rie.add_argument("--left", type=_triple, default=[1.0, 0.0, 1.0])
    rie.add_argument("--right", type=_triple, default=[0.125, 0.0, 0.1])
    rie.add_argument("--gamma", type=float, default=1.4)
    rie.add_argument("--t", type=float, default=2.0)
    rie.add_argument("--x0", type=float, default=0.0, help="initial discontinuity position")
    rie.add_argument("--x", type=float, nargs="+", default=None)
    bur = osub.add_parser("burgers", help="characteristic solution of u_t + (u^2/2)_x = 0, u0 = 1/2 + sin(pi x)")
    bur.add_argument("--t", type=float, default=0.15)
    bur.add_argument("--x", type=float, nargs="+", default=None)
    return p


def _cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in
                 ("k", "preset", "c_cfl", "t_end", "n_cells", "outputs", "seed", "moving", "allow_unstable",
                  "record_tables")}
    cfg = load_config(args.config, overrides)
    out = args.out or f"run_{cfg.problem}_{cfg.preset}"
    from .runner import run_experiment

    res = run_experiment(cfg, out, progress=args.verbose)
    if hasattr(res, "results"):
        for r in res.results:
            flag = "PASS" if r.monotone else ("FAIL" if r.asserted else "INFO")
            print(f"{flag} pairing {r.pairing}: monotone={r.monotone} dominance_ok={r.dominance_ok} "
                  f"witness={r.witness} max_increase={r.max_increase:.3e}")
    else:
        print(f"{res.status}: {res.steps} steps, t = {res.t_final:.6g}" + (f" ({res.reason})" if res.reason else ""))
    print(f"artifacts in {out}")
    return res.exit_code


def _cmd_verify(args) -> int:
    rep = verify_run(args.run_dir)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.ok else EXIT_UNSTABLE


def _cmd_oracle(args) -> int:
    from . import oracles

    if args.oracle == "riemann":
        x = np.linspace(-5.0, 5.0, 11) if args.x is None else np.asarray(args.x)
        if not args.t > 0:
            raise ConfigError("--t must be positive")
        star = oracles.star_state(args.left, args.right, args.gamma)
        sol = oracles.exact_riemann(args.left, args.right, args.gamma, (x - args.x0) / args.t)
        print(f"# p_star={float(star.p)!r} u_star={float(star.u)!r}")
        print("x,rho,u,P")
        for xi, row in zip(x, sol):
            print(",".join(repr(float(v)) for v in (xi, *row)))
    else:
        x = np.linspace(0.0, 2.0, 11) if args.x is None else np.asarray(args.x)
        u = oracles.burgers_exact(x, args.t)
        print("x,u")
        for xi, ui in zip(x, u):
            print(f"{float(xi)!r},{float(ui)!r}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_oracle(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
