"""Command-line interface.

Exit codes: 0 success / all checks pass, 1 a check or solvability test
failed, 2 configuration or IO error, 3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cavity as cv
from . import spectral as spc
from .config import ConfigError, RunConfig, build_cavity_system, load_config, load_input_field
from .dualsolve import ConeExitError, NonConvergenceError
from .fields import GridMismatchError, VectorField, save_field
from .verify import run_suite, solve_from_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONV = 0, 1, 2, 3
log = logging.getLogger("dualmaxwell")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides io.out)")
    common.add_argument("--seed", type=int, help="random seed (overrides solver.seed)")
    common.add_argument("--mode", choices=["periodic", "cavity"], help="grid mode")
    common.add_argument("--case", choices=["I", "II", "III", "fullspace"], help="dual problem case")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="dualmaxwell", description="Dual variational solver for nonlinear time-harmonic Maxwell problems")
    sub = p.add_subparsers(dest="command", required=True)
    d = sub.add_parser("decompose", parents=[common], help="Helmholtz split of a field file")
    d.add_argument("field", nargs="?", type=Path, help="field file (overrides io.field)")
    r = sub.add_parser("resolvent", parents=[common], help="apply the real resolvent or the cavity solve")
    r.add_argument("field", nargs="?", type=Path)
    sub.add_parser("solve", parents=[common], help="ground or bound state search")
    sub.add_parser("verify", parents=[common], help="run the verification battery")
    sub.add_parser("info", parents=[common], help="eigenvalues and classification of the frequency")
    return p


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    data = cfg.model_dump()
    if args.out is not None:
        data["io"]["out"] = str(args.out)
    if args.seed is not None:
        data["solver"]["seed"] = args.seed
    if args.mode is not None:
        data["grid"]["mode"] = args.mode
        data["solver"]["mode"] = "cavity" if args.mode == "cavity" else "fullspace"
    if args.case is not None:
        if args.case == "fullspace":
            data["grid"]["mode"], data["solver"]["mode"] = "periodic", "fullspace"
        else:
            data["grid"]["mode"], data["solver"]["mode"], data["solver"]["case"] = "cavity", "cavity", args.case
    if getattr(args, "field", None) is not None:
        data["io"]["field"] = str(args.field)
    return RunConfig.model_validate(data)


def _out_dir(cfg) -> Path:
    out = Path(cfg.io.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def cmd_decompose(cfg) -> int:
    E = load_input_field(cfg)
    out = _out_dir(cfg)
    if E.grid.mode == "periodic":
        X, Y = spc.split_real(E.data, E.grid)
    else:
        sys_ = build_cavity_system(cfg)
        if E.grid != sys_.quad_grid:
            raise GridMismatchError(f"cavity fields live on the quadrature grid {sys_.quad_grid}, got {E.grid}")
        e1, e2 = cv.hodge_project(sys_.galerkin(E.data.reshape(-1, 3)), sys_)
        X, Y = (sys_.sample(e).data for e in (e1, e2))
    save_field(out / "X_part.bin", VectorField(E.grid, X))
    save_field(out / "Y_part.bin", VectorField(E.grid, Y))
    print(f"wrote {out / 'X_part.bin'} and {out / 'Y_part.bin'}")
    return EXIT_OK


def cmd_resolvent(cfg) -> int:
    E = load_input_field(cfg)
    out = _out_dir(cfg)
    if E.grid.mode == "periodic":
        res = spc.ifft(spc.resolvent_R(spc.fft(E), cfg.solver.lam))
        save_field(out / "resolvent.bin", res)
        print(f"wrote {out / 'resolvent.bin'}")
        return EXIT_OK
    sys_ = build_cavity_system(cfg)
    if E.grid != sys_.quad_grid:
        raise GridMismatchError(f"cavity fields live on the quadrature grid {sys_.quad_grid}, got {E.grid}")
    res = cv.linear_solve(sys_.galerkin(E.data.reshape(-1, 3)), sys_.medium.omega_sq, sys_)
    save_field(out / "resolvent.bin", sys_.sample(res.solution))
    print(f"case {res.case}, kernel dimension {res.kernel_dim}, residual {res.residual:.3e}")
    return EXIT_OK


def cmd_solve(cfg) -> int:
    results = solve_from_config(cfg)
    out = _out_dir(cfg)
    reports = []
    for i, (x, rep) in enumerate(results):
        reports.append(rep.as_dict())
        np.save(out / f"state_{i}.npy", x)
        if cfg.io.trace:
            rep.write_trace(out / f"trace_{i}.csv")
        print(f"[{i}] J = {rep.J:.12g}  rel_grad = {rep.rel_grad:.3e}  iterations = {rep.iterations}  "
              f"status = {rep.status}")
    _write_json(out / "solve.json", {"format_version": 1, "config_sha256": cfg.digest(), "results": reports})
    if not results or not all(r["converged"] for r in reports):
        return EXIT_NONCONV
    return EXIT_OK


def cmd_verify(cfg) -> int:
    report = run_suite(cfg)
    path = report.write(_out_dir(cfg) / "verification.json")
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:34s} {c.value:.3e}  (tol {c.tol:.1e})  {c.detail}")
    t = report.totals
    print(f"{t['passed']}/{t['checks']} checks passed; report written to {path}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_info(cfg) -> int:
    if cfg.solver.mode == "fullspace":
        grid = cfg.grid_spec("periodic")
        lam = cfg.solver.lam
        sym = spc.symbol_set(grid)
        print(f"periodic grid {grid.n_per_axis}^3, L = {grid.cell_length:g}")
        print(f"lambda = {lam:g}, distance to the symbol set = {spc.resonance_gap(grid, lam):.3e}")
        print("lowest symbol values:", " ".join(f"{v:.6g}" for v in sym[:8]))
        return EXIT_OK
    sys_ = build_cavity_system(cfg)
    lam = sys_.medium.omega_sq
    print(f"cavity {sys_.n}^3 ({sys_.bc}), {sys_.n_edges} edges, gradient dimension {sys_.gradient_dim}")
    print("lowest eigenvalues:", " ".join(f"{v:.8g}" for v in sys_.eigvals[:8]))
    print(f"omega^2 = {lam:.8g}: case {cv.classify(lam, sys_)}")
    return EXIT_OK


COMMANDS = {"decompose": cmd_decompose, "resolvent": cmd_resolvent, "solve": cmd_solve,
            "verify": cmd_verify, "info": cmd_info}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except (NonConvergenceError, ConeExitError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except (spc.ResonanceError, cv.FredholmIncompatibility) as exc:
        print(f"solvability check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, OSError, cv.CavityBuildError) as exc:
        # bad field files, grid mismatches and parameter combinations rejected at setup
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
