"""Primal residuals, Div-Curl audit and the verification battery."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import cavity as cv
from . import spectral as spc
from .config import FORMAT_VERSION, build_cavity_system, build_problem
from .dualsolve import (CavityProblem, FlowOptions, FullspaceProblem, NonConvergenceError, bound_state_search,
                        fiber_scale, ground_state_search, seeded_init)
from .fields import GridSpec, VectorField
from .nonlin import Nonlinearity


class DecompositionError(ValueError):
    pass


def primal_residual_cavity(E: VectorField, sys: cv.CavitySystem, nl: Nonlinearity) -> float:
    """Relative dual-norm residual of ``curl mu^-1 curl E - omega^2 eps E - f(x, E)``.

    ``E`` is the pointwise field on the quadrature grid.  The nonlinear term
    uses it directly; the linear terms use its eps-weighted L2 projection onto
    edge vectors.  Every edge basis function is a test vector and the
    residual is measured in the norm dual to the energy norm
    ``int mu^-1 |curl v|^2 + eps |v|^2``, relative to the same norm of the
    nonlinear term.
    """
    if E.grid != sys.quad_grid:
        raise DecompositionError(f"field lives on {E.grid}, expected the quadrature grid {sys.quad_grid}")
    q = E.data.reshape(-1, 3)
    a = nl.a if np.isscalar(nl.a) else np.asarray(nl.a).reshape(-1)
    f = nl.eval_f(q, a)
    load = sys.S.T @ (sys.quad_grid.dV * f.reshape(-1))
    Eh = sys.galerkin(q)
    r = sys.K @ Eh - sys.medium.omega_sq * (sys.M_eps @ Eh) - load
    scale = sys.energy_dual_norm(load)
    if scale == 0:
        return sys.energy_dual_norm(r)
    return sys.energy_dual_norm(r) / scale


def primal_residual_fullspace(E: VectorField, lam: float, nl: Nonlinearity) -> float:
    """Relative L2 residual of ``curl curl E - lam E - f(x, E)`` over all retained Fourier modes."""
    if E.grid.mode != "periodic":
        raise DecompositionError("full-space residual needs a periodic field")
    a = nl.a if np.isscalar(nl.a) else np.asarray(nl.a).reshape(E.grid.shape)
    f = nl.eval_f(E.data, a)
    Eh = spc.fft(E)
    r = spc.curlcurl_apply(Eh).coeffs - lam * Eh.coeffs - np.fft.fftn(f, axes=(0, 1, 2), norm="forward")
    fn = float(np.sqrt(np.sum(f * f) * E.grid.dV))
    rn = float(np.sqrt(E.grid.volume * np.sum(np.abs(r) ** 2)))
    return rn / fn if fn > 0 else rn


def primal_residual(E: VectorField, m, nl: Nonlinearity, mode: str, sys: Optional[cv.CavitySystem] = None) -> float:
    """Dispatch on ``mode`` (``"cavity"`` needs ``sys``; ``"fullspace"`` uses ``m.lam``)."""
    if mode == "cavity":
        if sys is None:
            raise ValueError("cavity residual needs the CavitySystem")
        return primal_residual_cavity(E, sys, nl)
    if mode == "fullspace":
        return primal_residual_fullspace(E, m.lam, nl)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class DivCurlReport:
    whole_cell: float
    whole_cell_relative: float
    subboxes: list = field(default_factory=list)
    boxes_per_axis: int = 0


def div_curl_audit(P1: np.ndarray, P2: np.ndarray, grid: GridSpec, boxes_per_axis: int = 2) -> DivCurlReport:
    """``int P1.P2`` over the periodic cell and over a lattice of sub-boxes.

    The whole-cell value vanishes by orthogonality of the projections; the
    sub-box values need not and are only reported.
    """
    prod = np.einsum("...i,...i->...", P1, P2) * grid.dV
    whole = float(prod.sum())
    scale = float(np.sqrt(np.sum(P1 * P1) * grid.dV * np.sum(P2 * P2) * grid.dV))
    n = grid.n_per_axis
    if n % boxes_per_axis:
        raise ValueError("boxes_per_axis must divide the grid size")
    b = n // boxes_per_axis
    sub = prod.reshape(boxes_per_axis, b, boxes_per_axis, b, boxes_per_axis, b).sum(axis=(1, 3, 5))
    return DivCurlReport(whole, whole / scale if scale > 0 else 0.0, [float(v) for v in sub.ravel()], boxes_per_axis)


# -- solving from a config ---------------------------------------------------

def flow_options(cfg) -> FlowOptions:
    s = cfg.solver
    return FlowOptions(grad_tol=s.grad_tol, max_iters=s.max_iters, restarts=s.restarts, noise=s.noise)


def solve_from_config(cfg, pb=None, sys=None) -> list:
    """Run the configured search; returns ``[(x, SolveReport), ...]`` (one entry for a ground state).

    Cavity seeds are eigenfunctions above ``omega^2`` (with ``solver.noise``
    relative noise for the ground state); full-space seeds are the shell
    functions, each restricted to its reflection parity class.
    """
    if pb is None:
        pb, sys = build_problem(cfg)
    s = cfg.solver
    opts = flow_options(cfg)
    rng = np.random.default_rng(s.seed)
    if isinstance(pb, CavityProblem):
        above = pb.above_index()
        if s.search == "ground":
            x0 = seeded_init(pb, pb.eigen_seed(above[s.seed_index]), rng, s.noise)
            return [ground_state_search(pb, x0, opts, rng)]
        seeds = [pb.eigen_seed(k) for k in above[: s.sectors]]
    else:
        shells = pb.nonempty_shells(s.sectors, s.shell_width)
        seeds = [pb.sector_seed(j, s.shell_width) for j in shells]
    found = bound_state_search(pb, seeds, opts, s.energy_tol, s.distance_tol)
    if s.search == "ground":
        if not found:
            raise NonConvergenceError("no sector flow converged")
        best = min(found, key=lambda item: item[1].J)
        best[1].energies = [best[1].J]
        return [best]
    return found


# -- verification battery ------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.value, self.tol, self.passed = float(self.value), float(self.tol), bool(self.passed)


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    timestamps: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def totals(self) -> dict:
        n_pass = int(sum(c.passed for c in self.checks))
        return {"checks": len(self.checks), "passed": n_pass, "failed": len(self.checks) - n_pass,
                "all_pass": self.passed}

    def to_json(self, with_timestamps: bool = True) -> str:
        d = {"format_version": FORMAT_VERSION, "checks": [asdict(c) for c in self.checks],
             "provenance": self.provenance, "totals": self.totals}
        if with_timestamps:
            d["timestamps"] = self.timestamps
        return json.dumps(d, indent=2, sort_keys=True, default=_jsonable)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(f"not serializable: {type(v)}")


def _rel(a, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def _check_projection(cfg, rng) -> Check:
    grid = GridSpec(cfg.verify.periodic_n)
    worst = 0.0
    for _ in range(cfg.verify.samples):
        E = rng.standard_normal(grid.shape + (3,))
        X, Y = spc.split_real(E, grid)
        XX, XY = spc.split_real(X, grid)
        YX, YY = spc.split_real(Y, grid)
        scale = np.linalg.norm(E)
        worst = max(worst, _rel(X + Y, E), _rel(XX, X), _rel(YY, Y),
                    np.linalg.norm(XY) / scale, np.linalg.norm(YX) / scale,
                    abs(float(np.sum(X * Y))) / scale ** 2)
    return Check("projection_identities", worst, cfg.verify.projection, worst <= cfg.verify.projection)


def _check_curlcurl(cfg, rng) -> Check:
    grid = GridSpec(cfg.verify.periodic_n)
    worst = 0.0
    xi, k2 = spc.wavevectors(grid)
    for _ in range(cfg.verify.samples):
        E = rng.standard_normal(grid.shape + (3,))
        X, Y = spc.split_real(E, grid)
        Xh, Yh = spc.fft(VectorField(grid, X)), spc.fft(VectorField(grid, Y))
        neg_lap = k2[..., None] * Xh.coeffs
        worst = max(worst, _rel(spc.curlcurl_apply(Xh).coeffs, neg_lap),
                    np.linalg.norm(spc.curlcurl_apply(Yh).coeffs) / np.linalg.norm(k2[..., None] * Yh.coeffs))
    return Check("curlcurl_identities", worst, cfg.verify.curlcurl, worst <= cfg.verify.curlcurl)


def _check_positivity(sys) -> Check:
    lo = float(sys.eigvals.min())
    return Check("eigen_positivity", lo, 0.0, lo > 0, "smallest discrete eigenvalue, must be > 0")


def _check_fredholm(cfg, sys, rng) -> list:
    tol = cfg.verify.fredholm
    out = []
    ev = sys.eigvals
    lam_i = 0.5 * (ev[0] + ev[1]) if ev[1] > ev[0] else 0.5 * ev[0]
    worst = 0.0
    for _ in range(cfg.verify.samples):
        res = cv.linear_solve(rng.standard_normal(sys.n_edges), lam_i, sys)
        worst = max(worst, res.residual)
    out.append(Check("fredholm_case_I", worst, tol, worst <= tol))
    lam_ii = float(ev[1])
    phi = sys.X_basis[:, cv.eig_index(lam_ii, sys).indices[0]]
    certified, worst = True, 0.0
    for _ in range(cfg.verify.samples):
        g = rng.standard_normal(sys.n_edges) + phi
        try:
            cv.linear_solve(g, lam_ii, sys)
            certified = False
        except cv.FredholmIncompatibility:
            pass
        worst = max(worst, cv.linear_solve(cv.x_lambda_project(g, lam_ii, sys), lam_ii, sys).residual)
    out.append(Check("fredholm_case_II", worst, tol, certified and worst <= tol,
                     "infeasibility certified" if certified else "incompatible rhs accepted"))
    rejected = 0
    for _ in range(cfg.verify.samples):
        try:
            cv.linear_solve(rng.standard_normal(sys.n_edges), 0.0, sys)
        except cv.FredholmIncompatibility:
            rejected += 1
    out.append(Check("fredholm_case_III", float(cfg.verify.samples - rejected), 0.0,
                     rejected == cfg.verify.samples, "count of accepted right-hand sides with a gradient part"))
    return out


def _check_roundtrip(cfg, nl: Nonlinearity) -> Check:
    s = np.logspace(-3, 3, 61)
    dirs = np.random.default_rng(0).standard_normal((s.size, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    E = s[:, None] * dirs
    a = float(np.min(nl.a))
    e1 = np.max(np.linalg.norm(nl.eval_psi(nl.eval_f(E, a), a) - E, axis=1) / s)
    P = E
    e2 = np.max(np.linalg.norm(nl.eval_f(nl.eval_psi(P, a), a) - P, axis=1) / s)
    worst = float(max(e1, e2))
    return Check("nonlinearity_roundtrip", worst, cfg.verify.roundtrip, worst <= cfg.verify.roundtrip)


def _check_gradient(cfg, pb, rng) -> Check:
    h = cfg.verify.fd_step
    x, q = pb.random_state(rng), pb.random_state(rng)
    d = pb.inner(pb.grad(x), q)
    num = (pb.J(x + h * q) - pb.J(x - h * q)) / (2 * h)
    err = abs(num - d) / abs(d)
    return Check(f"gradient_fd_{pb.mode}", err, cfg.verify.gradient_fd, err <= cfg.verify.gradient_fd)


def _check_fibering(cfg, pb, x) -> Check:
    t_star, _ = fiber_scale(pb, x)
    t = np.linspace(0, 3 * t_star, cfg.verify.fibering_points)[1:]
    A, B = pb.parts(x)
    vals = t ** pb.nl.pp * A + t * t * B
    interior = (vals[1:-1] > vals[:-2]) & (vals[1:-1] > vals[2:])
    n_max = int(interior.sum())
    ok = n_max == 1 and abs(t[1:-1][interior][0] - t_star) <= 3 * (t[1] - t[0]) if n_max else False
    return Check("fibering_unique_max", float(n_max), 1.0, bool(ok), f"t* = {t_star:.6g}")


def _check_ground_state(cfg, pb, sys, x, rep) -> list:
    v = cfg.verify
    pr = pb.to_primal(x)
    if sys is not None:
        res = primal_residual_cavity(pr.E_quad, sys, pb.nl)
    else:
        res = primal_residual_fullspace(pr.E_quad, pb.lam, pb.nl)
    return [
        Check("ground_state_rel_grad", rep.rel_grad, v.rel_grad, bool(rep.converged and rep.rel_grad <= v.rel_grad),
              f"status {rep.status} after {rep.iterations} steps"),
        Check("ground_state_energy_positive", rep.J, 0.0, rep.J > 0),
        Check("ground_state_dual_primal", pr.agreement, v.dual_primal, pr.agreement <= v.dual_primal),
        Check("ground_state_primal_residual", res, v.primal_residual, res <= v.primal_residual),
    ]


def _check_translation(cfg, rng) -> list:
    grid = GridSpec(cfg.verify.periodic_n)
    pb = FullspaceProblem(grid, Nonlinearity(p=cfg.verify.fullspace_p), cfg.solver.lam)
    x = pb.random_state(rng)
    J0 = pb.J(x)
    n = grid.n_per_axis
    worst = max(abs(pb.J(pb.shift(x, rng.integers(0, n, 3))) - J0) / abs(J0) for _ in range(cfg.verify.samples))
    P1, P2 = pb.split(x)
    dc = abs(div_curl_audit(P1, P2, grid).whole_cell_relative)
    return [Check("translation_equivariance", worst, cfg.verify.translation, worst <= cfg.verify.translation),
            Check("divcurl_whole_cell", dc, cfg.verify.divcurl, dc <= cfg.verify.divcurl)]


def lap_order(grid: GridSpec, lam: float, g: np.ndarray, eps_values=(1e-1, 1e-2, 1e-3)) -> tuple:
    """Errors ``||R_eps g - R_0 g||`` and the observed orders between consecutive ``eps``."""
    gh = spc.fft(VectorField(grid, g))
    R0 = spc.resolvent_R(gh, lam).coeffs
    errs = [float(np.sqrt(np.sum(np.abs(spc.resolvent_R(gh, lam, e).coeffs - R0) ** 2))) for e in eps_values]
    orders = [float(np.log(errs[i] / errs[i + 1]) / np.log(eps_values[i] / eps_values[i + 1]))
              for i in range(len(errs) - 1)]
    return errs, orders


def _check_lap(cfg, rng) -> Check:
    grid = GridSpec(cfg.verify.periodic_n)
    g = spc.project_divfree(rng.standard_normal(grid.shape + (3,)), grid)
    _, orders = lap_order(grid, cfg.solver.lam, g)
    lo = min(orders)
    return Check("limiting_absorption_order", lo, cfg.verify.lap_order, lo >= cfg.verify.lap_order)


def run_suite(cfg) -> VerificationReport:
    """Execute the check battery for ``cfg``; a check that raises is recorded as a failure."""
    started = time.time()
    rng = np.random.default_rng(cfg.solver.seed)
    report = VerificationReport(provenance={"config_sha256": cfg.digest(), "seed": cfg.solver.seed,
                                            "grid": cfg.grid_spec().sidecar(), "mode": cfg.solver.mode})
    state = {}

    def run(name, fn):
        try:
            res = fn()
        except Exception as exc:  # a broken check must not abort the battery
            report.checks.append(Check(name, float("nan"), float("nan"), False, f"{type(exc).__name__}: {exc}"))
            return
        report.checks.extend(res if isinstance(res, list) else [res])

    def problem():
        state["pb"], state["sys"] = build_problem(cfg)
        return []

    def cavity_sys():
        if state.get("sys") is not None:
            return state["sys"]
        if state.get("cavity") is None:
            # full-space configs still exercise the cavity checks on a small unit cube
            small = cfg.model_copy(update={
                "grid": cfg.grid.model_copy(update={"n": cfg.verify.cavity_n, "cell_length": 1.0, "mode": "cavity"}),
                "solver": cfg.solver.model_copy(update={"mode": "cavity"})})
            state["cavity"] = build_cavity_system(small)
        return state["cavity"]

    def ground():
        ground_cfg = cfg.model_copy(update={"solver": cfg.solver.model_copy(update={"search": "ground"})})
        (x, rep), = solve_from_config(ground_cfg, state["pb"], state["sys"])
        state["x"] = x
        return _check_ground_state(cfg, state["pb"], state["sys"], x, rep)

    run("projection_identities", lambda: _check_projection(cfg, rng))
    run("curlcurl_identities", lambda: _check_curlcurl(cfg, rng))
    run("problem_setup", problem)
    run("eigen_positivity", lambda: _check_positivity(cavity_sys()))
    run("fredholm", lambda: _check_fredholm(cfg, cavity_sys(), rng))
    run("nonlinearity_roundtrip", lambda: _check_roundtrip(cfg, cfg.nonlinearity_obj()))
    if "pb" in state:
        run("gradient_fd", lambda: _check_gradient(cfg, state["pb"], rng))
        run("ground_state", ground)
        if "x" in state:
            run("fibering_unique_max", lambda: _check_fibering(cfg, state["pb"], state["x"]))
    run("translation_equivariance", lambda: _check_translation(cfg, rng))
    run("limiting_absorption_order", lambda: _check_lap(cfg, rng))
    report.timestamps = {"started_unix": started, "wall_time_s": time.time() - started}
    return report
