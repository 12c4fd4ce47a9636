"""Fibering, descent flow and critical point searches.

For the power nonlinearity ``J(tP) = t^p' A + t^2 B``.  When ``B < 0`` the
ray through ``P`` has a unique maximum at ``t*``; ``m(P) = J(t* P)`` is
constant along rays and its minimizers are the ground states.  The flow
below takes explicit steps along ``-grad J`` from points on this dual Nehari
set (``t* = 1``), pulls every trial point back onto the set and accepts it
under an Armijo test.  Where ``t* = 1`` the envelope gradient of ``m``
coincides with ``grad J``, so the recorded J-trace decreases strictly.
"""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .problems import DualProblem


class ConeExitError(ValueError):
    """Direction has a nonnegative quadratic part; ``t -> J(tP)`` has no interior maximum."""


class NonConvergenceError(RuntimeError):
    pass


@dataclass
class FlowOptions:
    grad_tol: float = 1e-6
    max_iters: int = 10_000
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    step_growth: float = 2.0
    min_step: float = 1e-16
    J_floor: float = 0.0
    restarts: int = 3
    noise: float = 0.05
    precondition: bool = True
    roundoff: float = 100 * np.finfo(float).eps
    polish_start: float = 1e-2
    newton_rtol: float = 1e-2
    hess_floor: float = 0.0


@dataclass
class SolveReport:
    mode: str
    iterations: int
    J: float
    rel_grad: float
    t_star: float
    dual_primal: float = float("nan")
    energies: list = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = False
    status: str = ""
    symmetry: list = field(default_factory=list)
    trace: list = field(default_factory=list, repr=False)

    def as_dict(self, with_trace: bool = False) -> dict:
        d = asdict(self)
        if not with_trace:
            d.pop("trace")
        return d

    def write_trace(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "J", "rel_grad"])
            for row in self.trace:
                w.writerow([row[0], repr(row[1]), repr(row[2])])
        return path


def fiber_scale(pb: DualProblem, x: np.ndarray) -> tuple:
    """``(t*, m)`` with ``t* = (p' A / (-2B))^(1/(2-p'))`` and ``m = J(t* x)``."""
    if pb.nl.kind != "power":
        raise NotImplementedError("fibering needs the homogeneous power nonlinearity")
    A, B = pb.parts(x)
    if not B < 0:
        raise ConeExitError(f"quadratic part B = {B:.3e} >= 0: direction outside the mountain-pass cone")
    pp = pb.nl.pp
    t = (pp * A / (-2.0 * B)) ** (1.0 / (2.0 - pp))
    return t, t ** pp * A + t * t * B


def symmetrize(pb: DualProblem, x: np.ndarray, symmetry: Sequence) -> np.ndarray:
    """Project onto the parity class ``{(axis, sign)}``: ``x <- (x + sign R_axis x)/2``."""
    for axis, sign in symmetry:
        x = 0.5 * (x + sign * pb.reflect(x, axis))
    return x


def detect_parity(pb: DualProblem, x: np.ndarray, tol: float = 1e-8) -> list:
    """Axes along which ``x`` is even or odd (to relative ``tol``)."""
    out = []
    nx = pb.norm(x)
    for axis in range(3):
        Rx = pb.reflect(x, axis)
        for sign in (1, -1):
            if pb.norm(x - sign * Rx) <= tol * nx:
                out.append((axis, sign))
                break
    return out


def pseudo_gradient_flow(pb: DualProblem, x0: np.ndarray, opts: Optional[FlowOptions] = None,
                         symmetry: Sequence = ()) -> tuple:
    """Armijo-controlled descent of ``J`` on the dual Nehari set.

    Returns ``(x, report)``; ``report.trace`` holds ``(step, J, rel_grad)``
    for the start and every accepted step.
    """
    opts = opts or FlowOptions()
    pb.set_symmetry(symmetry)
    try:
        return _flow(pb, x0, opts, symmetry)
    finally:
        pb.set_symmetry(())


def _flow(pb: DualProblem, x0, opts: FlowOptions, symmetry):
    t0 = time.perf_counter()
    x = symmetrize(pb, pb.project(np.asarray(x0, dtype=float)), symmetry)
    if pb.norm(x) == 0:
        raise ValueError("the zero state is always critical; start elsewhere")
    t, _ = fiber_scale(pb, x)
    x = t * x
    J = pb.J(x)
    g = pb.grad(x)
    gn = pb.norm(g)
    rel = gn / pb.psi_norm(x)
    trace = [(0, J, rel)]
    alpha = opts.initial_step
    status = "budget"
    it = 0
    while True:
        if rel <= opts.grad_tol:
            status = "converged"
            break
        if J < opts.J_floor:
            status = "below_floor"
            break
        if it >= opts.max_iters:
            break
        if rel <= opts.polish_start and pb.nl.kind == "power":
            step = _newton_step(pb, x, g, gn, symmetry, opts)
            if step is not None:
                it += 1
                x, g, gn = step
                J = pb.J(x)
                rel = gn / pb.psi_norm(x)
                trace.append((it, J, rel))
                continue
        d = symmetrize(pb, pb.precondition(x, g), symmetry) if opts.precondition else g
        slope = pb.inner(g, d)
        accepted = False
        while alpha >= opts.min_step:
            y = symmetrize(pb, pb.project(x - alpha * d), symmetry)
            try:
                ty, _ = fiber_scale(pb, y)
            except ConeExitError:
                alpha *= opts.backtrack
                continue
            y = ty * y
            Jy = pb.J(y)
            if Jy <= J - opts.armijo_c * alpha * slope:
                accepted = True
                break
            if opts.armijo_c * alpha * slope <= opts.roundoff * abs(J) and Jy <= J + opts.roundoff * abs(J):
                # decrease is below the resolution of J: fall back to the gradient norm
                gy = pb.grad(y)
                if pb.norm(gy) < gn:
                    accepted = True
                    break
            alpha *= opts.backtrack
        if not accepted:
            status = "stagnation"
            break
        it += 1
        x, J = y, Jy
        g = pb.grad(x)
        gn = pb.norm(g)
        rel = gn / pb.psi_norm(x)
        trace.append((it, J, rel))
        alpha = min(alpha * opts.step_growth, opts.initial_step)
    t_end = fiber_scale(pb, x)[0]
    rep = SolveReport(pb.mode, it, J, rel, t_end, wall_time=time.perf_counter() - t0,
                      converged=status == "converged", status=status,
                      symmetry=[list(s) for s in symmetry], trace=trace)
    return x, rep


def _newton_step(pb: DualProblem, x, g, gn, symmetry, opts: FlowOptions):
    """One damped Newton step on ``grad J = 0`` with ``||grad||`` as merit; ``None`` if it fails."""
    n = x.size
    prec = pb.preconditioner(x)
    hess = pb.hessian(x, opts.hess_floor)
    A = LinearOperator((n, n), matvec=lambda v: symmetrize(pb, hess(v), symmetry), dtype=float)
    Mop = LinearOperator((n, n), matvec=lambda v: symmetrize(pb, prec(v), symmetry), dtype=float)
    delta, _ = gmres(A, -g, rtol=opts.newton_rtol, atol=0.0, restart=60, maxiter=5, M=Mop)
    delta = symmetrize(pb, pb.project(delta), symmetry)
    tau = 1.0
    for _ in range(20):
        y = symmetrize(pb, pb.project(x + tau * delta), symmetry)
        gy = pb.grad(y)
        gyn = pb.norm(gy)
        if gyn < gn and pb.parts(y)[1] < 0:
            return y, gy, gyn
        tau *= 0.5
    return None


def _finish(pb: DualProblem, x, rep: SolveReport):
    rep.dual_primal = pb.to_primal(x).agreement
    return x, rep


def ground_state_search(pb: DualProblem, init: np.ndarray, opts: Optional[FlowOptions] = None,
                        rng: Optional[np.random.Generator] = None) -> tuple:
    """Minimize ``m`` from ``init``; on a cone exit or stagnation restart from a perturbed init."""
    opts = opts or FlowOptions()
    rng = rng or np.random.default_rng(0)
    x0 = np.asarray(init, dtype=float)
    last = None
    for attempt in range(opts.restarts + 1):
        try:
            x, rep = pseudo_gradient_flow(pb, x0, opts)
        except ConeExitError:
            x0 = _perturb(pb, init, rng, opts.noise * (attempt + 1))
            continue
        last = (x, rep)
        if rep.converged:
            break
        x0 = _perturb(pb, init, rng, opts.noise * (attempt + 1))
    if last is None:
        raise ConeExitError("every restart left the mountain-pass cone")
    x, rep = _finish(pb, *last)
    rep.energies = [rep.J]
    return x, rep


def _perturb(pb: DualProblem, x, rng, amount: float):
    noise = pb.random_state(rng)
    return pb.project(x + amount * pb.norm(x) / max(pb.norm(noise), 1e-300) * noise)


def seeded_init(pb: DualProblem, base: np.ndarray, rng: np.random.Generator, amount: float = 0.05):
    """``base`` plus a relative ``amount`` of random state-space noise."""
    return _perturb(pb, base, rng, amount)


def _distance(pb, x, y, shifts: bool) -> float:
    best = min(pb.norm(x - y), pb.norm(x + y))
    if shifts and hasattr(pb, "shift"):
        n = pb.grid.n_per_axis
        for k in np.ndindex(n, n, n):
            ys = pb.shift(y, k)
            best = min(best, pb.norm(x - ys), pb.norm(x + ys))
    return best / max(pb.norm(x), pb.norm(y), 1e-300)


def bound_state_search(pb: DualProblem, seeds: Sequence, opts: Optional[FlowOptions] = None,
                       energy_tol: float = 1e-4, distance_tol: float = 1e-3,
                       use_symmetry: bool = True, translation_dedup: bool = True) -> list:
    """Run the flow from every sector seed and return deduplicated critical points.

    Each seed keeps the reflection parities it has exactly; the flow is
    restricted to that class, and because the functional is reflection
    invariant a critical point of the restriction is critical for ``J``.
    Two results are the same point when their energies agree to
    ``energy_tol * |J|`` and they lie within relative ``distance_tol``
    (up to sign, and translations in full-space mode).
    """
    opts = opts or FlowOptions()
    found = []
    for seed in seeds:
        sym = detect_parity(pb, seed) if use_symmetry else []
        try:
            x, rep = pseudo_gradient_flow(pb, seed, opts, symmetry=sym)
        except ConeExitError:
            continue
        if not rep.converged:
            continue
        x, rep = _finish(pb, x, rep)
        dup = False
        for y, r in found:
            if abs(rep.J - r.J) <= energy_tol * abs(r.J) or _distance(pb, x, y, translation_dedup) < distance_tol:
                dup = True
                break
        if not dup:
            found.append((x, rep))
    energies = sorted(r.J for _, r in found)
    for _, r in found:
        r.energies = energies
    return found
