"""Acceptance criteria, one test per criterion at the required tolerances.

Each test records a pass/fail line that is repeated in the terminal summary.
"""
import time

import numpy as np
import pytest

from dualmaxwell import cavity as cv
from dualmaxwell import spectral as spc
from dualmaxwell.dualsolve import (CavityProblem, FlowOptions, FullspaceProblem, bound_state_search, detect_parity,
                                   ground_state_search, pseudo_gradient_flow, seeded_init)
from dualmaxwell.fields import GridSpec, Medium, VectorField
from dualmaxwell.nonlin import Nonlinearity, validate_assumptions
from dualmaxwell.verify import div_curl_audit, lap_order, primal_residual_cavity, primal_residual_fullspace

from conftest import aniso_medium

pytestmark = pytest.mark.acceptance


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="module")
def neumann8():
    """Neumann cube, 8 cells, eps = diag(1, 1.3, 1.7); frequency between the two lowest eigenvalues."""
    base = cv.build_cavity(GridSpec(8, 1.0, "cavity"), "neumann", aniso_medium(8))
    ev = base.eigvals
    base.medium = aniso_medium(8, 0.5 * (ev[0] + ev[1]))
    return base


def test_c01_projection_identities(record):
    g = GridSpec(32)
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        E = rng.standard_normal(g.shape + (3,))
        X, Y = spc.split_real(E, g)
        XX, XY = spc.split_real(X, g)
        YX, YY = spc.split_real(Y, g)
        s = np.linalg.norm(E)
        worst = max(worst, _rel(X + Y, E), _rel(XX, X), _rel(YY, Y), np.linalg.norm(XY) / s,
                    np.linalg.norm(YX) / s, abs(np.sum(X * Y)) / s ** 2)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 30
    record(1, ok, f"max relative error {worst:.2e} (<= 1e-12), {dt:.1f} s (< 30 s)")
    assert ok


def test_c02_curlcurl_identities(record):
    g = GridSpec(32)
    rng = np.random.default_rng(2)
    _, k2 = spc.wavevectors(g)
    worst_div, worst_grad = 0.0, 0.0
    for _ in range(10):
        X, Y = spc.split_real(rng.standard_normal(g.shape + (3,)), g)
        Xh, Yh = spc.fft(VectorField(g, X)), spc.fft(VectorField(g, Y))
        # -Laplacian as a multiplier, componentwise
        worst_div = max(worst_div, _rel(spc.curlcurl_apply(Xh).coeffs, k2[..., None] * Xh.coeffs))
        worst_grad = max(worst_grad, float(np.linalg.norm(spc.curlcurl_apply(Yh).coeffs)
                                           / np.linalg.norm(k2[..., None] * Yh.coeffs)))
    ok = worst_div <= 1e-12 and worst_grad <= 1e-12
    record(2, ok, f"divergence-free {worst_div:.2e}, gradient {worst_grad:.2e} (<= 1e-12)")
    assert ok


def _random_spd(rng, n):
    A = rng.standard_normal((3, 3))
    base = A @ A.T + 0.5 * np.eye(3)
    return np.broadcast_to(base, (n, n, n, 3, 3)) * rng.uniform(0.5, 2.0, (n, n, n, 1, 1))


def test_c03_cavity_spectrum(record):
    sys16 = cv.build_cavity(GridSpec(16, 1.0, "cavity"), "dirichlet", Medium(), dense=False)
    lam1 = float(cv.lowest_eigenvalues(sys16, 4)[0])
    err = abs(lam1 / (2 * np.pi ** 2) - 1)
    rng = np.random.default_rng(3)
    mins = []
    for i in range(20):
        med = Medium(eps_field=_random_spd(rng, 8), mu_field=_random_spd(rng, 8))
        sys = cv.build_cavity(GridSpec(8, 1.0, "cavity"), "dirichlet", med)
        mins.append(float(sys.eigvals.min()))
    ok = err <= 0.05 and min(mins) > 0
    record(3, ok, f"PEC n=16 lowest {lam1:.4f} vs 2 pi^2 = {2 * np.pi ** 2:.4f} (rel {err:.2%} <= 5%); "
                  f"20 random media: min eigenvalue {min(mins):.3e} > 0")
    assert ok


def test_c04_fredholm(record, neumann8):
    sys = neumann8
    rng = np.random.default_rng(4)
    ev = sys.eigvals
    lam_i, lam_ii = float(sys.medium.omega_sq), float(ev[2])
    phi = sys.X_basis[:, cv.eig_index(lam_ii, sys).indices[0]]
    res_i, res_ii, certified, rejected = 0.0, 0.0, 0, 0
    for _ in range(10):
        g = rng.standard_normal(sys.n_edges)
        res_i = max(res_i, cv.linear_solve(g, lam_i, sys).residual)
        g2 = g + phi
        try:
            cv.linear_solve(g2, lam_ii, sys)
        except cv.FredholmIncompatibility:
            certified += 1
        res_ii = max(res_ii, cv.linear_solve(cv.x_lambda_project(g2, lam_ii, sys), lam_ii, sys).residual)
        try:
            cv.linear_solve(g, 0.0, sys)
        except cv.FredholmIncompatibility:
            rejected += 1
    ok = res_i <= 1e-8 and res_ii <= 1e-8 and certified == 10 and rejected == 10
    record(4, ok, f"case I residual {res_i:.1e}; case II certified {certified}/10, projected residual "
                  f"{res_ii:.1e}; case III rejected {rejected}/10")
    assert ok


def test_c05_nonlinearity(record):
    rng = np.random.default_rng(5)
    s = np.logspace(-3, 3, 601)
    d = rng.standard_normal((s.size, 3))
    E = s[:, None] * d / np.linalg.norm(d, axis=1, keepdims=True)
    custom = Nonlinearity(kind="custom_monotone", p=4, g=lambda t: t ** 3 + t ** 2, dg=lambda t: 3 * t ** 2 + 2 * t)
    worst = 0.0
    for nl in [Nonlinearity(p=3), Nonlinearity(p=4), Nonlinearity(p=5), custom]:
        worst = max(worst, np.max(np.linalg.norm(nl.eval_psi(nl.eval_f(E)) - E, axis=1) / s),
                    np.max(np.linalg.norm(nl.eval_f(nl.eval_psi(E)) - E, axis=1) / s))
    const_err = 0.0
    feasible = True
    for p in (3.0, 4.0, 5.0):
        rep = validate_assumptions(Nonlinearity(p=p))
        target = (p - 2) / (2 * p)
        const_err = max(const_err, abs(rep.c1 - target) / target, abs(rep.c2 - target) / target)
        feasible &= rep.growth_pass
    ok = worst <= 1e-10 and const_err <= 1e-10 and feasible
    record(5, ok, f"roundtrip {worst:.1e} (<= 1e-10) over 6 decades; c1 = c2 = (p-2)/(2p) to {const_err:.1e}")
    assert ok


def test_c06_gradient_fd(record, neumann8):
    rng = np.random.default_rng(6)
    nl = Nonlinearity(p=4)
    sys_ii = cv.build_cavity(GridSpec(8, 1.0, "cavity"), "neumann", aniso_medium(8, float(neumann8.eigvals[1])))
    sys_iii = cv.build_cavity(GridSpec(8, 1.0, "cavity"), "neumann", Medium())
    problems = {
        "cavity I": CavityProblem(neumann8, nl, "I"),
        "cavity II": CavityProblem(sys_ii, nl, "II"),
        "cavity III": CavityProblem(sys_iii, nl, "III"),
        "fullspace": FullspaceProblem(GridSpec(8), Nonlinearity(p=4.5), 2.5),
    }
    h = 1e-4
    errs = {}
    for name, pb in problems.items():
        worst = 0.0
        for _ in range(5):
            x, q = pb.random_state(rng), pb.random_state(rng)
            d = pb.inner(pb.grad(x), q)
            worst = max(worst, abs((pb.J(x + h * q) - pb.J(x - h * q)) / (2 * h) - d) / abs(d))
        errs[name] = worst
    ok = max(errs.values()) <= 1e-6
    record(6, ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (worst of 5 states, <= 1e-6 at h = 1e-4)")
    assert ok


def test_c07_ground_state_pipeline(record, neumann8):
    t0 = time.perf_counter()
    pb = CavityProblem(neumann8, Nonlinearity(p=4), "I")
    opts = FlowOptions(grad_tol=1e-9, max_iters=10_000)
    runs = []
    for seed in (1, 2):
        rng = np.random.default_rng(seed)
        x0 = seeded_init(pb, pb.eigen_seed(pb.above_index()[0]), rng)
        x, rep = ground_state_search(pb, x0, opts, rng)
        pr = pb.to_primal(x)
        runs.append((rep, primal_residual_cavity(pr.E_quad, neumann8, pb.nl)))
    dt = time.perf_counter() - t0
    (r1, res1), (r2, res2) = runs
    agree = abs(r1.J - r2.J) / abs(r1.J)
    ok = (all(r.converged and r.rel_grad <= 1e-6 and r.iterations <= 10_000 and r.J > 0 for r, _ in runs)
          and max(r1.dual_primal, r2.dual_primal) <= 1e-6 and max(res1, res2) <= 1e-6 and agree <= 1e-6 and dt < 300)
    record(7, ok, f"J = {r1.J:.10f} / {r2.J:.10f} (agree {agree:.1e}), rel_grad {max(r1.rel_grad, r2.rel_grad):.1e}, "
                  f"dual-primal {max(r1.dual_primal, r2.dual_primal):.1e}, primal residual {max(res1, res2):.1e}, "
                  f"iterations {r1.iterations}/{r2.iterations}, {dt:.0f} s")
    assert ok


def test_c08_multiplicity(record, neumann8):
    pb = CavityProblem(neumann8, Nonlinearity(p=4), "I")
    seeds = [pb.eigen_seed(k) for k in pb.above_index()[:3]]
    found = bound_state_search(pb, seeds, FlowOptions(grad_tol=1e-8))
    J = sorted(r.J for _, r in found)
    gaps = np.diff(J) / np.abs(J[:-1]) if len(J) > 1 else np.array([0.0])
    ok = len(J) >= 3 and gaps.min() > 1e-4 and all(r.converged for _, r in found)
    record(8, ok, f"{len(J)} critical points, energies {', '.join(f'{v:.6f}' for v in J)}, "
                  f"min relative gap {gaps.min():.2e} (> 1e-4)")
    assert ok


def test_c09_fullspace_proxy(record):
    g = GridSpec(16)
    lam = 2.5
    gap = spc.resonance_gap(g, lam)
    pb = FullspaceProblem(g, Nonlinearity(p=4.5), lam)
    seed = pb.sector_seed(0)
    x, rep = pseudo_gradient_flow(pb, seed, FlowOptions(grad_tol=1e-9), symmetry=detect_parity(pb, seed))
    pr = pb.to_primal(x)
    el = primal_residual_fullspace(pr.E_quad, lam, pb.nl)
    J0 = pb.J(x)
    rng = np.random.default_rng(9)
    shift_err = max(abs(pb.J(pb.shift(x, rng.integers(0, 16, 3))) - J0) / abs(J0) for _ in range(10))
    P1, P2 = pb.split(x)
    dc = abs(div_curl_audit(P1, P2, g).whole_cell_relative)
    ok = rep.converged and el <= 1e-6 and shift_err <= 1e-13 and dc <= 1e-12 and gap > 0
    record(9, ok, f"p = 4.5, lambda = {lam} (gap {gap:.2f}): J = {rep.J:.8f}, EL residual {el:.1e}, "
                  f"shift {shift_err:.1e}, whole-cell Div-Curl {dc:.1e}")
    assert ok


def test_c10_limiting_absorption(record):
    g = GridSpec(16)
    rng = np.random.default_rng(10)
    f = spc.project_divfree(rng.standard_normal(g.shape + (3,)), g)
    errs, orders = lap_order(g, 2.5, f)
    ok = min(orders) >= 1.9
    record(10, ok, f"errors {', '.join(f'{e:.2e}' for e in errs)}; observed orders "
                   f"{', '.join(f'{o:.3f}' for o in orders)} (>= 1.9)")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
