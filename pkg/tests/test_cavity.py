import numpy as np
import pytest

from dualmaxwell import cavity as cv
from dualmaxwell.fields import GridSpec, Medium

from conftest import aniso_medium


def test_exact_sequence():
    G = cv.gradient_matrix(4, 0.25)
    C = cv.curl_matrix(4, 0.25)
    assert abs(C @ G).max() == 0


def test_gradients_are_in_kernel(cavity4, rng):
    e = cavity4.G @ rng.standard_normal(cavity4.G.shape[1])
    assert np.abs(cavity4.K @ e).max() < 1e-10 * np.abs(e).max()


def test_eigenbasis_orthonormal_and_divergence_free(cavity4):
    Phi = cavity4.X_basis
    gram = Phi.T @ (cavity4.M_eps @ Phi)
    assert np.allclose(gram, np.eye(gram.shape[0]), atol=1e-10)
    assert np.abs(cavity4.GT @ (cavity4.M_eps @ Phi)).max() < 1e-9


def test_eigenvalues_positive_and_sorted(cavity4):
    ev = cavity4.eigvals
    assert ev.min() > 0
    assert np.all(np.diff(ev) >= 0)


def test_sparse_lowest_match_dense(cavity4):
    sparse_sys = cv.build_cavity(GridSpec(4, 1.0, "cavity"), "neumann", aniso_medium(4), dense=False)
    low = cv.lowest_eigenvalues(sparse_sys, 4)
    assert np.allclose(low, cavity4.eigvals[:4], rtol=1e-8)


def test_pec_cube_lowest_mode_coarse():
    sys = cv.build_cavity(GridSpec(8, 1.0, "cavity"), "dirichlet", Medium())
    assert abs(sys.eigvals[0] / (2 * np.pi ** 2) - 1) < 0.05


def test_hodge_split(cavity4, rng):
    f = rng.standard_normal(cavity4.n_edges)
    f1, f2 = cv.hodge_project(f, cavity4)
    assert np.allclose(f1 + f2, f)
    assert abs(f1 @ (cavity4.M_eps @ f2)) < 1e-10 * (f @ (cavity4.M_eps @ f))


def test_classification(cavity4):
    ev = cavity4.eigvals
    assert cv.classify(0.0, cavity4) == "III"
    assert cv.classify(float(ev[2]), cavity4) == "II"
    assert cv.classify(0.5 * (ev[0] + ev[1]), cavity4) == "I"


def test_fredholm_cases(cavity4, rng):
    ev = cavity4.eigvals
    g = rng.standard_normal(cavity4.n_edges)
    assert cv.linear_solve(g, 0.5 * (ev[0] + ev[1]), cavity4).residual < 1e-8
    lam = float(ev[1])
    phi = cavity4.X_basis[:, cv.eig_index(lam, cavity4).indices[0]]
    with pytest.raises(cv.FredholmIncompatibility) as info:
        cv.linear_solve(g + phi, lam, cavity4)
    assert info.value.pairings
    assert cv.linear_solve(cv.x_lambda_project(g + phi, lam, cavity4), lam, cavity4).residual < 1e-8
    with pytest.raises(cv.FredholmIncompatibility):
        cv.linear_solve(g, 0.0, cavity4)
    g1, _ = cv.hodge_project(g, cavity4)
    assert cv.linear_solve(g1, 0.0, cavity4).residual < 1e-8


def test_dense_guard():
    with pytest.raises(cv.CavityBuildError):
        cv.build_cavity(GridSpec(16, 1.0, "cavity"), "neumann", Medium(), max_dense_edges=100)
