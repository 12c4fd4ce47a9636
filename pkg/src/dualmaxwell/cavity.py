"""Staggered-grid curl-curl operator on a cube.

Unknowns live on the edges of an ``n^3`` cell grid (x-edges, then y-edges,
then z-edges, each block C-ordered over its index box), curls on faces and
potentials on nodes.  The difference matrices form an exact discrete complex,
``C @ G == 0``.

Mass matrices use corner quadrature: every cell is split into eight sub-cells
and each sub-cell takes the three edges (or faces) meeting at its corner as
its pointwise vector.  The sub-cell centres form a regular ``2n`` grid, which
is the quadrature :class:`~dualmaxwell.fields.VectorField` of the cavity, and
``M = S^T W S`` with ``S`` the sampling matrix and ``W`` the per-sub-cell
``dV * eps`` blocks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import GridSpec, Medium, VectorField

BCS = ("neumann", "dirichlet")
MAX_CELLS_PER_AXIS = 16
MAX_DENSE_EDGES = 4000


class CavityBuildError(RuntimeError):
    pass


class FredholmIncompatibility(ValueError):
    """Right-hand side violates the solvability condition of the linear problem.

    ``pairings`` maps eigen-index to ``<g1, phi_k>_eps`` (case ii); ``g2_norm``
    is set for the static case.
    """

    def __init__(self, message: str, pairings: Optional[dict] = None, g2_norm: Optional[float] = None,
                 tolerance: float = 0.0):
        super().__init__(message)
        self.pairings = pairings or {}
        self.g2_norm = g2_norm
        self.tolerance = tolerance


def _diff(n: int, h: float) -> sp.csr_matrix:
    """``(n, n+1)`` forward difference."""
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), format="csr") / h


def _kron3(a, b, c):
    return sp.kron(sp.kron(a, b), c, format="csr")


def edge_shapes(n: int):
    return [(n, n + 1, n + 1), (n + 1, n, n + 1), (n + 1, n + 1, n)]


def face_shapes(n: int):
    return [(n + 1, n, n), (n, n + 1, n), (n, n, n + 1)]


def _offsets(shapes):
    sizes = [int(np.prod(s)) for s in shapes]
    return np.concatenate([[0], np.cumsum(sizes)])


def gradient_matrix(n: int, h: float) -> sp.csr_matrix:
    D, I = _diff(n, h), sp.identity(n + 1, format="csr")
    return sp.vstack([_kron3(D, I, I), _kron3(I, D, I), _kron3(I, I, D)], format="csr")


def curl_matrix(n: int, h: float) -> sp.csr_matrix:
    D = _diff(n, h)
    In, In1 = sp.identity(n, format="csr"), sp.identity(n + 1, format="csr")
    Z = None
    # x-face: dy Ez - dz Ey ; y-face: dz Ex - dx Ez ; z-face: dx Ey - dy Ex
    rows = [
        [Z, -_kron3(In1, In, D), _kron3(In1, D, In)],
        [_kron3(In, In1, D), Z, -_kron3(D, In1, In)],
        [-_kron3(In, D, In1), _kron3(D, In, In1), Z],
    ]
    return sp.bmat(rows, format="csr")


def _sampling(n: int, shapes, picks) -> sp.csr_matrix:
    """Map a staggered vector to the ``2n`` sub-cell grid, component-interleaved."""
    m = 2 * n
    I, J, K = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    off = _offsets(shapes)
    base_rows = (I * m + J) * m + K
    rows, cols = [], []
    for comp, (shape, pick) in enumerate(zip(shapes, picks)):
        idx = tuple(f(X) for f, X in zip(pick, (I, J, K)))
        cols.append((np.ravel_multi_index(idx, shape) + off[comp]).ravel())
        rows.append((3 * base_rows + comp).ravel())
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(3 * m ** 3, off[-1]))


_cell = lambda X: X // 2  # noqa: E731
_node = lambda X: (X + 1) // 2  # noqa: E731


def edge_sampling(n: int) -> sp.csr_matrix:
    return _sampling(n, edge_shapes(n), [(_cell, _node, _node), (_node, _cell, _node), (_node, _node, _cell)])


def face_sampling(n: int) -> sp.csr_matrix:
    return _sampling(n, face_shapes(n), [(_node, _cell, _cell), (_cell, _node, _cell), (_cell, _cell, _node)])


def _block_weights(mat, npts: int, dV: float) -> sp.csr_matrix:
    if np.isscalar(mat):
        return sp.identity(3 * npts, format="csr") * (mat * dV)
    blocks = np.ascontiguousarray(mat.reshape(npts, 3, 3)) * dV
    return sp.bsr_matrix((blocks, np.arange(npts), np.arange(npts + 1)), shape=(3 * npts, 3 * npts)).tocsr()


def _interior_edge_mask(n: int) -> np.ndarray:
    masks = []
    for comp, shape in enumerate(edge_shapes(n)):
        idx = np.indices(shape)
        ok = np.ones(shape, dtype=bool)
        for ax in range(3):
            if ax != comp:
                ok &= (idx[ax] > 0) & (idx[ax] < n)
        masks.append(ok.ravel())
    return np.concatenate(masks)


def _interior_node_mask(n: int) -> np.ndarray:
    idx = np.indices((n + 1,) * 3)
    return np.all((idx > 0) & (idx < n), axis=0).ravel()


@dataclass
class EigIndexSet:
    lam: float
    indices: np.ndarray
    match_tol: float

    @property
    def dimension(self) -> int:
        return int(self.indices.size)

    def __bool__(self):
        return self.indices.size > 0


@dataclass
class LinearSolveResult:
    solution: np.ndarray
    case: str
    kernel_dim: int
    residual: float = float("nan")


@dataclass
class CavitySystem:
    """Discrete operators, Helmholtz splitting and (optionally) the dense eigensystem."""

    grid: GridSpec
    bc: str
    medium: Medium
    G: sp.csr_matrix
    C: sp.csr_matrix
    S: sp.csr_matrix
    SF: sp.csr_matrix
    W_eps: sp.csr_matrix
    W_mu_inv: sp.csr_matrix
    M_eps: sp.csr_matrix
    M_mu_inv: sp.csr_matrix
    K: sp.csr_matrix
    edge_mask: np.ndarray
    node_mask: np.ndarray
    X_basis: Optional[np.ndarray] = None
    eigvals: Optional[np.ndarray] = None
    _lap: object = field(default=None, repr=False)
    _mass: object = field(default=None, repr=False)
    _energy: object = field(default=None, repr=False)
    _GT: object = field(default=None, repr=False)
    _ST: object = field(default=None, repr=False)

    # -- sizes -----------------------------------------------------------
    @property
    def GT(self) -> sp.csr_matrix:
        if self._GT is None:
            self._GT = self.G.T.tocsr()
        return self._GT

    @property
    def ST(self) -> sp.csr_matrix:
        if self._ST is None:
            self._ST = self.S.T.tocsr()
        return self._ST

    @property
    def n(self) -> int:
        return self.grid.n_per_axis

    @property
    def n_edges(self) -> int:
        return self.G.shape[0]

    @property
    def gradient_dim(self) -> int:
        return self.G.shape[1] - (1 if self.bc == "neumann" else 0)

    @property
    def quad_grid(self) -> GridSpec:
        return GridSpec(2 * self.n, self.grid.cell_length, "cavity")

    @property
    def has_eigensystem(self) -> bool:
        return self.X_basis is not None

    def _require_eig(self):
        if not self.has_eigensystem:
            raise CavityBuildError("system was built without the dense eigensystem")

    # -- factorizations --------------------------------------------------
    def _lap_solver(self):
        if self._lap is None:
            L = (self.G.T @ self.M_eps @ self.G).tocsc()
            if self.bc == "neumann":
                L = L[1:, 1:]
            self._lap = spla.splu(L.tocsc())
        return self._lap

    def _mass_solver(self):
        if self._mass is None:
            self._mass = spla.splu(self.M_eps.tocsc())
        return self._mass

    def solve_potential(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``G^T M G w = rhs`` (mean-zero gauge in the Neumann case)."""
        lu = self._lap_solver()
        if self.bc == "neumann":
            w = np.zeros((self.G.shape[1],) + rhs.shape[1:])
            w[1:] = lu.solve(np.ascontiguousarray(rhs[1:]))
            return w - w.mean(axis=0)
        return lu.solve(np.ascontiguousarray(rhs))

    def energy_dual_norm(self, r: np.ndarray) -> float:
        """Norm of a functional dual to the energy norm ``e^T (K + M) e``."""
        if self._energy is None:
            self._energy = spla.splu((self.K + self.M_eps).tocsc())
        return float(np.sqrt(max(r @ self._energy.solve(np.ascontiguousarray(r)), 0.0)))

    def mass_solve(self, r: np.ndarray) -> np.ndarray:
        return self._mass_solver().solve(np.ascontiguousarray(r))

    # -- inner products ----------------------------------------------------
    def inner(self, e: np.ndarray, f: np.ndarray) -> float:
        return float(e @ (self.M_eps @ f))

    def norm(self, e: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(e, e), 0.0)))

    def dual_norm(self, r: np.ndarray) -> float:
        """Norm of a functional ``r`` (edge load vector) dual to the ``M_eps`` norm."""
        return float(np.sqrt(max(r @ self.mass_solve(r), 0.0)))

    # -- fields ------------------------------------------------------------
    def sample(self, e: np.ndarray) -> VectorField:
        """Pointwise (quadrature grid) vector field of an edge vector."""
        return VectorField(self.quad_grid, (self.S @ e).reshape(self.quad_grid.shape + (3,)))

    def sample_curl(self, e: np.ndarray) -> VectorField:
        return VectorField(self.quad_grid, (self.SF @ (self.C @ e)).reshape(self.quad_grid.shape + (3,)))

    def load_vector(self, q: np.ndarray, weights: Optional[sp.csr_matrix] = None) -> np.ndarray:
        """``S^T W q``: pair a quadrature-grid field with every edge basis function."""
        W = self.W_eps if weights is None else weights
        return self.ST @ (W @ np.asarray(q).reshape(-1))

    def galerkin(self, q: np.ndarray) -> np.ndarray:
        """``eps``-weighted L2 projection of a quadrature-grid field onto edge vectors."""
        return self.mass_solve(self.load_vector(q))

    # -- eigen helpers ---------------------------------------------------
    def coords(self, e: np.ndarray) -> np.ndarray:
        """``<e, phi_k>_eps`` for every basis vector."""
        self._require_eig()
        return self.X_basis.T @ (self.M_eps @ e)

    def from_coords(self, c: np.ndarray) -> np.ndarray:
        self._require_eig()
        return self.X_basis @ c

    @property
    def lambda_max(self) -> float:
        self._require_eig()
        return float(self.eigvals[-1])

    def summary(self) -> dict:
        out = {
            "format_version": 1,
            "bc": self.bc,
            "dims": {
                "cells_per_axis": self.n,
                "cell_length": self.grid.cell_length,
                "edges": int(self.n_edges),
                "nodes": int(self.G.shape[1]),
                "gradient_space": int(self.gradient_dim),
                "x_space": int(self.n_edges - self.gradient_dim),
                "removed_boundary_edges": int(self.edge_mask.size - self.n_edges),
            },
        }
        if self.has_eigensystem:
            out["eigenvalues"] = [float(v) for v in self.eigvals]
            lam = self.medium.omega_sq
            if lam > 0:
                out["kernel_dims"] = {"omega_sq": lam, "eig_dim": eig_index(lam, self).dimension}
        return out


def build_cavity(grid: GridSpec, bc: str = "neumann", medium: Optional[Medium] = None, dense: bool = True,
                 max_dense_edges: int = MAX_DENSE_EDGES) -> CavitySystem:
    """Assemble the staggered-grid system on the cube ``[0, L]^3``.

    ``grid.n_per_axis`` counts cells.  With ``dense=True`` the full
    eigensystem of the curl-curl operator on the eps-divergence-free subspace
    is computed; this is guarded by ``max_dense_edges``.
    """
    if bc not in BCS:
        raise ValueError(f"bc must be one of {BCS}")
    medium = medium or Medium()
    n, h = grid.n_per_axis, grid.spacing
    if n > MAX_CELLS_PER_AXIS:
        raise CavityBuildError(f"memory guard: at most {MAX_CELLS_PER_AXIS} cells per axis, got {n}")
    for name, fld in (("eps_field", medium.eps_field), ("mu_field", medium.mu_field)):
        if fld is not None and fld.shape[0] != n:
            raise ValueError(f"{name} must have one matrix per cell ({n} per axis)")
    grid = GridSpec(n, grid.cell_length, "cavity")
    G_full = gradient_matrix(n, h)
    C_full = curl_matrix(n, h)
    S_full = edge_sampling(n)
    SF = face_sampling(n)
    if bc == "dirichlet":
        emask, nmask = _interior_edge_mask(n), _interior_node_mask(n)
    else:
        emask, nmask = np.ones(G_full.shape[0], bool), np.ones(G_full.shape[1], bool)
    G = G_full[emask][:, nmask].tocsr()
    C = C_full[:, emask].tocsr()
    S = S_full[:, emask].tocsr()
    qgrid = GridSpec(2 * n, grid.cell_length, "cavity")
    npts = (2 * n) ** 3
    W_eps = _block_weights(medium.eps_on(qgrid), npts, qgrid.dV)
    W_mu = _block_weights(medium.mu_inv_on(qgrid), npts, qgrid.dV)
    M_eps = (S.T @ W_eps @ S).tocsr()
    M_mu = (SF.T @ W_mu @ SF).tocsr()
    K = (C.T @ M_mu @ C).tocsr()
    K = ((K + K.T) * 0.5).tocsr()
    M_eps = ((M_eps + M_eps.T) * 0.5).tocsr()
    sys = CavitySystem(grid, bc, medium, G, C, S, SF, W_eps, W_mu, M_eps, M_mu, K, emask, nmask)
    try:
        sys._mass_solver()
    except RuntimeError as exc:
        raise CavityBuildError(f"mass matrix is not SPD: {exc}") from exc
    if dense:
        if sys.n_edges > max_dense_edges:
            raise CavityBuildError(
                f"memory guard: dense eigensolve on {sys.n_edges} edges exceeds {max_dense_edges}; "
                "use dense=False with lowest_eigenvalues()")
        _dense_eigensystem(sys)
    return sys


def _dense_eigensystem(sys: CavitySystem):
    Kd, Md = sys.K.toarray(), sys.M_eps.toarray()
    try:
        vals, vecs = sla.eigh(Kd, Md)
    except np.linalg.LinAlgError as exc:
        raise CavityBuildError(f"generalized eigensolve failed (mass matrix not SPD?): {exc}") from exc
    r = sys.gradient_dim
    scale = max(abs(vals[-1]), 1.0)
    if r and vals[r - 1] > 1e-8 * scale:
        raise CavityBuildError("kernel of the curl-curl operator does not match the gradient space")
    Phi = vecs[:, r:]
    # clean residual gradient content, restore M-orthonormality, then Rayleigh-Ritz
    Phi = Phi - sys.G @ sys.solve_potential(sys.G.T @ (sys.M_eps @ Phi))
    R = np.linalg.cholesky(Phi.T @ (sys.M_eps @ Phi))
    Phi = sla.solve_triangular(R, Phi.T, lower=True).T
    A = Phi.T @ (sys.K @ Phi)
    lam, V = np.linalg.eigh((A + A.T) * 0.5)
    sys.X_basis = Phi @ V
    sys.eigvals = lam


def lowest_eigenvalues(sys: CavitySystem, k: int = 6, penalty: float = 100.0) -> np.ndarray:
    """Lowest ``k`` eigenvalues on the eps-divergence-free subspace via sparse shift-invert.

    Gradients are pushed up by a grad-div penalty ``penalty * M G D G^T M``
    (``D`` = inverse node volume), which leaves every divergence-free
    eigenpair untouched; returned pairs are filtered by their divergence.
    """
    h3 = sys.grid.spacing ** 3
    MG = sys.M_eps @ sys.G
    A = (sys.K + penalty * (MG @ MG.T) / h3).tocsc()
    want = k
    for _ in range(6):
        m = min(want + 10, sys.n_edges - 2)
        vals, vecs = spla.eigsh(A, k=m, M=sys.M_eps.tocsc(), sigma=0.0, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        div = np.linalg.norm(sys.G.T @ (sys.M_eps @ vecs), axis=0)
        size = np.sqrt(np.einsum("ij,ij->j", vecs, sys.M_eps @ vecs))
        keep = div <= 1e-8 * size * np.sqrt(np.abs(vals).max() + 1.0)
        if keep.sum() >= k:
            return vals[keep][:k]
        want *= 2
    raise CavityBuildError("could not isolate enough divergence-free eigenpairs")


def hodge_project(f: np.ndarray, sys: CavitySystem, return_potential: bool = False):
    """``f = f_X + f_Y`` with ``G^T M f_X = 0`` and ``f_Y = G w`` eps-orthogonal to ``f_X``."""
    w = sys.solve_potential(sys.GT @ (sys.M_eps @ f))
    fY = sys.G @ w
    fX = f - fY
    if return_potential:
        return fX, fY, w
    return fX, fY


def apply_L(c: np.ndarray, sys: CavitySystem) -> np.ndarray:
    """Curl-curl operator in X-basis coordinates, ``Phi^T C^T M_mu_inv C Phi c``."""
    sys._require_eig()
    return sys.X_basis.T @ (sys.K @ (sys.X_basis @ c))


def eig_index(lam: float, sys: CavitySystem, match_tol: Optional[float] = None) -> EigIndexSet:
    """Indices of eigenvalues within ``match_tol`` of ``lam``; touching clusters are merged."""
    sys._require_eig()
    if match_tol is None:
        match_tol = 1e-8 * sys.lambda_max
    ev = sys.eigvals
    hit = np.abs(ev - lam) <= match_tol
    if hit.any():
        lo, hi = np.flatnonzero(hit)[[0, -1]]
        while lo > 0 and ev[lo] - ev[lo - 1] <= match_tol:
            lo -= 1
        while hi < ev.size - 1 and ev[hi + 1] - ev[hi] <= match_tol:
            hi += 1
        idx = np.arange(lo, hi + 1)
    else:
        idx = np.array([], dtype=int)
    return EigIndexSet(float(lam), idx, float(match_tol))


def classify(lam: float, sys: CavitySystem, match_tol: Optional[float] = None) -> str:
    """``"III"`` for lam == 0, ``"II"`` on the spectrum, ``"I"`` otherwise."""
    if lam == 0:
        return "III"
    return "II" if eig_index(lam, sys, match_tol) else "I"


def weak_residual(e: np.ndarray, g: np.ndarray, lam: float, sys: CavitySystem) -> float:
    """``||K e - lam M e - M g||_* / ||g||_M``."""
    r = sys.K @ e - lam * (sys.M_eps @ e) - sys.M_eps @ g
    gn = sys.norm(g)
    return sys.dual_norm(r) / (gn if gn > 0 else 1.0)


def linear_solve(g: np.ndarray, lam: float, sys: CavitySystem, match_tol: Optional[float] = None,
                 compat_tol: Optional[float] = None) -> LinearSolveResult:
    """Weak solution of ``(L - lam) E = g`` following the Fredholm alternative.

    Raises :class:`FredholmIncompatibility` when the right-hand side pairs with
    the eigenspace at ``lam`` (or, for ``lam == 0``, has a gradient part).
    """
    sys._require_eig()
    g1, g2 = hodge_project(g, sys)
    a = sys.coords(g1)
    gnorm = sys.norm(g)
    tol = 1e-8 * gnorm if compat_tol is None else compat_tol
    ev = sys.eigvals
    if lam == 0:
        g2n = sys.norm(g2)
        if g2n > tol:
            raise FredholmIncompatibility(
                f"static problem requires a divergence-free right-hand side; ||g2|| = {g2n:.3e} > {tol:.3e}",
                g2_norm=g2n, tolerance=tol)
        e = sys.from_coords(a / ev)
        res = LinearSolveResult(e, "III", sys.gradient_dim)
    else:
        idx = eig_index(lam, sys, match_tol)
        if idx:
            bad = {int(k): float(a[k]) for k in idx.indices if abs(a[k]) > tol}
            if bad:
                raise FredholmIncompatibility(
                    f"right-hand side pairs with the eigenspace at lambda={lam:g}: "
                    f"max |<g1, phi_k>| = {max(abs(v) for v in bad.values()):.3e} > {tol:.3e}",
                    pairings=bad, tolerance=tol)
            coef = np.zeros_like(a)
            keep = np.ones(a.size, bool)
            keep[idx.indices] = False
            coef[keep] = a[keep] / (ev[keep] - lam)
            res = LinearSolveResult(sys.from_coords(coef) - g2 / lam, "II", idx.dimension)
        else:
            res = LinearSolveResult(sys.from_coords(a / (ev - lam)) - g2 / lam, "I", 0)
    rhs = g1 if res.case == "III" else g
    res.residual = weak_residual(res.solution, rhs, lam, sys)
    return res


def x_lambda_project(f: np.ndarray, lam: float, sys: CavitySystem, match_tol: Optional[float] = None) -> np.ndarray:
    """Remove the gradient part and the components along the eigenspace at ``lam``."""
    fX, _ = hodge_project(f, sys)
    idx = eig_index(lam, sys, match_tol)
    if not idx:
        return fX
    Phi = sys.X_basis[:, idx.indices]
    return fX - Phi @ (Phi.T @ (sys.M_eps @ fX))


def export_summary(sys: CavitySystem, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(sys.summary(), indent=2))
    return path


def export_triplets(mat: sp.spmatrix, path) -> Path:
    """Coordinate text format: ``rows cols nnz`` header, then ``i j value`` lines."""
    coo = sp.coo_matrix(mat)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v!r}\n")
    return path
