"""Dual functionals and their Riesz gradients.

A problem owns the discretization and exposes a flat state vector ``x`` with
an inner product in which :meth:`grad` is the Riesz representative of ``J'``.

Cavity state: ``x = (c, w)`` with ``P = Phi c + G w``; ``c`` are coordinates
in the eps-orthonormal eigenbasis of the divergence-free space and ``w`` a
node potential, so ``P2 = G w`` is a discrete gradient by construction.  The
pairing is ``c.d + w^T (G^T M G) v`` which equals ``<P, Q>_eps``.

Full-space state: ``x = (P1, P2)`` as real periodic fields with the plain L2
pairing; ``P1`` is divergence-free and ``P2`` a gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .. import cavity as cv
from .. import spectral as spc
from ..fields import GridSpec, VectorField
from ..nonlin import Nonlinearity

MODES = ("cavity_I", "cavity_II", "cavity_III", "fullspace")


class ModeMismatchError(ValueError):
    """Requested case does not match the spectral classification of omega^2."""


@dataclass
class DualState:
    mode: str
    P1: np.ndarray
    P2: Optional[np.ndarray]
    cache: dict = field(default_factory=dict)


@dataclass
class PrimalResult:
    """Primal field recovered from a dual state.

    ``E`` is the field on the discrete unknowns (cavity: Galerkin edge vector
    ``M^-1 S^T W psi``; full space: ``psi(P)`` itself), ``E_quad`` the
    pointwise field ``psi(x, eps P)``, and ``E1``/``E2`` the component
    formulas.  ``agreement`` is the relative distance of ``E`` to ``E1 + E2``.
    """

    E: np.ndarray
    E_quad: VectorField
    E1: np.ndarray
    E2: np.ndarray
    agreement: float


def _pointwise_eps(sys: cv.CavitySystem):
    eps = sys.medium.eps_on(sys.quad_grid)
    return eps if np.isscalar(eps) else eps.reshape(-1, 3, 3)


def _snap(Q: np.ndarray, tol: float) -> np.ndarray:
    """Zero pointwise values below ``tol * max|Q|``.

    Such values are cancellation residue of exact zeros; ``psi`` is only
    Hoelder at the origin and would amplify them to ``tol^(1/(p-1))``.
    """
    if tol <= 0:
        return Q
    mag = np.linalg.norm(Q, axis=-1)
    small = mag <= tol * mag.max()
    if small.any():
        Q = Q.copy()
        Q[small] = 0.0
    return Q


def _weight_on(a, shape):
    if np.isscalar(a):
        return a
    a = np.asarray(a, dtype=float)
    if a.size != int(np.prod(shape)):
        raise ValueError(f"weight field has {a.size} entries, expected {int(np.prod(shape))}")
    return a.reshape(-1)


class DualProblem:
    mode: str = ""
    nl: Nonlinearity
    lam: float
    zero_snap: float = 1e-14

    # -- vector space -----------------------------------------------------
    def inner(self, x, y) -> float:
        raise NotImplementedError

    def norm(self, x) -> float:
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    # -- functional --------------------------------------------------------
    def parts(self, x) -> tuple:
        """``(A, B)``: the Psi integral and the quadratic part, ``J = A + B``."""
        raise NotImplementedError

    def J(self, x) -> float:
        A, B = self.parts(x)
        return A + B

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def psi_norm(self, x) -> float:
        """Size of ``psi(x, eps P)``, the natural scale of the gradient."""
        raise NotImplementedError

    def relative_grad(self, x, g=None) -> float:
        g = self.grad(x) if g is None else g
        s = self.psi_norm(x)
        return self.norm(g) / s if s > 0 else 0.0

    def project(self, x) -> np.ndarray:
        """Re-impose the structural constraints of the state space."""
        return x

    def hessian(self, x, rel_floor: float = 0.0):
        """Callable ``v -> J''(x) v`` in Riesz form (derivative of :meth:`grad` along ``v``).

        ``rel_floor`` caps the pointwise Jacobian of psi where ``|P|`` is below
        ``rel_floor * max |P|``; 0 gives the exact second derivative.
        """
        raise NotImplementedError

    def hess_apply(self, x, v, rel_floor: float = 0.0) -> np.ndarray:
        return self.hessian(x, rel_floor)(v)

    def preconditioner(self, x):
        """Callable ``g -> H^-1 g`` with ``H`` the Hessian of the Psi term at ``x`` (SPD).

        The image pairs positively with ``g`` whenever ``g != 0``.
        """
        return lambda g: g

    def precondition(self, x, g) -> np.ndarray:
        return self.preconditioner(x)(g)

    def reflect(self, x, axis: int) -> np.ndarray:
        raise NotImplementedError

    def set_symmetry(self, symmetry) -> None:
        """Hook for exact parity projection inside evaluations; default does nothing."""

    def state(self, x) -> DualState:
        raise NotImplementedError

    def to_primal(self, x) -> PrimalResult:
        raise NotImplementedError


class CavityProblem(DualProblem):
    """Cases I, II and III on a :class:`~dualmaxwell.cavity.CavitySystem` with eigensystem."""

    def __init__(self, sys: cv.CavitySystem, nl: Nonlinearity, case: Optional[str] = None,
                 match_tol: Optional[float] = None):
        sys._require_eig()
        self.sys, self.nl = sys, nl
        self.lam = lam = float(sys.medium.omega_sq)
        actual = cv.classify(lam, sys, match_tol)
        case = actual if case is None else case
        if case != actual:
            raise ModeMismatchError(f"case {case} requested but omega^2={lam:g} classifies as case {actual}")
        if case == "III" and not sys.medium.eps_is_identity:
            raise ModeMismatchError("the static case is formulated with eps = I")
        self.case = case
        self.mode = f"cavity_{case}"
        ev = sys.eigvals
        self.kernel = cv.eig_index(lam, sys, match_tol).indices if case == "II" else np.array([], int)
        r = np.zeros_like(ev)
        keep = np.ones(ev.size, bool)
        keep[self.kernel] = False
        r[keep] = 1.0 / (ev[keep] - lam)
        self.r, self.keep = r, keep
        self.Phi = np.ascontiguousarray(sys.X_basis)
        self.PhiT = np.ascontiguousarray(self.Phi.T)
        self.nx = ev.size
        self.nw = 0 if case == "III" else sys.G.shape[1]
        self.size = self.nx + self.nw
        self.lap = (sys.G.T @ sys.M_eps @ sys.G).tocsr()
        self.eps_q = _pointwise_eps(sys)
        self.a_q = _weight_on(nl.a, sys.quad_grid.shape)
        self.dV = sys.quad_grid.dV
        self._refl = {}
        self._sym = []

    # -- helpers -----------------------------------------------------------
    def split(self, x):
        return x[: self.nx], x[self.nx:]

    def edge(self, x) -> np.ndarray:
        c, w = self.split(x)
        e = self.Phi @ c
        if self.nw:
            e = e + self.sys.G @ w
        for Re, sign in self._sym:
            e = 0.5 * (e + sign * (Re @ e))
        return e

    def _eps_points(self, x) -> np.ndarray:
        return _snap(self._eps_points_edge(self.edge(x)), self.zero_snap)

    def _eps_points_edge(self, e) -> np.ndarray:
        Pq = (self.sys.S @ e).reshape(-1, 3)
        if np.isscalar(self.eps_q):
            return self.eps_q * Pq
        return np.einsum("kij,kj->ki", self.eps_q, Pq)

    def from_edge(self, e: np.ndarray) -> np.ndarray:
        """Coordinates of an edge vector (its X part and gradient potential)."""
        eX, _, w = cv.hodge_project(e, self.sys, return_potential=True)
        c = self.PhiT @ (self.sys.M_eps @ eX)
        c[~self.keep] = 0.0
        if self.nw == 0:
            return c
        return np.concatenate([c, w])

    def inner(self, x, y) -> float:
        c, w = self.split(x)
        d, v = self.split(y)
        s = float(c @ d)
        if self.nw:
            s += float(w @ (self.lap @ v))
        return s

    # -- functional --------------------------------------------------------
    def parts(self, x):
        c, w = self.split(x)
        A = self.dV * float(np.sum(self.nl.eval_Psi(self._eps_points(x), self.a_q)))
        B = -0.5 * float(np.sum(self.r * c * c))
        if self.nw:
            B += 0.5 / self.lam * float(w @ (self.lap @ w))
        return A, B

    def _load(self, x):
        psi = self.nl.eval_psi(self._eps_points(x), self.a_q)
        return psi, self.sys.load_vector(psi)

    def grad(self, x) -> np.ndarray:
        c, w = self.split(x)
        _, b = self._load(x)
        gc = self.PhiT @ b - self.r * c
        gc[~self.keep] = 0.0
        if not self.nw:
            return gc
        gw = self.sys.solve_potential(self.sys.GT @ b) + w / self.lam
        return np.concatenate([gc, gw])

    def hessian(self, x, rel_floor: float = 0.0):
        D = self.nl.psi_jacobian(self._eps_points(x), self.a_q, rel_floor=rel_floor)
        sys = self.sys

        def apply(v):
            dQ = self._eps_points_edge(self.edge(v))
            db = sys.load_vector(np.einsum("kij,kj->ki", D, dQ))
            c, w = self.split(v)
            gc = self.PhiT @ db - self.r * c
            gc[~self.keep] = 0.0
            if not self.nw:
                return gc
            return np.concatenate([gc, sys.solve_potential(sys.GT @ db) + w / self.lam])

        return apply

    def psi_norm(self, x) -> float:
        psi, b = self._load(x)
        return float(np.sqrt(max(psi.reshape(-1) @ (self.sys.W_eps @ psi.reshape(-1)), 0.0)))

    def preconditioner(self, x):
        if self.nl.kind != "power":
            return lambda g: g
        D = self.nl.psi_jacobian(self._eps_points(x), self.a_q)
        eps = self.eps_q
        if np.isscalar(eps):
            B = (eps * eps * self.dV) * D
        else:
            B = self.dV * np.einsum("kij,kjl,klm->kim", eps, D, eps)
        npts = B.shape[0]
        W = sparse.bsr_matrix((B, np.arange(npts), np.arange(npts + 1)), shape=(3 * npts, 3 * npts))
        S = self.sys.S
        lu = spla.splu((S.T @ W.tocsr() @ S).tocsc())
        return lambda g: self.project(self.from_edge(lu.solve(self.sys.M_eps @ self.edge(g))))

    def project(self, x):
        x = x.copy()
        x[: self.nx][~self.keep] = 0.0
        if self.nw and self.sys.bc == "neumann":
            x[self.nx:] -= x[self.nx:].mean()
        return x

    # -- symmetry --------------------------------------------------------
    def edge_reflection(self, axis: int) -> sparse.csr_matrix:
        """Exact signed permutation of edge vectors induced by ``x_axis -> L - x_axis``."""
        sys, m = self.sys, 2 * self.sys.n
        q = np.flip(np.arange(3 * m ** 3).reshape(m, m, m, 3), axis=axis).reshape(-1)
        sign = np.where(np.arange(3 * m ** 3) % 3 == axis, -1.0, 1.0)
        S = sys.S.tocsc()
        rows = S.indices[S.indptr[:-1]]  # one quadrature sample per edge
        Sr = sys.S.tocsr()
        target = Sr.indices[Sr.indptr[q[rows]]]
        ne = S.shape[1]
        return sparse.csr_matrix((sign[rows], (np.arange(ne), target)), shape=(ne, ne))

    def _reflection(self, axis: int):
        if axis not in self._refl:
            sys, n = self.sys, self.sys.n
            Re = self.edge_reflection(axis)
            Rc = self.PhiT @ (sys.M_eps @ (Re @ self.Phi))
            nodes = np.flip(np.arange((n + 1) ** 3).reshape((n + 1,) * 3), axis=axis).reshape(-1)
            full_to_kept = -np.ones((n + 1) ** 3, int)
            kept = np.flatnonzero(sys.node_mask)
            full_to_kept[kept] = np.arange(kept.size)
            self._refl[axis] = (Rc, full_to_kept[nodes[kept]], Re)
        return self._refl[axis]

    def set_symmetry(self, symmetry) -> None:
        """Evaluate with edge vectors projected exactly onto a parity class (or none)."""
        self._sym = [(self._reflection(a)[2], s) for a, s in symmetry]

    def reflect(self, x, axis: int):
        Rc, node_perm, _ = self._reflection(axis)
        c, w = self.split(x)
        out = Rc @ c
        if self.nw:
            out = np.concatenate([out, w[node_perm]])
        return out

    # -- seeds / output ------------------------------------------------------
    def eigen_seed(self, k: int) -> np.ndarray:
        x = self.zeros()
        x[k] = 1.0
        return x

    def above_index(self) -> np.ndarray:
        """Eigen-indices with ``lambda_k > omega^2`` (the directions with negative quadratic part)."""
        return np.flatnonzero((self.sys.eigvals > self.lam) & self.keep)

    def random_state(self, rng: np.random.Generator) -> np.ndarray:
        x = rng.standard_normal(self.size)
        if self.nw:
            x[self.nx:] *= self.sys.grid.spacing
        return self.project(x)

    def state(self, x) -> DualState:
        c, w = self.split(x)
        return DualState(self.mode, c.copy(), (self.sys.G @ w) if self.nw else None)

    def to_primal(self, x) -> PrimalResult:
        sys = self.sys
        c, w = self.split(x)
        psi, b = self._load(x)
        E = sys.mass_solve(b)
        coef = self.r * c
        if self.case == "II":
            coef[~self.keep] = self.Phi[:, ~self.keep].T @ b
        E1 = self.Phi @ coef
        if self.case == "III":
            E2 = sys.G @ sys.solve_potential(sys.G.T @ b)
        else:
            E2 = -(sys.G @ w) / self.lam
        En = sys.norm(E)
        agreement = sys.norm(E - E1 - E2) / En if En > 0 else 0.0
        Eq = VectorField(sys.quad_grid, psi.reshape(sys.quad_grid.shape + (3,)))
        return PrimalResult(E, Eq, E1, E2, agreement)


class FullspaceProblem(DualProblem):
    """Periodic proxy of the whole-space problem with the real resolvent ``R``."""

    mode = "fullspace"

    def __init__(self, grid: GridSpec, nl: Nonlinearity, lam: float, delta_rel: float = 1e-6,
                 check_growth: bool = True):
        if grid.mode != "periodic":
            raise ModeMismatchError("full-space proxy lives on a periodic grid")
        if check_growth:
            nl.require_fullspace()
        if not lam > 0:
            raise ModeMismatchError("full-space mode needs lambda > 0")
        spc.check_off_resonance(grid, lam, delta_rel)
        self.grid, self.nl, self.lam = grid, nl, float(lam)
        self.mult = spc.resolvent_multiplier(grid, lam)
        self.a_q = nl.a if np.isscalar(nl.a) else np.asarray(nl.a, dtype=float).reshape(grid.shape)
        self.npt = 3 * grid.n_per_axis ** 3
        self.size = 2 * self.npt
        self.dV = grid.dV

    def split(self, x):
        shape = self.grid.shape + (3,)
        return x[: self.npt].reshape(shape), x[self.npt:].reshape(shape)

    def inner(self, x, y) -> float:
        return float(x @ y) * self.dV

    def _points(self, x) -> np.ndarray:
        P1, P2 = self.split(x)
        return _snap(P1 + P2, self.zero_snap)

    def R(self, P1: np.ndarray) -> np.ndarray:
        c = np.fft.fftn(P1, axes=(0, 1, 2), norm="forward") * self.mult[..., None]
        return np.fft.ifftn(c, axes=(0, 1, 2), norm="forward").real

    def parts(self, x):
        P1, P2 = self.split(x)
        A = self.dV * float(np.sum(self.nl.eval_Psi(self._points(x), self.a_q)))
        B = self.dV * (0.5 / self.lam * float(np.sum(P2 * P2)) - 0.5 * float(np.sum(P1 * self.R(P1))))
        return A, B

    def grad(self, x) -> np.ndarray:
        P1, P2 = self.split(x)
        psiX, psiY = spc.split_real(self.nl.eval_psi(self._points(x), self.a_q), self.grid)
        return np.concatenate([(psiX - self.R(P1)).ravel(), (psiY + P2 / self.lam).ravel()])

    def hessian(self, x, rel_floor: float = 0.0):
        P1, P2 = self.split(x)
        D = self.nl.psi_jacobian(self._points(x), self.a_q, rel_floor=rel_floor)

        def apply(v):
            V1, V2 = self.split(v)
            dX, dY = spc.split_real(np.einsum("...ij,...j->...i", D, V1 + V2), self.grid)
            return np.concatenate([(dX - self.R(V1)).ravel(), (dY + V2 / self.lam).ravel()])

        return apply

    def psi_norm(self, x) -> float:
        P1, P2 = self.split(x)
        psi = self.nl.eval_psi(self._points(x), self.a_q)
        return float(np.sqrt(np.sum(psi * psi) * self.dV))

    def project(self, x):
        P1, P2 = self.split(x)
        X1, _ = spc.split_real(P1, self.grid)
        _, Y2 = spc.split_real(P2, self.grid)
        return np.concatenate([X1.ravel(), Y2.ravel()])

    def preconditioner(self, x):
        if self.nl.kind != "power":
            return lambda g: g
        P1, P2 = self.split(x)
        Dinv = np.linalg.inv(self.nl.psi_jacobian(self._points(x), self.a_q))

        def apply(g):
            g1, g2 = self.split(g)
            d = np.einsum("...ij,...j->...i", Dinv, g1 + g2).ravel()
            return self.project(np.concatenate([d, d]))

        return apply

    def reflect(self, x, axis: int):
        out = []
        for P in self.split(x):
            Q = np.roll(np.flip(P, axis=axis), 1, axis=axis).copy()
            Q[..., axis] *= -1
            out.append(Q.ravel())
        return np.concatenate(out)

    def shift(self, x, k) -> np.ndarray:
        """Translate both components by the integer grid shift ``k``."""
        return np.concatenate([np.roll(P, tuple(k), axis=(0, 1, 2)).ravel() for P in self.split(x)])

    def sector_seed(self, j: int, width: float = 1.0) -> np.ndarray:
        """Divergence-free shell function ``i chi_j(|xi|^2) (-xi_2, xi_1, 0)``.

        ``chi_j`` is the indicator of ``(lam + j*width, lam + (j+1)*width)``;
        empty shells on the grid raise ``ValueError``.
        """
        xi, k2 = spc.wavevectors(self.grid)
        chi = (k2 > self.lam + j * width) & (k2 < self.lam + (j + 1) * width)
        if not chi.any():
            raise ValueError(f"shell {j} contains no grid wavevectors")
        c = np.zeros(self.grid.shape + (3,), dtype=complex)
        c[..., 0] = -xi[..., 1]
        c[..., 1] = xi[..., 0]
        c *= 1j * chi[..., None]
        P1 = np.fft.ifftn(c, axes=(0, 1, 2), norm="forward").real
        if not np.any(P1):
            raise ValueError(f"shell {j} yields a zero sector function")
        return np.concatenate([P1.ravel(), np.zeros(self.npt)])

    def nonempty_shells(self, m: int, width: float = 1.0, max_j: int = 200) -> list:
        out = []
        for j in range(max_j):
            try:
                self.sector_seed(j, width)
            except ValueError:
                continue
            out.append(j)
            if len(out) == m:
                break
        return out

    def random_state(self, rng: np.random.Generator) -> np.ndarray:
        return self.project(rng.standard_normal(self.size))

    def state(self, x) -> DualState:
        P1, P2 = self.split(x)
        return DualState(self.mode, P1.copy(), P2.copy())

    def to_primal(self, x) -> PrimalResult:
        P1, P2 = self.split(x)
        E = self.nl.eval_psi(self._points(x), self.a_q)
        E1 = self.R(P1)
        E2 = -P2 / self.lam
        En = float(np.sqrt(np.sum(E * E)))
        agreement = float(np.sqrt(np.sum((E - E1 - E2) ** 2))) / En if En > 0 else 0.0
        return PrimalResult(E, VectorField(self.grid, E), E1, E2, agreement)
