"""Radial nonlinearity ``f(x, E) = f0(x, |E|) E / |E|`` and its inverse.

Two kinds are supported.  ``power`` is the model ``f0(x, s) = a(x) s^(p-1)``
with closed forms for every quantity.  ``custom_monotone`` takes a user
profile ``g`` with derivative ``dg`` and sets ``f0(x, s) = a(x) g(s)``; its
inverse is found by safeguarded Newton iteration and the primitives by
adaptive quadrature.

All evaluators are vectorized over the leading axes: ``E`` and ``P`` are
``(..., 3)`` arrays and ``a`` is a scalar or an array broadcastable to
``E.shape[:-1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate

KINDS = ("power", "custom_monotone")


class InversionError(ArithmeticError):
    """Newton/bisection inversion of ``f0`` did not converge."""


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def _radial(v: np.ndarray, scale: np.ndarray, mag: np.ndarray) -> np.ndarray:
    """``scale(|v|) v / |v|`` with the value 0 at ``v = 0``."""
    safe = np.where(mag > 0, mag, 1.0)
    return (np.where(mag > 0, scale / safe, 0.0))[..., None] * v


@dataclass
class Nonlinearity:
    kind: str = "power"
    p: float = 4.0
    a: object = 1.0
    g: Optional[Callable] = None
    dg: Optional[Callable] = None
    G: Optional[Callable] = None  # optional primitive of g, otherwise quadrature
    a_floor: float = 1e-8
    growth_guard: float = 1e3
    rtol: float = 1e-12
    max_iter: int = 200
    pp: float = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 2 < self.p < 6:
            raise ValueError(f"p must lie in (2, 6), got {self.p}")
        a = self.a if np.isscalar(self.a) else np.asarray(self.a, dtype=float)
        if np.min(a) < self.a_floor:
            raise ValueError(f"weight a(x) must stay above {self.a_floor}")
        self.a = a
        if self.kind == "custom_monotone" and (self.g is None or self.dg is None):
            raise ValueError("custom_monotone needs the profile g and its derivative dg")
        self.pp = self.p / (self.p - 1)

    def with_weight(self, a) -> "Nonlinearity":
        return replace(self, a=a)

    def require_fullspace(self):
        if not 4 < self.p < 6:
            raise ValueError(f"full-space mode needs 4 < p < 6, got {self.p}")

    # -- radial profiles ----------------------------------------------------
    def f0(self, s, a=None):
        a = self.a if a is None else a
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            return a * s ** (self.p - 1)
        return a * self.g(s)

    def df0(self, s, a=None):
        a = self.a if a is None else a
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            return a * (self.p - 1) * s ** (self.p - 2)
        return a * self.dg(s)

    def F0(self, s, a=None):
        """``int_0^s f0``."""
        a = self.a if a is None else a
        s = np.asarray(s, dtype=float)
        if self.kind == "power":
            return a * s ** self.p / self.p
        if self.G is not None:
            return a * self.G(s)
        quad = np.vectorize(lambda t: integrate.quad(self.g, 0.0, t, epsabs=0, epsrel=1e-12, limit=200)[0])
        return a * quad(s)

    def psi0(self, z, a=None):
        """Inverse profile: ``f0(psi0(z)) = z``."""
        a = self.a if a is None else a
        z = np.asarray(z, dtype=float)
        if self.kind == "power":
            return (z / a) ** (1.0 / (self.p - 1))
        return self._invert(z / a)

    def Psi0(self, z, a=None):
        """``int_0^z psi0``."""
        a = self.a if a is None else a
        z = np.asarray(z, dtype=float)
        if self.kind == "power":
            return a ** (1 - self.pp) * z ** self.pp / self.pp
        if self.G is not None:
            # Young identity: Psi0(z) = z psi0(z) - F0(psi0(z))
            s = self.psi0(z, a)
            return z * s - self.F0(s, a)
        zb, ab = np.broadcast_arrays(z, a)
        out = np.empty(zb.shape)
        for idx in np.ndindex(zb.shape):
            aa = float(ab[idx])
            out[idx] = integrate.quad(lambda t: float(self.psi0(t, aa)), 0.0, float(zb[idx]),
                                      epsabs=0, epsrel=1e-10, limit=200)[0]
        return out

    def _invert(self, y: np.ndarray) -> np.ndarray:
        """Solve ``g(s) = y`` elementwise (``g`` increasing from 0)."""
        y = np.asarray(y, dtype=float)
        lo = np.zeros_like(y)
        hi = np.maximum(1.0, y) ** (1.0 / (self.p - 1)) * self.growth_guard
        grow = 0
        while np.any(self.g(hi) < y):
            hi = np.where(self.g(hi) < y, hi * 10.0, hi)
            grow += 1
            if grow > 50:
                raise InversionError("could not bracket the inverse of f0; is it unbounded?")
        s = np.where(y > 0, 0.5 * (lo + hi), 0.0)
        for _ in range(self.max_iter):
            val = self.g(s) - y
            lo = np.where(val < 0, s, lo)
            hi = np.where(val > 0, s, hi)
            d = self.dg(s)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = s - val / d
            ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
            s_new = np.where(ok, newton, 0.5 * (lo + hi))
            s_new = np.where(y > 0, s_new, 0.0)
            done = np.abs(s_new - s) <= self.rtol * np.maximum(np.abs(s_new), 1e-300)
            s = s_new
            if np.all(done | (y == 0)):
                return s
        width = float(np.max(hi - lo))
        raise InversionError(f"inversion did not converge in {self.max_iter} iterations; max bracket {width:.3e}")

    # -- vector maps -----------------------------------------------------
    def eval_f(self, E: np.ndarray, a=None) -> np.ndarray:
        E = np.asarray(E, dtype=float)
        mag = _norm(E)
        return _radial(E, self.f0(mag, a), mag)

    def eval_F(self, E: np.ndarray, a=None) -> np.ndarray:
        return self.F0(_norm(np.asarray(E, dtype=float)), a)

    def eval_psi(self, P: np.ndarray, a=None) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        mag = _norm(P)
        if self.kind == "power":
            a = self.a if a is None else a
            # psi0(z)/z = a^(-1/(p-1)) z^(1/(p-1) - 1), singular only at 0
            e = 1.0 / (self.p - 1)
            safe = np.where(mag > 0, mag, 1.0)
            return (np.where(mag > 0, a ** (-e) * safe ** (e - 1), 0.0))[..., None] * P
        return _radial(P, self.psi0(mag, a), mag)

    def eval_Psi(self, P: np.ndarray, a=None) -> np.ndarray:
        return self.Psi0(_norm(np.asarray(P, dtype=float)), a)

    def psi_jacobian(self, P: np.ndarray, a=None, rel_floor: float = 1e-8) -> np.ndarray:
        """Pointwise ``D psi(P)`` as ``(..., 3, 3)`` (power kind).

        ``|P|`` is floored at ``rel_floor * max |P|`` so the matrix stays finite
        where the field vanishes.
        """
        if self.kind != "power":
            raise NotImplementedError("Jacobian only available in closed form for the power kind")
        a = self.a if a is None else a
        mag = _norm(P)
        floor = rel_floor * float(mag.max(initial=0.0))
        safe = np.maximum(mag, floor) if floor > 0 else np.where(mag > 0, mag, 1.0)
        e = 1.0 / (self.p - 1)
        k = np.asarray(a, dtype=float) ** (-e) * safe ** (e - 1)
        u = P / safe[..., None]
        return k[..., None, None] * (np.eye(3) + (e - 1) * u[..., :, None] * u[..., None, :])


@dataclass
class ValidationReport:
    s_range: tuple
    n_samples: int
    f0_increasing: bool
    f0_over_s_increasing: bool
    c1: float
    c2: float
    dual_c1: float
    dual_c2: float
    c: float
    C: float
    growth_pass: bool
    ratio_pass: bool
    violations: list
    coverage: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def validate_assumptions(nl: Nonlinearity, s_min: float = 1e-3, s_max: float = 1e3, n_samples: int = 241,
                         stored: Optional[dict] = None, degeneracy_factor: float = 0.5) -> ValidationReport:
    """Sample the growth assumptions on ``[s_min, s_max]`` and report the sharpest constants.

    ``c1 = min (f0 s/2 - F)/s^p`` and ``c2 = c1 * min s^p/(f0 s)`` are the
    largest constants valid on the sample; the dual pair uses ``psi0`` and
    ``p'``.  Because a finite sample cannot certify all ``s``, each constant
    is recomputed on a range extended by one decade at both ends and flagged
    when it shrinks by more than ``degeneracy_factor``.
    """
    p, pp = nl.p, nl.pp
    a_vals = np.atleast_1d(np.asarray(nl.a, dtype=float)).ravel()
    a_vals = np.unique(np.round(a_vals, 14))
    if a_vals.size > 16:
        a_vals = np.quantile(a_vals, np.linspace(0, 1, 16))

    def constants(lo, hi):
        s = np.geomspace(lo, hi, n_samples)[None, :]
        a = a_vals[:, None]
        f, F, df = nl.f0(s, a), nl.F0(s, a), nl.df0(s, a)
        c1 = float(np.min((0.5 * f * s - F) / s ** p))
        c2 = c1 * float(np.min(s ** p / (f * s)))
        z = f
        Psi = nl.Psi0(z, a)
        d1 = float(np.min((Psi - 0.5 * s * z) / z ** pp))
        d2 = d1 * float(np.min(z ** pp / (s * z)))
        ratio = df / s ** (p - 2)
        return s, f, c1, c2, d1, d2, float(ratio.min()), float(ratio.max())

    s, f, c1, c2, d1, d2, c, C = constants(s_min, s_max)
    inc = bool(np.all(np.diff(f, axis=1) > 0))
    inc_over = bool(np.all(np.diff(f / s, axis=1) > 0))
    violations = []
    if not inc:
        violations.append("f0 is not increasing on the sample")
    if not inc_over:
        violations.append("f0(s)/s is not increasing on the sample")
    for name, val in (("c1", c1), ("c2", c2), ("dual_c1", d1), ("dual_c2", d2)):
        if not val > 0:
            violations.append(f"{name} = {val:.3e} is not positive")
    _, _, xc1, xc2, xd1, xd2, xc, xC = constants(s_min / 10, s_max * 10)
    for name, base, ext in (("c1", c1, xc1), ("c2", c2, xc2), ("dual_c1", d1, xd1), ("dual_c2", d2, xd2),
                            ("c", c, xc)):
        if base > 0 and ext < degeneracy_factor * base:
            violations.append(f"{name} degenerates when the range is extended ({base:.3e} -> {ext:.3e})")
    if C > 0 and xC > C / degeneracy_factor:
        violations.append(f"C grows when the range is extended ({C:.3e} -> {xC:.3e})")
    if stored:
        computed = {"c1": c1, "c2": c2, "c": c, "C": C}
        for key, val in stored.items():
            if key in ("c1", "c2", "c") and val > computed[key] * (1 + 1e-12):
                violations.append(f"stored {key}={val} exceeds the feasible {computed[key]:.6g}")
            if key == "C" and val < computed["C"] * (1 - 1e-12):
                violations.append(f"stored C={val} is below the observed {computed['C']:.6g}")
    ratio_bad = [v for v in violations if v.startswith(("c ", "C ", "c degenerates"))]
    return ValidationReport(
        s_range=(s_min, s_max), n_samples=n_samples, f0_increasing=inc, f0_over_s_increasing=inc_over,
        c1=c1, c2=c2, dual_c1=d1, dual_c2=d2, c=c, C=C,
        growth_pass=not [v for v in violations if v not in ratio_bad], ratio_pass=(c > 0 and not ratio_bad),
        violations=violations,
        coverage=f"{n_samples} log-spaced samples on [{s_min:g}, {s_max:g}] x {a_vals.size} weight values; "
                 "constants are sample estimates, not certificates for all s",
    )


def monotonicity_gap(P: np.ndarray, Q: np.ndarray, nl: Nonlinearity, dV: float) -> tuple:
    """``gap = int (psi(P) - psi(Q)).(P - Q)`` and the Hölder-type ratio.

    ``ratio = ||P-Q||_p' / (gap^(1/2) (||P||_p' + ||Q||_p')^((2-p')/2))``
    should stay bounded over random pairs.
    """
    pp = nl.pp
    diff = P - Q
    gap = float(np.sum((nl.eval_psi(P) - nl.eval_psi(Q)) * diff) * dV)
    lp = lambda v: float((np.sum(_norm(v) ** pp) * dV) ** (1 / pp))  # noqa: E731
    dn = lp(diff)
    if dn == 0:
        return max(gap, 0.0), 0.0
    return gap, dn / (math.sqrt(max(gap, 0.0)) * (lp(P) + lp(Q)) ** ((2 - pp) / 2))


def cosine_weight(coords: np.ndarray, cell_length: float, amplitude: float = 0.3, k: int = 1) -> np.ndarray:
    """``1 + amplitude * mean_i cos(2 pi k x_i / L)``, periodic with the cell."""
    if not 0 <= amplitude < 1:
        raise ValueError("amplitude must lie in [0, 1) to keep the weight positive")
    q = 2 * np.pi * k / cell_length
    return 1.0 + amplitude * np.mean(np.cos(q * coords), axis=-1)
