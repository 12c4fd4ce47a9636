"""Fourier calculus on the periodic box.

Coefficients use the ``norm="forward"`` convention, so the zero mode is the
mean of the field and Parseval reads ``sum |E|^2 dV = L^3 sum |E_hat|^2``.
Wavevectors are ``2*pi/L * k`` with ``k in {-n/2+1, ..., n/2 - 1}`` and the
Nyquist component set to zero.  This keeps ``xi(-k) = -xi(k)`` on the whole
grid, so every multiplier maps real fields to real fields and the
projections are exact projectors in real arithmetic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np

from .fields import FORMAT_VERSION, FieldFormatError, GridSpec, VectorField, read_sidecar

DIVFREE_TOL = 1e-10


class ResonanceError(ValueError):
    """``lambda`` sits on (or too close to) the discrete symbol set with no regularization."""

    def __init__(self, lam: float, gap: float, delta: float):
        self.lam, self.gap, self.delta = lam, gap, delta
        super().__init__(f"lambda={lam:g} is within {gap:.3e} of a discrete eigenvalue |xi|^2 (gap threshold {delta:.3e})")


class NotDivergenceFreeError(ValueError):
    pass


@dataclass
class SpectralField:
    """Fourier coefficients of a real field; ``coeffs`` is ``(n, n, n, 3)`` or ``(n, n, n)`` for scalars."""

    grid: GridSpec
    coeffs: np.ndarray

    @property
    def is_vector(self) -> bool:
        return self.coeffs.ndim == 4

    def __add__(self, other):
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return SpectralField(self.grid, self.coeffs * c)

    __rmul__ = __mul__

    def l2_sq(self) -> float:
        """``sum |E|^2 dV`` of the underlying real field via Parseval."""
        return float(self.grid.volume * np.sum(np.abs(self.coeffs) ** 2))


@lru_cache(maxsize=16)
def _wavevectors(n: int, L: float):
    k = np.fft.fftfreq(n, d=1.0 / n) * (2 * np.pi / L)
    k[n // 2] = 0.0
    xi = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1)
    xi.flags.writeable = False
    k2 = np.einsum("...i,...i->...", xi, xi)
    k2.flags.writeable = False
    return xi, k2


def wavevectors(grid: GridSpec):
    """``(xi, |xi|^2)`` arrays of shapes ``(n, n, n, 3)`` and ``(n, n, n)``."""
    return _wavevectors(grid.n_per_axis, float(grid.cell_length))


def symbol_set(grid: GridSpec) -> np.ndarray:
    """Sorted distinct values of ``|xi|^2`` on the grid."""
    _, k2 = wavevectors(grid)
    return np.unique(np.round(k2, 12))


def resonance_gap(grid: GridSpec, lam: float) -> float:
    _, k2 = wavevectors(grid)
    return float(np.min(np.abs(k2 - lam)))


def check_off_resonance(grid: GridSpec, lam: float, delta_rel: float = 1e-6):
    """Raise :class:`ResonanceError` unless ``min |xi|^2 - lam| >= delta_rel*lam``."""
    delta = delta_rel * abs(lam)
    gap = resonance_gap(grid, lam)
    if gap < delta:
        raise ResonanceError(lam, gap, delta)
    return gap


def fft(E: VectorField) -> SpectralField:
    return SpectralField(E.grid, np.fft.fftn(E.data, axes=(0, 1, 2), norm="forward"))


def ifft(Ehat: SpectralField) -> VectorField:
    if not Ehat.is_vector:
        raise ValueError("ifft expects a vector SpectralField; use ifft_scalar")
    return VectorField(Ehat.grid, np.fft.ifftn(Ehat.coeffs, axes=(0, 1, 2), norm="forward").real)


def fft_scalar(grid: GridSpec, u: np.ndarray) -> SpectralField:
    return SpectralField(grid, np.fft.fftn(u, norm="forward"))


def ifft_scalar(uhat: SpectralField) -> np.ndarray:
    return np.fft.ifftn(uhat.coeffs, norm="forward").real


def curl_op(Ehat: SpectralField) -> SpectralField:
    xi, _ = wavevectors(Ehat.grid)
    return SpectralField(Ehat.grid, 1j * np.cross(xi, Ehat.coeffs))


def div_op(Ehat: SpectralField) -> SpectralField:
    xi, _ = wavevectors(Ehat.grid)
    return SpectralField(Ehat.grid, 1j * np.einsum("...i,...i->...", xi, Ehat.coeffs))


def grad_op(uhat: SpectralField) -> SpectralField:
    xi, _ = wavevectors(uhat.grid)
    return SpectralField(uhat.grid, 1j * xi * uhat.coeffs[..., None])


def _longitudinal(grid: GridSpec, c: np.ndarray) -> np.ndarray:
    xi, k2 = wavevectors(grid)
    safe = np.where(k2 > 0, k2, 1.0)
    proj = np.einsum("...i,...i->...", xi, c) / safe
    proj[k2 == 0] = 0.0
    return xi * proj[..., None]


def helmholtz_project(Ehat: SpectralField) -> tuple:
    """Split into divergence-free and gradient parts; the mean goes to the first."""
    E2 = _longitudinal(Ehat.grid, Ehat.coeffs)
    return SpectralField(Ehat.grid, Ehat.coeffs - E2), SpectralField(Ehat.grid, E2)


def project_divfree(E: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Real-space convenience wrapper returning the divergence-free part of ``E``."""
    c = np.fft.fftn(E, axes=(0, 1, 2), norm="forward")
    c -= _longitudinal(grid, c)
    return np.fft.ifftn(c, axes=(0, 1, 2), norm="forward").real


def split_real(E: np.ndarray, grid: GridSpec) -> tuple:
    c = np.fft.fftn(E, axes=(0, 1, 2), norm="forward")
    c2 = _longitudinal(grid, c)
    back = lambda a: np.fft.ifftn(a, axes=(0, 1, 2), norm="forward").real  # noqa: E731
    return back(c - c2), back(c2)


def curlcurl_apply(Ehat: SpectralField) -> SpectralField:
    """``curl curl`` as the multiplier ``|xi|^2 E - (xi.E) xi``; equals ``-Laplacian`` on divergence-free input."""
    xi, k2 = wavevectors(Ehat.grid)
    c = Ehat.coeffs
    return SpectralField(Ehat.grid, k2[..., None] * c - xi * np.einsum("...i,...i->...", xi, c)[..., None])


def divergence_defect(ghat: SpectralField) -> float:
    """``max |xi.g| / max(|xi| |g|)``, zero for a divergence-free field."""
    xi, k2 = wavevectors(ghat.grid)
    num = np.abs(np.einsum("...i,...i->...", xi, ghat.coeffs)).max(initial=0.0)
    den = (np.sqrt(k2) * np.sqrt(np.sum(np.abs(ghat.coeffs) ** 2, axis=-1))).max(initial=0.0)
    return float(num / den) if den > 0 else 0.0


def resolvent_multiplier(grid: GridSpec, lam: float, eps_reg: float = 0.0) -> np.ndarray:
    _, k2 = wavevectors(grid)
    d = k2 - lam
    return d / (d * d + eps_reg * eps_reg)


def resolvent_R(ghat: SpectralField, lam: float, eps_reg: float = 0.0, delta_rel: float = 1e-6,
                divfree_tol: float = DIVFREE_TOL) -> SpectralField:
    """Real part of ``(|xi|^2 - lam - i eps_reg)^-1`` applied to a divergence-free field.

    With ``eps_reg = 0`` this is the exact real multiplier ``1/(|xi|^2 - lam)``,
    which requires ``lam`` to stay ``delta_rel*lam`` away from every ``|xi|^2``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    defect = divergence_defect(ghat)
    if defect > divfree_tol:
        raise NotDivergenceFreeError(f"input is not divergence-free (relative defect {defect:.2e})")
    if eps_reg == 0:
        check_off_resonance(ghat.grid, lam, delta_rel)
    mult = resolvent_multiplier(ghat.grid, lam, eps_reg)
    return SpectralField(ghat.grid, ghat.coeffs * mult[..., None])


def curlfree_is_gradient_check(Ehat: SpectralField, tol: float = 1e-10, return_potential: bool = False):
    """True iff every nonzero mode is parallel to its wavevector and the mean vanishes.

    Parallelism is measured as ``|xi x E| <= tol |xi| |E|``.  A nonzero mean
    is curl-free but is not the gradient of a periodic potential, so it fails
    the check.  With ``return_potential`` the scalar ``u_hat`` with
    ``grad_op(u_hat) == E_hat`` is returned as well.
    """
    xi, k2 = wavevectors(Ehat.grid)
    c = Ehat.coeffs
    cross = np.sqrt(np.sum(np.abs(np.cross(xi, c)) ** 2, axis=-1))
    mag = np.sqrt(np.sum(np.abs(c) ** 2, axis=-1))
    scale = max(float(mag.max(initial=0.0)), np.finfo(float).tiny)
    ok = bool(np.all(cross <= tol * np.sqrt(k2) * mag + 1e-300) and mag[0, 0, 0] <= tol * scale)
    if not return_potential:
        return ok
    safe = np.where(k2 > 0, k2, 1.0)
    uhat = -1j * np.einsum("...i,...i->...", xi, c) / safe
    uhat[k2 == 0] = 0.0
    return ok, SpectralField(Ehat.grid, uhat)


def empirical_resolvent_ratio(grid: GridSpec, lam: float, p: float, trials: int = 20, seed: int = 0) -> float:
    """Largest observed ``||R g||_p / ||g||_p'`` over random divergence-free inputs (no bound is claimed)."""
    from .fields import lp_norm

    rng = np.random.default_rng(seed)
    pp = p / (p - 1)
    best = 0.0
    for _ in range(trials):
        g = project_divfree(rng.standard_normal(grid.shape + (3,)), grid)
        Rg = ifft(resolvent_R(fft(VectorField(grid, g)), lam)).data
        best = max(best, lp_norm(Rg, p, grid.dV) / lp_norm(g, pp, grid.dV))
    return best


def save_spectral(path: Union[str, Path], Ehat: SpectralField) -> Path:
    """Interleaved (re, im) float64 pairs, little-endian, with a ``"space": "fourier"`` sidecar."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    Ehat.coeffs.astype("<c16").tofile(base.with_suffix(".bin"))
    meta = Ehat.grid.sidecar()
    meta.update(space="fourier", dtype="complex128", vector=Ehat.is_vector, format_version=FORMAT_VERSION)
    base.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    return base.with_suffix(".bin")


def load_spectral(path: Union[str, Path]) -> SpectralField:
    base, grid, meta = read_sidecar(path)
    if meta.get("space") != "fourier":
        raise FieldFormatError("sidecar does not describe Fourier coefficients")
    raw = np.fromfile(base.with_suffix(".bin"), dtype="<c16")
    shape = grid.shape + ((3,) if meta.get("vector", True) else ())
    if raw.size != int(np.prod(shape)):
        raise FieldFormatError(f"expected {int(np.prod(shape))} coefficients, found {raw.size}")
    return SpectralField(grid, raw.reshape(shape))
