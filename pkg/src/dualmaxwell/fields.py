"""Grids, real vector fields and weighted quadrature.

Every field in the package is a real 3-vector per grid point stored as a
``(n, n, n, 3)`` float64 array in C order, i.e. z fastest and the three
components interleaved.  Integrals use the midpoint rule with the uniform
volume element of the grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

FORMAT_VERSION = 1
LAYOUT = "z-fastest-interleaved"
MODES = ("periodic", "cavity")
DEFAULT_POSITIVITY_FLOOR = 1e-8


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


class FieldFormatError(ValueError):
    """A field file or its sidecar is malformed."""


@dataclass(frozen=True)
class GridSpec:
    n_per_axis: int
    cell_length: float = 2 * math.pi
    mode: str = "periodic"

    def __post_init__(self):
        n = self.n_per_axis
        if not isinstance(n, (int, np.integer)) or n < 4 or n & (n - 1):
            raise ValueError(f"n_per_axis must be a power of two >= 4, got {n!r}")
        if not self.cell_length > 0:
            raise ValueError("cell_length must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def spacing(self) -> float:
        return self.cell_length / self.n_per_axis

    @property
    def dV(self) -> float:
        return self.spacing ** 3

    @property
    def shape(self) -> tuple:
        return (self.n_per_axis,) * 3

    @property
    def volume(self) -> float:
        return self.cell_length ** 3

    def axis(self) -> np.ndarray:
        """1-D sample positions: nodes ``i*h`` when periodic, midpoints in a cavity."""
        i = np.arange(self.n_per_axis, dtype=float)
        if self.mode == "cavity":
            i += 0.5
        return i * self.spacing

    def coords(self) -> np.ndarray:
        """Sample positions as an ``(n, n, n, 3)`` array."""
        a = self.axis()
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)

    def sidecar(self) -> dict:
        return {
            "n_per_axis": int(self.n_per_axis),
            "cell_length": float(self.cell_length),
            "mode": self.mode,
            "components": ["x", "y", "z"],
            "layout": LAYOUT,
            "format_version": FORMAT_VERSION,
        }


@dataclass
class VectorField:
    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        expected = self.grid.shape + (3,)
        if data.shape != expected:
            if data.size == 3 * self.grid.n_per_axis ** 3:
                data = data.reshape(expected)
            else:
                raise ValueError(f"field data has shape {data.shape}, expected {expected}")
        if not np.all(np.isfinite(data)):
            raise ValueError("field data contains non-finite entries")
        self.data = data

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        return cls(grid, np.zeros(grid.shape + (3,)))

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "VectorField":
        """Sample ``func(x, y, z) -> (Ex, Ey, Ez)`` at the grid positions."""
        X = grid.coords()
        comps = func(X[..., 0], X[..., 1], X[..., 2])
        data = np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.shape) for c in comps], axis=-1)
        return cls(grid, data)

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def pointwise_norm(self) -> np.ndarray:
        return np.sqrt(np.einsum("...i,...i->...", self.data, self.data))

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.data + other.data)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same_grid(self, other)
        return VectorField(self.grid, self.data - other.data)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(self.grid, self.data * c)

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.data)


def _check_same_grid(a: VectorField, b: VectorField):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def _check_spd(mats: np.ndarray, floor: float, name: str):
    if not np.allclose(mats, np.swapaxes(mats, -1, -2), rtol=0, atol=1e-12 * max(1.0, np.abs(mats).max())):
        raise ValueError(f"{name} matrices are not symmetric")
    lam_min = np.linalg.eigvalsh(mats).min()
    if lam_min < floor:
        raise ValueError(f"{name} is not uniformly positive definite: min eigenvalue {lam_min:.3e} < floor {floor:.1e}")


@dataclass
class Medium:
    """Permittivity, permeability and frequency.

    Scalars ``eps0``/``mu0`` describe a homogeneous medium.  In a cavity the
    optional ``eps_field``/``mu_field`` give one SPD 3x3 matrix per cell, shape
    ``(n, n, n, 3, 3)``; they take precedence over the scalars.
    """

    eps0: float = 1.0
    mu0: float = 1.0
    omega_sq: float = 0.0
    eps_field: Optional[np.ndarray] = None
    mu_field: Optional[np.ndarray] = None
    floor: float = DEFAULT_POSITIVITY_FLOOR
    _mu_inv: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not (self.eps0 > 0 and self.mu0 > 0):
            raise ValueError("eps0 and mu0 must be positive")
        if self.eps0 < self.floor or self.mu0 < self.floor:
            raise ValueError("eps0/mu0 below the positivity floor")
        if not self.omega_sq >= 0:
            raise ValueError("omega_sq must be nonnegative")
        for name in ("eps_field", "mu_field"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.asarray(val, dtype=float)
            if val.ndim != 5 or val.shape[-2:] != (3, 3) or len(set(val.shape[:3])) != 1:
                raise ValueError(f"{name} must have shape (n, n, n, 3, 3)")
            _check_spd(val, self.floor, name)
            setattr(self, name, val)
        if self.mu_field is not None:
            self._mu_inv = np.linalg.inv(self.mu_field)

    @property
    def lam(self) -> float:
        return self.omega_sq * self.eps0 * self.mu0

    @property
    def is_homogeneous(self) -> bool:
        return self.eps_field is None and self.mu_field is None

    @property
    def eps_is_identity(self) -> bool:
        if self.eps_field is None:
            return self.eps0 == 1.0
        return bool(np.all(self.eps_field == np.eye(3)))

    def _on(self, arr: Optional[np.ndarray], scalar: float, grid: GridSpec):
        if arr is None:
            return scalar
        m = arr.shape[0]
        n = grid.n_per_axis
        if m == n:
            return arr
        if n % m:
            raise GridMismatchError(f"medium resolution {m} does not divide grid resolution {n}")
        r = n // m
        return arr.repeat(r, axis=0).repeat(r, axis=1).repeat(r, axis=2)

    def eps_on(self, grid: GridSpec):
        """Permittivity at the sample points of ``grid``: a scalar or ``(n, n, n, 3, 3)``."""
        return self._on(self.eps_field, self.eps0, grid)

    def mu_inv_on(self, grid: GridSpec):
        return self._on(self._mu_inv, 1.0 / self.mu0, grid)

    def eps_floor(self) -> float:
        if self.eps_field is None:
            return self.eps0
        return float(np.linalg.eigvalsh(self.eps_field).min())


def apply_pointwise(mat, v: np.ndarray) -> np.ndarray:
    """Multiply a per-point 3x3 matrix field (or scalar) into a ``(..., 3)`` array."""
    if np.isscalar(mat):
        return mat * v
    return np.einsum("...ij,...j->...i", mat, v)


def inner_eps(E: VectorField, F: VectorField, m: Medium) -> float:
    """Weighted inner product ``sum eps(x) E(x).F(x) dV``."""
    _check_same_grid(E, F)
    eps = m.eps_on(E.grid)
    if np.isscalar(eps):
        s = eps * np.sum(E.data * F.data)
    else:
        # symmetric form keeps <E,F> == <F,E> bit for bit
        s = 0.5 * (np.sum(apply_pointwise(eps, E.data) * F.data) + np.sum(apply_pointwise(eps, F.data) * E.data))
    return float(s * E.grid.dV)


def energy_norm_sq(E: VectorField, curlE: VectorField, m: Medium) -> float:
    """``int mu^-1 |curl E|^2 + eps |E|^2``; ``curlE`` must already be the discrete curl of ``E``."""
    _check_same_grid(E, curlE)
    mu_inv = m.mu_inv_on(E.grid)
    curl_part = np.sum(apply_pointwise(mu_inv, curlE.data) * curlE.data) * E.grid.dV
    return float(curl_part) + inner_eps(E, E, m)


def lp_norm(E: Union[VectorField, np.ndarray], p: float, dV: Optional[float] = None) -> float:
    """``(sum |E(x)|^p dV)^(1/p)`` with the Euclidean pointwise norm; ``p = inf`` gives the max."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if isinstance(E, VectorField):
        mag = E.pointwise_norm()
        dV = E.grid.dV
    else:
        mag = np.sqrt(np.einsum("...i,...i->...", E, E))
        dV = 1.0 if dV is None else dV
    if math.isinf(p):
        return float(mag.max(initial=0.0))
    return float((np.sum(mag ** p) * dV) ** (1.0 / p))


def save_field(path: Union[str, Path], E: VectorField) -> Path:
    """Write ``path.bin`` (little-endian float64) and ``path.json``; returns the .bin path."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    bin_path = base.with_suffix(".bin")
    E.data.astype("<f8").tofile(bin_path)
    base.with_suffix(".json").write_text(json.dumps(E.grid.sidecar(), indent=2))
    return bin_path


def read_sidecar(path: Union[str, Path]) -> tuple:
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    try:
        meta = json.loads(base.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"cannot read sidecar for {base}: {exc}") from exc
    required = {"n_per_axis", "cell_length", "mode", "components", "layout"}
    missing = required - set(meta)
    if missing:
        raise FieldFormatError(f"sidecar missing keys {sorted(missing)}")
    if meta["layout"] != LAYOUT or meta["components"] != ["x", "y", "z"]:
        raise FieldFormatError(f"unsupported layout {meta['layout']!r}")
    if meta.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise FieldFormatError(f"unsupported format_version {meta.get('format_version')}")
    try:
        grid = GridSpec(int(meta["n_per_axis"]), float(meta["cell_length"]), meta["mode"])
    except (TypeError, ValueError) as exc:
        raise FieldFormatError(str(exc)) from exc
    return base, grid, meta


def load_field(path: Union[str, Path]) -> VectorField:
    base, grid, meta = read_sidecar(path)
    if meta.get("space", "physical") != "physical":
        raise FieldFormatError("file holds Fourier coefficients; use spectral.load_spectral")
    raw = np.fromfile(base.with_suffix(".bin"), dtype="<f8")
    if raw.size != 3 * grid.n_per_axis ** 3:
        raise FieldFormatError(f"expected {3 * grid.n_per_axis ** 3} values, found {raw.size}")
    try:
        return VectorField(grid, raw.reshape(grid.shape + (3,)))
    except ValueError as exc:
        raise FieldFormatError(str(exc)) from exc
