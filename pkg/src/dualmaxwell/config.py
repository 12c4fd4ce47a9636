"""Run configuration: schema, loading and construction of the numerical objects.

A config is a TOML file (``key = value`` under ``[section]`` headers) or the
same structure encoded as JSON.  Unknown keys are rejected.  Example::

    [grid]
    n = 8
    cell_length = 1.0
    mode = "cavity"

    [medium]
    eps = [1.0, 1.3, 1.7]
    omega_sq_between = [0, 1]

    [nonlinearity]
    p = 4.0

    [solver]
    mode = "cavity"
    case = "I"
    grad_tol = 1e-9
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import cavity as cv
from .dualsolve import CavityProblem, FullspaceProblem
from .fields import GridSpec, Medium, load_field
from .nonlin import Nonlinearity, cosine_weight

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridBlock(_Block):
    n: int = 8
    cell_length: float = 1.0
    mode: Literal["cavity", "periodic"] = "cavity"


class MediumBlock(_Block):
    eps: Union[float, List[float], List[List[float]]] = [1.0, 1.3, 1.7]
    mu: Union[float, List[float], List[List[float]]] = 1.0
    omega_sq: Optional[float] = None
    omega_sq_between: Optional[List[int]] = Field(
        default=[0, 1], description="midpoint of the listed (0-based) lowest nonzero cavity eigenvalues")

    @model_validator(mode="after")
    def _one_frequency(self):
        if self.omega_sq is not None:
            self.omega_sq_between = None
        if self.omega_sq_between is not None and len(self.omega_sq_between) != 2:
            raise ValueError("omega_sq_between takes two eigenvalue indices")
        return self


class WeightBlock(_Block):
    kind: Literal["constant", "cosine", "file"] = "constant"
    value: float = 1.0
    amplitude: float = 0.3
    k: int = 1
    path: Optional[str] = None


class NonlinearityBlock(_Block):
    kind: Literal["power"] = "power"
    p: float = 4.0
    weight: WeightBlock = WeightBlock()


class SolverBlock(_Block):
    mode: Literal["cavity", "fullspace"] = "cavity"
    bc: Literal["neumann", "dirichlet"] = "neumann"
    case: Optional[Literal["I", "II", "III"]] = None
    lam: float = 2.5
    search: Literal["ground", "bound"] = "ground"
    sectors: int = 3
    shell_width: float = 1.0
    seed_index: int = 0
    grad_tol: float = 1e-9
    max_iters: int = 10_000
    restarts: int = 3
    noise: float = 0.05
    energy_tol: float = 1e-4
    distance_tol: float = 1e-3
    seed: int = 0


class IOBlock(_Block):
    out: str = "out"
    field: Optional[str] = None
    trace: bool = True


class VerifyBlock(_Block):
    """Tolerances used by the verification battery; every reported threshold comes from here."""

    samples: int = 10
    periodic_n: int = 8
    cavity_n: int = 4
    projection: float = 1e-12
    curlcurl: float = 1e-12
    fredholm: float = 1e-8
    roundtrip: float = 1e-10
    fd_step: float = 1e-4
    gradient_fd: float = 1e-6
    rel_grad: float = 1e-6
    dual_primal: float = 1e-6
    primal_residual: float = 1e-6
    translation: float = 1e-13
    divcurl: float = 1e-12
    fibering_points: int = 401
    lap_order: float = 1.9
    fullspace_p: float = 4.5


class RunConfig(_Block):
    format_version: int = FORMAT_VERSION
    grid: GridBlock = GridBlock()
    medium: MediumBlock = MediumBlock()
    nonlinearity: NonlinearityBlock = NonlinearityBlock()
    solver: SolverBlock = SolverBlock()
    io: IOBlock = IOBlock()
    verify: VerifyBlock = VerifyBlock()

    @field_validator("format_version")
    @classmethod
    def _version(cls, v):
        if v != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {v}")
        return v

    def digest(self) -> str:
        """SHA-256 of the canonical JSON encoding."""
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- construction ------------------------------------------------------
    def grid_spec(self, mode: Optional[str] = None) -> GridSpec:
        return GridSpec(self.grid.n, self.grid.cell_length, mode or self.grid.mode)

    def medium_obj(self, omega_sq: float = 0.0) -> Medium:
        n = self.grid.n
        kw = {"omega_sq": omega_sq}
        for name, val in (("eps", self.medium.eps), ("mu", self.medium.mu)):
            mat = _as_matrix(val)
            if mat is None:
                kw[name + "0"] = float(val)
            else:
                kw[name + "_field"] = np.broadcast_to(mat, (n, n, n, 3, 3)).copy()
        return Medium(**kw)

    def nonlinearity_obj(self, grid: Optional[GridSpec] = None) -> Nonlinearity:
        w = self.nonlinearity.weight
        if w.kind == "constant":
            a = w.value
        elif w.kind == "cosine":
            g = grid or self.grid_spec()
            a = cosine_weight(g.coords(), g.cell_length, w.amplitude, w.k)
        else:
            if w.path is None:
                raise ConfigError("weight kind 'file' needs a path")
            a = np.load(w.path)
        return Nonlinearity(kind=self.nonlinearity.kind, p=self.nonlinearity.p, a=a)


def _as_matrix(val) -> Optional[np.ndarray]:
    if np.isscalar(val):
        return None
    arr = np.asarray(val, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ConfigError(f"medium tensor must be a scalar, 3 diagonal entries or a 3x3 matrix, got shape {arr.shape}")


def load_config(path: Union[str, Path, None] = None) -> RunConfig:
    """Read TOML or JSON (by suffix); ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(raw) if path.suffix == ".json" else tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def build_cavity_system(cfg: RunConfig):
    """Cavity system with the configured frequency (the dense eigensystem is always built)."""
    grid = cfg.grid_spec("cavity")
    med = cfg.medium_obj()
    sys_ = cv.build_cavity(grid, cfg.solver.bc, med)
    if cfg.medium.omega_sq is not None:
        omega_sq = cfg.medium.omega_sq
    elif cfg.medium.omega_sq_between is not None:
        i, j = cfg.medium.omega_sq_between
        omega_sq = 0.5 * (sys_.eigvals[i] + sys_.eigvals[j])
    else:
        omega_sq = 0.0
    sys_.medium = replace(med, omega_sq=float(omega_sq))
    return sys_


def build_problem(cfg: RunConfig):
    """``(problem, cavity system or None)`` for the configured solver mode."""
    if cfg.solver.mode == "cavity":
        sys_ = build_cavity_system(cfg)
        nl = cfg.nonlinearity_obj(sys_.quad_grid)
        return CavityProblem(sys_, nl, cfg.solver.case), sys_
    grid = cfg.grid_spec("periodic")
    nl = cfg.nonlinearity_obj(grid)
    return FullspaceProblem(grid, nl, cfg.solver.lam), None


def load_input_field(cfg: RunConfig):
    if cfg.io.field is None:
        raise ConfigError("io.field is not set")
    return load_field(cfg.io.field)
