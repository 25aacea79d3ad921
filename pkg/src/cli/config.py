"""
Run configuration: YAML file -> validated pydantic models -> simulation setup.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union
import logging
import os

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..model.energy import MaterialParams, isotropic_stiffness
from ..model.errors import ConfigError
from ..model.grid import FACES, BoundaryData, Grid, make_grid
from ..model.simplex import DiffusionMode
from ..solvers.base_solver import SolverSettings
from ..solvers.stepper import SimulationSetup
from .output import read_snapshot

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "PHASEFIELD_OUTPUT_ROOT"


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Spec):
    dim: Literal[1, 2] = 1
    cells: List[int]
    extent: List[float]
    dirichlet: Union[Dict[str, bool], List[bool], None] = None


class PhaseSpec(_Spec):
    """Stiffness and eigenstrain of one phase.

    Exactly one of ``lame`` (lambda, mu), ``modulus`` (1D only) or a full
    ``stiffness`` tensor is given; a scalar eigenstrain means ``value * I``.
    """

    lame: Optional[List[float]] = None
    modulus: Optional[float] = None
    stiffness: Optional[List[Any]] = None
    eigenstrain: Union[float, List[List[float]]] = 0.0


class MaterialSpec(_Spec):
    n_components: int = Field(2, ge=2)
    gamma: float = 1.0
    gradient_tensor: Optional[List[Any]] = None
    mobility: Optional[List[List[float]]] = None
    chemical: Literal["poly", "log"] = "poly"
    well_height: float = 1.0
    theta: float = 1.0
    interaction: Optional[List[List[float]]] = None
    delta: float = 0.1
    delta0: float = 0.3
    alpha: float = 1.0
    beta: float = 1.0
    epsilon: float = 0.0
    p: float = 4.0
    degradation_exponent: float = 2.0
    eta_floor: float = 0.01
    phases: Optional[List[PhaseSpec]] = None


class TimeSpec(_Spec):
    horizon: float = Field(1.0, ge=0.0)
    steps: int = Field(10, ge=0)


class FaceProfile(_Spec):
    """Piecewise linear in time, constant along the face: one vector per knot."""

    times: List[float]
    values: List[List[float]]


class AffineLoad(_Spec):
    """``b(t, x) = s(t) * matrix @ x`` with ``s`` piecewise linear through the knots."""

    matrix: List[List[float]]
    times: List[float] = [0.0, 1.0]
    scales: List[float] = [0.0, 1.0]


class BoundarySpec(_Spec):
    faces: Dict[str, FaceProfile] = {}
    affine: Optional[AffineLoad] = None


class InitialSpec(_Spec):
    concentration: Optional[List[float]] = None
    perturbation: float = Field(0.0, ge=0.0)
    perturbation_kind: Literal["random", "cosine"] = "random"
    damage: float = 1.0
    file: Optional[str] = None


class SolverSpec(_Spec):
    tol: float = Field(1e-9, gt=0.0)
    cg_tol: float = Field(1e-12, gt=0.0)
    max_outer: int = Field(200, ge=1)
    max_block_iterations: int = Field(100, ge=1)
    z_zero_tol: float = Field(1e-10, gt=0.0)


class OutputSpec(_Spec):
    root: str = "runs"
    name: str = "run"
    vtk: bool = False


class ModelConfig(_Spec):
    """Complete description of a run."""

    grid: GridSpec
    mode: DiffusionMode = DiffusionMode.CAHN_HILLIARD
    material: MaterialSpec = MaterialSpec()
    time: TimeSpec = TimeSpec()
    boundary: BoundarySpec = BoundarySpec()
    initial: InitialSpec = InitialSpec()
    solver: SolverSpec = SolverSpec()
    output: OutputSpec = OutputSpec()
    seed: int = 0
    base_dir: Optional[str] = Field(None, exclude=True)

    # ------------------------------------------------------------------
    # builders
    # ------------------------------------------------------------------
    def build_grid(self) -> Grid:
        g = self.grid
        return make_grid(g.dim, g.cells, g.extent, g.dirichlet)

    def build_params(self) -> MaterialParams:
        m = self.material
        n, N = self.grid.dim, m.n_components
        phases = m.phases or [PhaseSpec(modulus=1.0) if n == 1 else PhaseSpec(lame=[1.0, 1.0])] * N
        if len(phases) != N:
            raise ConfigError("invalid material", [f"need {N} phases, got {len(phases)}"])
        stiffness, eigenstrain = [], []
        for k, phase in enumerate(phases):
            stiffness.append(_phase_stiffness(phase, n, k))
            eig = np.asarray(phase.eigenstrain, dtype=float)
            eigenstrain.append(eig * np.eye(n) if eig.ndim == 0 else eig)
        mobility = m.mobility if m.mobility is not None else N * (np.eye(N) - np.full((N, N), 1.0 / N))
        return MaterialParams(
            mobility=np.asarray(mobility, dtype=float),
            stiffness=np.stack(stiffness),
            eigenstrain=np.stack(eigenstrain),
            gamma=m.gamma,
            gradient_tensor=None if m.gradient_tensor is None else np.asarray(m.gradient_tensor, dtype=float),
            chemical=m.chemical,
            well_height=m.well_height,
            theta=m.theta,
            interaction=None if m.interaction is None else np.asarray(m.interaction, dtype=float),
            delta=m.delta,
            delta0=m.delta0,
            alpha=m.alpha,
            beta=m.beta,
            epsilon=m.epsilon,
            p=m.p,
            degradation_exponent=m.degradation_exponent,
            eta_floor=m.eta_floor,
        )

    def build_settings(self) -> SolverSettings:
        return SolverSettings(**self.solver.model_dump())

    def boundary_schedule(self, grid: Grid):
        """Dirichlet data as a function of time."""
        faces = self.boundary.faces
        affine = self.boundary.affine

        def at(t: float) -> BoundaryData:
            vectors = {}
            for face, profile in faces.items():
                vals = np.asarray(profile.values, dtype=float)
                vectors[face] = [np.interp(t, profile.times, vals[:, a]) for a in range(grid.dim)]
            data = BoundaryData.constant(grid, vectors)
            if affine is not None:
                scale = float(np.interp(t, affine.times, affine.scales))
                load = BoundaryData.affine(grid, scale * np.asarray(affine.matrix, dtype=float))
                data = BoundaryData({k: v + load.values[k] for k, v in data.values.items()})
            return data

        return at

    def initial_fields(self, grid: Grid, params: MaterialParams):
        """Initial concentration and damage."""
        init = self.initial
        N = params.n_components
        if init.file is not None:
            path = Path(init.file)
            if not path.is_absolute() and self.base_dir:
                path = Path(self.base_dir) / path
            fields = read_snapshot(path, grid, N)
            return fields["c"], fields["z"]
        base = np.asarray(init.concentration if init.concentration is not None else [1.0 / N] * N, dtype=float)
        c0 = np.broadcast_to(base.reshape((N,) + (1,) * grid.dim), (N,) + grid.cells).copy()
        if init.perturbation > 0:
            if init.perturbation_kind == "cosine":
                x = grid.centers()[0] / grid.extent[0]
                shape = np.cos(np.pi * x)
                pert = np.zeros_like(c0)
                pert[0], pert[1] = shape, -shape
            else:
                rng = np.random.default_rng(self.seed)
                pert = rng.uniform(-1.0, 1.0, c0.shape)
                pert -= pert.mean(axis=0, keepdims=True)
                if self.mode is DiffusionMode.CAHN_HILLIARD:
                    pert -= pert.mean(axis=tuple(range(1, pert.ndim)), keepdims=True)
            c0 = c0 + init.perturbation * pert
            # restore the simplex constraint exactly
            c0[-1] = 1.0 - c0[:-1].sum(axis=0)
        z0 = np.full(grid.cells, float(init.damage))
        return c0, z0

    def build(self) -> SimulationSetup:
        grid = self.build_grid()
        params = self.build_params()
        c0, z0 = self.initial_fields(grid, params)
        return SimulationSetup(
            grid=grid,
            params=params,
            mode=self.mode,
            horizon=self.time.horizon,
            steps=self.time.steps,
            boundary=self.boundary_schedule(grid),
            c0=c0,
            z0=z0,
            settings=self.build_settings(),
        )

    # ------------------------------------------------------------------
    # semantic checks
    # ------------------------------------------------------------------
    def violations(self) -> List[str]:
        """Every violated model invariant, one message each."""
        out: List[str] = []
        try:
            grid = self.build_grid()
        except ConfigError as e:
            return e.violations
        except ValueError as e:
            return [f"grid: {e}"]
        if not grid.dirichlet_faces:
            out.append("elasticity needs at least one Dirichlet face")
        if self.material.chemical == "log":
            if len(grid.dirichlet_faces) != len(grid.faces):
                out.append("logarithmic mode requires every boundary face to be Dirichlet (hypothesis of the positivity result)")
            if self.material.gradient_tensor is not None:
                out.append("logarithmic mode requires Gamma = gamma Id")
        for face in self.boundary.faces:
            if face not in FACES[: 2 * grid.dim]:
                out.append(f"boundary: unknown face {face!r}")
            elif not grid.is_dirichlet(face):
                out.append(f"boundary: data given on non-Dirichlet face {face!r}")
        for face, profile in self.boundary.faces.items():
            if len(profile.times) != len(profile.values) or not profile.times:
                out.append(f"boundary {face}: need one value per time knot")
            elif any(len(v) != grid.dim for v in profile.values):
                out.append(f"boundary {face}: vectors must have {grid.dim} components")
            elif np.any(np.diff(profile.times) <= 0):
                out.append(f"boundary {face}: time knots must increase")
        if self.boundary.affine is not None:
            a = self.boundary.affine
            if np.asarray(a.matrix).shape != (grid.dim, grid.dim):
                out.append(f"boundary affine: matrix must be {grid.dim} x {grid.dim}")
            if len(a.times) != len(a.scales) or np.any(np.diff(a.times) <= 0):
                out.append("boundary affine: need increasing time knots with one scale each")
        if self.time.steps > 0 and not self.time.horizon > 0:
            out.append("time horizon must be positive when steps > 0")
        try:
            params = self.build_params()
        except ConfigError as e:
            out.extend(e.violations)
            return out
        except ValueError as e:
            out.append(f"material: {e}")
            return out
        init = self.initial
        if not 0.0 <= init.damage <= 1.0:
            out.append("damage out of [0,1]")
        if init.file is None:
            if init.concentration is not None:
                c = np.asarray(init.concentration, dtype=float)
                if c.shape != (params.n_components,):
                    out.append(f"initial concentration needs {params.n_components} entries")
                elif abs(c.sum() - 1.0) > 1e-12:
                    out.append("initial concentration must lie on the simplex (components sum to 1)")
        if out:
            return out
        try:
            c0, z0 = self.initial_fields(grid, params)
        except (OSError, ValueError, KeyError) as e:
            return [f"initial data: {e}"]
        if z0.min() < 0 or z0.max() > 1:
            out.append("damage out of [0,1]")
        if self.material.chemical == "log" and c0.min() <= 0:
            out.append("logarithmic mode requires strictly positive initial concentrations")
        return out


def _phase_stiffness(phase: PhaseSpec, n: int, k: int) -> np.ndarray:
    given = [x is not None for x in (phase.lame, phase.modulus, phase.stiffness)]
    if sum(given) != 1:
        raise ConfigError("invalid material", [f"phase {k}: give exactly one of lame, modulus, stiffness"])
    if phase.modulus is not None:
        if n != 1:
            raise ConfigError("invalid material", [f"phase {k}: a scalar modulus is only valid in 1D"])
        return np.full((1, 1, 1, 1), float(phase.modulus))
    if phase.lame is not None:
        lam, mu = phase.lame
        if n == 1:
            return np.full((1, 1, 1, 1), lam + 2.0 * mu)
        return isotropic_stiffness(n, lam, mu)
    C = np.asarray(phase.stiffness, dtype=float)
    if C.shape != (n, n, n, n):
        raise ConfigError("invalid material", [f"phase {k}: stiffness must be {n}x{n}x{n}x{n}, got {C.shape}"])
    return C


def _format_pydantic(error: ValidationError) -> List[str]:
    out = []
    for item in error.errors():
        loc = ".".join(str(part) for part in item["loc"])
        out.append(f"{loc}: {item['msg']}" if loc else item["msg"])
    return out


def config_from_dict(data: Dict[str, Any], base_dir: Optional[str] = None) -> ModelConfig:
    """Validate a configuration mapping (schema and model invariants).

    Args:
        data: Parsed configuration
        base_dir: Directory relative file references are resolved against

    Returns:
        The validated config
    """
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    try:
        config = ModelConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("invalid configuration", _format_pydantic(e)) from e
    if base_dir is not None:
        config = config.model_copy(update={"base_dir": base_dir})
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        config = config.model_copy(update={"output": config.output.model_copy(update={"root": root})})
    violations = config.violations()
    if violations:
        raise ConfigError("configuration violates model invariants", violations)
    return config


def parse_config(path: Union[str, Path]) -> ModelConfig:
    """Read and validate a YAML configuration file.

    Args:
        path: Path of the UTF-8 YAML file

    Returns:
        The validated config
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        raise ConfigError(f"YAML parse error in {path}: {getattr(e, 'problem', e)}", line=line, column=column) from e
    config = config_from_dict(data, base_dir=str(path.parent))
    logger.info(f"Loaded configuration {path} ({config.mode.value}, {config.material.chemical}, {config.time.steps} steps)")
    return config
