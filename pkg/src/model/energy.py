"""
Energy densities, their derivatives, the total regularised energy and the
damage dissipation.

The free energy is

    E_eps(u, c, z) = int 1/2 Gamma grad c : grad c + 1/2 |grad z|^2 + W^ch(c)
                     + W^el(e(u), c, z) + eps/4 |grad u|^4 + eps/p |grad z|^p dx

with ``W^el = (Phi(z) + eta) * 1/2 (e - e*(c)) : C(c) (e - e*(c))``,
``C(c) = sum_k c_k C_k`` and ``e*(c) = sum_k c_k e*_k``. Gradient terms are
averaged over the one-sided side combinations of the grid.

Pointwise functions are vectorised: concentrations ``(N, ...)``, strains
``(n, n, ...)``, damage ``(...)``.
"""
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence
import logging

import numpy as np

from .errors import ConfigError, ConstraintViolation
from .grid import BoundaryData, Grid, integrate
from .simplex import tangent_basis, validate_mobility

logger = logging.getLogger(__name__)

CHEMICAL_MODES = ("poly", "log")


# ----------------------------------------------------------------------
# logarithmic regularisation
# ----------------------------------------------------------------------
def _check_delta(delta: float) -> None:
    if not delta > 0:
        raise ConstraintViolation(f"regularisation delta must be positive, got {delta}")


def phi_delta(x: Any, delta: float) -> Any:
    """C1 quadratic extension of ``x log x`` below ``delta``.

    ``x log x`` for ``x >= delta``, ``x log delta - delta/2 + x^2/(2 delta)`` below.
    """
    _check_delta(delta)
    x = np.asarray(x, dtype=float)
    safe = np.maximum(x, delta)
    out = np.where(x >= delta, safe * np.log(safe), x * np.log(delta) - 0.5 * delta + x * x / (2.0 * delta))
    return out if out.ndim else float(out)


def phi_delta_prime(x: Any, delta: float) -> Any:
    _check_delta(delta)
    x = np.asarray(x, dtype=float)
    safe = np.maximum(x, delta)
    out = np.where(x >= delta, np.log(safe) + 1.0, np.log(delta) + x / delta)
    return out if out.ndim else float(out)


def phi_delta_second(x: Any, delta: float) -> Any:
    _check_delta(delta)
    x = np.asarray(x, dtype=float)
    out = np.where(x >= delta, 1.0 / np.maximum(x, delta), 1.0 / delta)
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------
# chemical densities
# ----------------------------------------------------------------------
def chem_poly(c: Any, height: float = 1.0) -> Any:
    """Multi-well density ``height * sum_k c_k^2 (1 - c_k)^2`` (wells at the simplex vertices)."""
    c = np.asarray(c, dtype=float)
    out = height * np.sum(c**2 * (1.0 - c) ** 2, axis=0)
    return out if np.ndim(out) else float(out)


def chem_poly_grad(c: Any, height: float = 1.0) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return height * 2.0 * c * (1.0 - c) * (1.0 - 2.0 * c)


def chem_poly_hess(c: Any, height: float = 1.0) -> np.ndarray:
    """Pointwise Hessian ``(N, N, ...)`` (diagonal)."""
    c = np.asarray(c, dtype=float)
    diag = height * 2.0 * (1.0 - 6.0 * c + 6.0 * c * c)
    return _diag_field(diag)


def _diag_field(diag: np.ndarray) -> np.ndarray:
    N = diag.shape[0]
    out = np.zeros((N, N) + diag.shape[1:])
    idx = np.arange(N)
    out[idx, idx] = diag
    return out


def chem_log_delta(c: Any, params: "MaterialParams") -> Any:
    """``theta sum_k phi_delta(c_k) + 1/2 c . A c``."""
    c = np.asarray(c, dtype=float)
    A = params.interaction_matrix
    out = params.theta * np.sum(phi_delta(c, params.delta), axis=0) + 0.5 * np.einsum("k...,kl,l...->...", c, A, c)
    return out if np.ndim(out) else float(out)


def chem_log_delta_grad(c: Any, params: "MaterialParams") -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return params.theta * phi_delta_prime(c, params.delta) + np.einsum("kl,l...->k...", params.interaction_matrix, c)


def chem_log_delta_hess(c: Any, params: "MaterialParams") -> np.ndarray:
    c = np.asarray(c, dtype=float)
    hess = _diag_field(params.theta * np.asarray(phi_delta_second(c, params.delta)))
    A = params.interaction_matrix
    return hess + A.reshape(A.shape + (1,) * (c.ndim - 1))


def chemical_density(c: np.ndarray, params: "MaterialParams") -> np.ndarray:
    if params.chemical == "log":
        return chem_log_delta(c, params)
    return chem_poly(c, params.well_height)


def chemical_grad(c: np.ndarray, params: "MaterialParams") -> np.ndarray:
    if params.chemical == "log":
        return chem_log_delta_grad(c, params)
    return chem_poly_grad(c, params.well_height)


def chemical_hess(c: np.ndarray, params: "MaterialParams") -> np.ndarray:
    if params.chemical == "log":
        return chem_log_delta_hess(c, params)
    return chem_poly_hess(c, params.well_height)


# ----------------------------------------------------------------------
# stiffness helpers
# ----------------------------------------------------------------------
def isotropic_stiffness(dim: int, lam: float, mu: float) -> np.ndarray:
    """Isotropic tensor ``lam d_ab d_cd + mu (d_ac d_bd + d_ad d_bc)``; in 1D the modulus is ``lam + 2 mu``."""
    I = np.eye(dim)
    return (
        lam * np.einsum("ab,cd->abcd", I, I)
        + mu * (np.einsum("ac,bd->abcd", I, I) + np.einsum("ad,bc->abcd", I, I))
    )


def symmetrize_stiffness(C: np.ndarray) -> np.ndarray:
    """Impose minor and major symmetry on a fourth-order tensor."""
    C = 0.5 * (C + np.transpose(C, (1, 0, 2, 3)))
    C = 0.5 * (C + np.transpose(C, (0, 1, 3, 2)))
    return 0.5 * (C + np.transpose(C, (2, 3, 0, 1)))


def _sym_basis(dim: int) -> List[np.ndarray]:
    basis = []
    for a in range(dim):
        for b in range(a, dim):
            E = np.zeros((dim, dim))
            if a == b:
                E[a, a] = 1.0
            else:
                E[a, b] = E[b, a] = 1.0 / np.sqrt(2.0)
            basis.append(E)
    return basis


def stiffness_eigenvalues(C: np.ndarray) -> np.ndarray:
    """Eigenvalues of C acting on symmetric tensors (Mandel representation)."""
    basis = _sym_basis(C.shape[0])
    K = np.array([[np.einsum("ab,abcd,cd->", Bi, C, Bj) for Bj in basis] for Bi in basis])
    return np.linalg.eigvalsh(0.5 * (K + K.T))


# ----------------------------------------------------------------------
# material parameters
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False, kw_only=True)
class MaterialParams:
    """Every coefficient of the model.

    Attributes:
        mobility: ``N x N`` mobility M
        stiffness: Per-phase stiffness tensors ``(N, n, n, n, n)``
        eigenstrain: Per-phase eigenstrains ``(N, n, n)``
        gamma: Gradient coefficient (Gamma = gamma Id unless ``gradient_tensor`` is set)
        gradient_tensor: Optional full Gamma ``(N, n, N, n)``
        chemical: ``"poly"`` or ``"log"``
        well_height: Scale of the polynomial multi-well density
        theta: Entropy weight of the logarithmic density
        interaction: Matrix A of the logarithmic density
        delta: Regularisation of ``x log x``
        delta0: Upper bound for ``delta``
        alpha: Rate-independent dissipation weight
        beta: Viscous dissipation weight
        epsilon: Regularisation weight (0 runs the limit system)
        p: Exponent of the damage gradient regularisation
        degradation_exponent: q in Phi(z) = z^q
        eta_floor: Residual stiffness of fully damaged material
    """

    mobility: np.ndarray
    stiffness: np.ndarray
    eigenstrain: np.ndarray
    gamma: float = 1.0
    gradient_tensor: Optional[np.ndarray] = None
    chemical: str = "poly"
    well_height: float = 1.0
    theta: float = 1.0
    interaction: Optional[np.ndarray] = None
    delta: float = 0.1
    delta0: float = 0.3
    alpha: float = 1.0
    beta: float = 1.0
    epsilon: float = 0.0
    p: float = 4.0
    degradation_exponent: float = 2.0
    eta_floor: float = 0.01

    def __post_init__(self) -> None:
        object.__setattr__(self, "mobility", np.asarray(self.mobility, dtype=float))
        object.__setattr__(self, "eigenstrain", np.asarray(self.eigenstrain, dtype=float))
        object.__setattr__(self, "stiffness", symmetrize_stiffness_stack(np.asarray(self.stiffness, dtype=float)))
        if self.gradient_tensor is not None:
            object.__setattr__(self, "gradient_tensor", np.asarray(self.gradient_tensor, dtype=float))
        if self.interaction is not None:
            object.__setattr__(self, "interaction", np.asarray(self.interaction, dtype=float))
        violations = self.violations()
        if violations:
            raise ConfigError("invalid material parameters", violations)

    @property
    def n_components(self) -> int:
        return int(self.mobility.shape[0])

    @property
    def dim(self) -> int:
        return int(self.stiffness.shape[1])

    @cached_property
    def gamma_tensor(self) -> np.ndarray:
        if self.gradient_tensor is not None:
            return self.gradient_tensor
        N, n = self.n_components, self.dim
        return self.gamma * np.einsum("kl,de->kdle", np.eye(N), np.eye(n))

    @cached_property
    def interaction_matrix(self) -> np.ndarray:
        if self.interaction is None:
            return np.zeros((self.n_components, self.n_components))
        return self.interaction

    @cached_property
    def min_stiffness_eigenvalue(self) -> float:
        """Smallest eigenvalue of C_k over the phases (hence of C(c) on the simplex)."""
        return float(min(stiffness_eigenvalues(Ck).min() for Ck in self.stiffness))

    @property
    def monotonicity_constant(self) -> float:
        """The constant eta of the strong monotonicity of W^el_{,e}."""
        return self.eta_floor * self.min_stiffness_eigenvalue

    def violations(self) -> List[str]:
        """All violated parameter invariants (empty when valid)."""
        out: List[str] = []
        N = self.mobility.shape[0] if self.mobility.ndim == 2 else 0
        report = validate_mobility(self.mobility)
        out.extend(f"mobility: {v}" for v in report.violations)
        if self.stiffness.ndim != 5 or self.stiffness.shape[0] != N:
            out.append(f"stiffness must have shape (N, n, n, n, n) with N={N}, got {self.stiffness.shape}")
            return out
        n = self.stiffness.shape[1]
        if n not in (1, 2) or self.stiffness.shape[1:] != (n, n, n, n):
            out.append(f"stiffness tensors must be n x n x n x n with n in (1, 2), got {self.stiffness.shape[1:]}")
            return out
        if self.eigenstrain.shape != (N, n, n):
            out.append(f"eigenstrain must have shape {(N, n, n)}, got {self.eigenstrain.shape}")
        elif np.max(np.abs(self.eigenstrain - np.swapaxes(self.eigenstrain, 1, 2))) > 1e-12:
            out.append("eigenstrains must be symmetric")
        for k, Ck in enumerate(self.stiffness):
            lo = stiffness_eigenvalues(Ck).min()
            if lo <= 0:
                out.append(f"stiffness of phase {k} not positive definite on symmetric tensors (min eigenvalue {lo:.3e})")
        if self.gradient_tensor is not None:
            G = self.gradient_tensor
            if G.shape != (N, n, N, n):
                out.append(f"gradient tensor must have shape {(N, n, N, n)}, got {G.shape}")
            else:
                mat = G.reshape(N * n, N * n)
                if np.max(np.abs(mat - mat.T)) > 1e-12:
                    out.append("gradient tensor must be symmetric")
                elif np.linalg.eigvalsh(mat).min() <= 0:
                    out.append("gradient tensor must be positive definite")
        elif not self.gamma > 0:
            out.append(f"gamma must be positive, got {self.gamma}")
        if self.chemical not in CHEMICAL_MODES:
            out.append(f"chemical must be one of {CHEMICAL_MODES}, got {self.chemical!r}")
        if self.chemical == "log":
            if not self.theta > 0:
                out.append(f"theta must be positive, got {self.theta}")
            if not 0 < self.delta < self.delta0:
                out.append(f"delta must lie in (0, delta0) = (0, {self.delta0}), got {self.delta}")
            if self.gradient_tensor is not None:
                out.append("logarithmic mode requires Gamma = gamma Id")
            A = self.interaction_matrix
            if A.shape != (N, N):
                out.append(f"interaction matrix must be {N} x {N}, got {A.shape}")
            elif np.max(np.abs(A - A.T)) > 1e-12:
                out.append("interaction matrix must be symmetric")
        if not self.well_height >= 0:
            out.append(f"well height must be non-negative, got {self.well_height}")
        for name in ("alpha", "beta", "eta_floor"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive, got {getattr(self, name)}")
        if not self.epsilon >= 0:
            out.append(f"epsilon must be non-negative, got {self.epsilon}")
        if not (self.p > n and self.p >= 2):
            out.append(f"p must satisfy p > n and p >= 2, got p={self.p}, n={n}")
        if not self.degradation_exponent >= 2:
            out.append(f"degradation exponent must be >= 2, got {self.degradation_exponent}")
        return out

    def replace(self, **changes: Any) -> "MaterialParams":
        """Copy with some fields changed."""
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return MaterialParams(**values)

    @classmethod
    def default(cls, dim: int, n_components: int = 2, **overrides: Any) -> "MaterialParams":
        """Unit isotropic phases (lam = mu = 1, modulus 1 in 1D), no eigenstrain, M = N P."""
        N = n_components
        if dim == 1:
            C = np.ones((1, 1, 1, 1))
        else:
            C = isotropic_stiffness(dim, 1.0, 1.0)
        M = N * (np.eye(N) - np.full((N, N), 1.0 / N))
        values: Dict[str, Any] = {
            "mobility": M,
            "stiffness": np.stack([C] * N),
            "eigenstrain": np.zeros((N, dim, dim)),
        }
        values.update(overrides)
        return cls(**values)


def symmetrize_stiffness_stack(C: np.ndarray) -> np.ndarray:
    if C.ndim != 5:
        return C
    return np.stack([symmetrize_stiffness(Ck) for Ck in C])


# ----------------------------------------------------------------------
# degradation
# ----------------------------------------------------------------------
def degradation(z: np.ndarray, params: MaterialParams) -> np.ndarray:
    return np.power(z, params.degradation_exponent)


def degradation_prime(z: np.ndarray, params: MaterialParams) -> np.ndarray:
    q = params.degradation_exponent
    return q * np.power(z, q - 1.0)


def degradation_second(z: np.ndarray, params: MaterialParams) -> np.ndarray:
    q = params.degradation_exponent
    return q * (q - 1.0) * np.power(z, q - 2.0)


# ----------------------------------------------------------------------
# elastic density
# ----------------------------------------------------------------------
def _check_damage(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.size and (z.min() < -1e-12 or z.max() > 1.0 + 1e-12):
        raise ConstraintViolation(f"damage out of [0,1]: range [{z.min():.3e}, {z.max():.3e}]")
    return np.clip(z, 0.0, 1.0)


class ElasticTerms:
    """Intermediate quantities of ``W^el`` at a batch of points, computed once.

    Args:
        e: Strains ``(n, n, ...)``
        c: Concentrations ``(N, ...)``
        z: Damage ``(...)``
        params: Material parameters
    """

    def __init__(self, e: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams):
        self.params = params
        self.c = np.asarray(c, dtype=float)
        self.z = _check_damage(z)
        e = np.asarray(e, dtype=float)
        self.C = np.einsum("k...,kabcd->abcd...", self.c, params.stiffness)
        self.residual = e - np.einsum("k...,kab->ab...", self.c, params.eigenstrain)
        self.stress_hat = np.einsum("abcd...,cd...->ab...", self.C, self.residual)
        self.w_hat = 0.5 * np.einsum("ab...,ab...->...", self.residual, self.stress_hat)
        self.factor = degradation(self.z, params) + params.eta_floor

    @property
    def density(self) -> np.ndarray:
        return self.factor * self.w_hat

    @property
    def d_e(self) -> np.ndarray:
        return self.factor * self.stress_hat

    @property
    def d_z(self) -> np.ndarray:
        return degradation_prime(self.z, self.params) * self.w_hat

    @property
    def d_zz(self) -> np.ndarray:
        return degradation_second(self.z, self.params) * self.w_hat

    @property
    def d_c(self) -> np.ndarray:
        P = self.params
        quad = 0.5 * np.einsum("ab...,kabcd,cd...->k...", self.residual, P.stiffness, self.residual)
        lin = np.einsum("kab,ab...->k...", P.eigenstrain, self.stress_hat)
        return self.factor * (quad - lin)

    @property
    def d_cc(self) -> np.ndarray:
        P = self.params
        Es, Cs = P.eigenstrain, P.stiffness
        cross = np.einsum("lab,kabcd,cd...->kl...", Es, Cs, self.residual)
        direct = np.einsum("kab,abcd...,lcd->kl...", Es, self.C, Es)
        return self.factor * (direct - cross - np.swapaxes(cross, 0, 1))

    @property
    def d_ee(self) -> np.ndarray:
        """Second derivative in the strain, ``(n, n, n, n, ...)``."""
        return self.factor * self.C


def elastic_density(e: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams) -> np.ndarray:
    return ElasticTerms(e, c, z, params).density


def elastic_d_e(e: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Stress ``(Phi(z) + eta) C(c) (e - e*(c))``."""
    return ElasticTerms(e, c, z, params).d_e


def elastic_d_c(e: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams) -> np.ndarray:
    return ElasticTerms(e, c, z, params).d_c


def elastic_d_z(e: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams) -> np.ndarray:
    return ElasticTerms(e, c, z, params).d_z


# ----------------------------------------------------------------------
# integrated energy
# ----------------------------------------------------------------------
@dataclass
class EnergyLedger:
    """Breakdown of the regularised free energy."""

    gradient_c: float
    gradient_z: float
    chemical: float
    elastic: float
    reg_u: float
    reg_z: float
    total: float = field(init=False)

    def __post_init__(self) -> None:
        self.total = self.gradient_c + self.gradient_z + self.chemical + self.elastic + self.reg_u + self.reg_z

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _boundary(grid: Grid, boundary: Optional[BoundaryData]) -> BoundaryData:
    if boundary is None:
        if grid.dirichlet_faces:
            raise ConstraintViolation(f"boundary data required on Dirichlet faces {grid.dirichlet_faces}")
        return BoundaryData()
    return boundary


def strains(u: np.ndarray, grid: Grid, boundary: Optional[BoundaryData]) -> List[np.ndarray]:
    """Displacement gradients per side combination, each ``(n, n, *cells)``."""
    boundary = _boundary(grid, boundary)
    return [grid.displacement_gradient(u, s, boundary) for s in grid.sides]


def sym_part(J: np.ndarray) -> np.ndarray:
    """Symmetric part over the two leading axes."""
    return 0.5 * (J + np.swapaxes(J, 0, 1))


def total_energy(
    u: np.ndarray,
    c: np.ndarray,
    z: np.ndarray,
    params: MaterialParams,
    grid: Grid,
    boundary: Optional[BoundaryData] = None,
) -> EnergyLedger:
    """Evaluate ``E_eps(u, c, z)`` term by term.

    Args:
        u: Displacement ``(n, *cells)``
        c: Concentration ``(N, *cells)``
        z: Damage ``(*cells)`` in [0, 1]
        params: Material parameters
        grid: The grid
        boundary: Displacement data on the Dirichlet faces

    Returns:
        The energy ledger
    """
    n, N = grid.dim, params.n_components
    u = grid.check_field(u, (n,), "displacement")
    c = grid.check_field(c, (N,), "concentration")
    z = _check_damage(grid.check_field(z, (), "damage"))
    Gamma = params.gamma_tensor
    grad_c = grad_z = elastic = reg_u = reg_z = 0.0
    nsides = len(grid.sides)
    for side, J in zip(grid.sides, strains(u, grid, boundary)):
        gc = grid.side_gradient(c, side)
        gz = grid.side_gradient(z, side)
        grad_c += 0.5 * integrate(np.einsum("kd...,kdle,le...->...", gc, Gamma, gc), grid)
        gz2 = np.sum(gz * gz, axis=0)
        grad_z += 0.5 * integrate(gz2, grid)
        elastic += integrate(elastic_density(sym_part(J), c, z, params), grid)
        if params.epsilon > 0:
            J2 = np.sum(J * J, axis=(0, 1))
            reg_u += params.epsilon / 4.0 * integrate(J2 * J2, grid)
            reg_z += params.epsilon / params.p * integrate(np.power(gz2, params.p / 2.0), grid)
    return EnergyLedger(
        gradient_c=grad_c / nsides,
        gradient_z=grad_z / nsides,
        chemical=integrate(chemical_density(c, params), grid),
        elastic=elastic / nsides,
        reg_u=reg_u / nsides,
        reg_z=reg_z / nsides,
    )


def energy_gradient_u(
    u: np.ndarray,
    c: np.ndarray,
    z: np.ndarray,
    params: MaterialParams,
    grid: Grid,
    boundary: Optional[BoundaryData] = None,
) -> np.ndarray:
    """L2 gradient of E with respect to u (cells only; Dirichlet data fixed)."""
    out = np.zeros((grid.dim,) + grid.cells)
    for side, J in zip(grid.sides, strains(u, grid, boundary)):
        tau = elastic_d_e(sym_part(J), c, z, params)
        if params.epsilon > 0:
            tau = tau + params.epsilon * np.sum(J * J, axis=(0, 1)) * J
        out += grid.displacement_gradient_adjoint(tau, side)
    return out / len(grid.sides)


def concentration_force(
    u: np.ndarray,
    c: np.ndarray,
    z: np.ndarray,
    params: MaterialParams,
    grid: Grid,
    boundary: Optional[BoundaryData] = None,
) -> np.ndarray:
    """``W^ch_{,c}(c) + W^el_{,c}(e(u), c, z)`` (side averaged), ``(N, *cells)``."""
    el = sum(elastic_d_c(sym_part(J), c, z, params) for J in strains(u, grid, boundary)) / len(grid.sides)
    return chemical_grad(c, params) + el


def energy_gradient_c(
    u: np.ndarray,
    c: np.ndarray,
    z: np.ndarray,
    params: MaterialParams,
    grid: Grid,
    boundary: Optional[BoundaryData] = None,
) -> np.ndarray:
    """L2 gradient of E with respect to c (not projected)."""
    Gamma = params.gamma_tensor
    lap = np.zeros_like(c, dtype=float)
    for side in grid.sides:
        gc = grid.side_gradient(c, side)
        lap += grid.side_gradient_adjoint(np.einsum("kdle,le...->kd...", Gamma, gc), side)
    return lap / len(grid.sides) + concentration_force(u, c, z, params, grid, boundary)


def damage_flux(gz: np.ndarray, params: MaterialParams) -> np.ndarray:
    """``(1 + eps |grad z|^(p-2)) grad z`` for a one-sided gradient ``(dim, *cells)``."""
    if params.epsilon > 0:
        g2 = np.sum(gz * gz, axis=0)
        return (1.0 + params.epsilon * np.power(g2, params.p / 2.0 - 1.0)) * gz
    return gz


def energy_gradient_z(
    u: np.ndarray,
    c: np.ndarray,
    z: np.ndarray,
    params: MaterialParams,
    grid: Grid,
    boundary: Optional[BoundaryData] = None,
) -> np.ndarray:
    """L2 gradient of E with respect to z."""
    out = np.zeros(grid.cells)
    for side, J in zip(grid.sides, strains(u, grid, boundary)):
        gz = grid.side_gradient(z, side)
        out += grid.side_gradient_adjoint(damage_flux(gz, params), side)
        out += elastic_d_z(sym_part(J), c, z, params)
    return out / len(grid.sides)


def dissipation_R(z_rate: np.ndarray, params: MaterialParams, grid: Grid, tol: float = 0.0) -> float:
    """``int -alpha zdot + beta/2 zdot^2``; healing (positive rate) is forbidden.

    Args:
        z_rate: Damage rate field
        params: Material parameters
        grid: The grid
        tol: Largest positive rate tolerated as rounding

    Returns:
        The dissipation, non-negative
    """
    z_rate = grid.check_field(z_rate, (), "damage rate")
    if z_rate.size and z_rate.max() > tol:
        raise ConstraintViolation(f"damage rate must be non-positive, max is {z_rate.max():.3e}")
    z_rate = np.minimum(z_rate, 0.0)
    return integrate(-params.alpha * z_rate + 0.5 * params.beta * z_rate**2, grid)


# ----------------------------------------------------------------------
# assumption checks
# ----------------------------------------------------------------------
@dataclass
class AssumptionReport:
    """Sampled witnesses of the structural assumptions on the densities.

    Attributes:
        passed: No hard violation found
        violations: Hard violations (definiteness, sign conditions)
        constants: Observed growth and monotonicity constants
    """

    passed: bool
    violations: List[str] = field(default_factory=list)
    constants: Dict[str, float] = field(default_factory=dict)


def simplex_samples(N: int, count: int, rng: np.random.Generator, spread: float = 0.0) -> np.ndarray:
    """Points of Sigma, ``(N, count)``: Dirichlet draws plus an optional tangent perturbation."""
    pts = rng.dirichlet(np.ones(N), size=count).T
    if spread > 0:
        Q = tangent_basis(N)
        pts = pts + spread * Q @ rng.standard_normal((N - 1, count))
    return pts


def log_density_minimum(params: MaterialParams, deltas: Sequence[float], count: int = 100_000, seed: int = 0) -> Dict[float, float]:
    """Minimum of ``W^{ch,delta}`` over sampled simplex points for each delta."""
    rng = np.random.default_rng(seed)
    pts = simplex_samples(params.n_components, count, rng, spread=0.25)
    out = {}
    for d in deltas:
        out[float(d)] = float(np.min(chem_log_delta(pts, params.replace(chemical="log", delta=float(d)))))
    return out


def check_assumptions(params: MaterialParams, samples: int = 2000, seed: int = 0) -> AssumptionReport:
    """Sample the growth and monotonicity assumptions of the energy densities.

    Args:
        params: Material parameters
        samples: Number of random points
        seed: RNG seed

    Returns:
        Report with observed constants; hard violations fail it
    """
    rng = np.random.default_rng(seed)
    n, N = params.dim, params.n_components
    violations = list(params.violations())
    c = simplex_samples(N, samples, rng)
    z = rng.uniform(0.0, 1.0, samples)
    raw = rng.standard_normal((n, n, samples))
    e1 = sym_part(raw)
    e2 = sym_part(rng.standard_normal((n, n, samples)))
    t1, t2 = ElasticTerms(e1, c, z, params), ElasticTerms(e2, c, z, params)
    e_sq = np.einsum("ab...,ab...->...", e1, e1)
    c_sq = np.sum(c * c, axis=0)
    scale = e_sq + c_sq + 1.0
    constants: Dict[str, float] = {
        "A2_growth": float(np.max(t1.density / scale)),
        "A5_growth": float(np.max(np.sqrt(np.sum(t1.d_c**2, axis=0)) / scale)),
        "A6_growth": float(np.max(np.abs(t1.d_z) / scale)),
        "A3_eta": params.monotonicity_constant,
    }
    diff = e1 - e2
    mono = np.einsum("ab...,ab...->...", t1.d_e - t2.d_e, diff) / np.einsum("ab...,ab...->...", diff, diff)
    constants["A3_observed"] = float(mono.min())
    if mono.min() < params.monotonicity_constant * (1.0 - 1e-10):
        violations.append(f"A3 monotonicity fails: observed {mono.min():.3e} < eta {params.monotonicity_constant:.3e}")
    zz = np.linspace(0.0, 1.0, 101)
    if abs(float(degradation(np.array(0.0), params))) > 0 or np.any(degradation_prime(zz, params) < 0):
        violations.append("degradation must satisfy Phi(0) = 0 and Phi' >= 0")
    cc = simplex_samples(N, samples, rng, spread=1.0)
    if params.chemical == "poly":
        two_star = np.inf if n <= 2 else 2.0 * n / (n - 2.0)
        expo = 2.0 if not np.isfinite(two_star) else two_star / 2.0
        grad = np.sqrt(np.sum(chem_poly_grad(cc, params.well_height) ** 2, axis=0))
        constants["A7_growth"] = float(np.max(grad / (np.sum(cc * cc, axis=0) ** (expo / 2.0) + 1.0)))
        constants["chemical_lower_bound"] = float(np.min(chem_poly(cc, params.well_height)))
    else:
        constants["chemical_lower_bound"] = float(np.min(chem_log_delta(cc, params)))
    return AssumptionReport(not violations, violations, constants)
