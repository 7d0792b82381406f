"""Value types and exceptions shared by the numeric modules"""

from __future__ import annotations

import dataclasses
import enum
from typing import Any, NamedTuple, Self

import numpy as np
import pydantic
import scipy.linalg

# Relative height separating resolved lobes from sidelobes in a localization scan.
DOMINANT_PEAK_RATIO = 0.5


class SpectreError(Exception):
    """Base for all numeric-layer failures"""


@dataclasses.dataclass(kw_only=True)
class SpectreDiagnosticError(SpectreError):
    message: str = "Numerical failure"
    details: dict[str, Any] = dataclasses.field(default_factory=dict)

    def __str__(self) -> str:
        if not self.details:
            return self.message
        details_s = ", ".join(f"{key}={val!r}" for key, val in self.details.items())
        return f"{self.message} ({details_s})"

    def replace(self, **kwargs: Any) -> Self:
        return dataclasses.replace(self, **kwargs)


@dataclasses.dataclass(kw_only=True)
class UnstableFilterError(SpectreDiagnosticError):
    message: str = "AR polynomial has roots on or outside the unit circle"


@dataclasses.dataclass(kw_only=True)
class DomainError(SpectreDiagnosticError):
    message: str = "Argument outside of the function domain"


@dataclasses.dataclass(kw_only=True)
class SubcriticalPowerError(DomainError):
    """The source power does not exceed the detectability threshold"""

    message: str = "Source power is below the detectability threshold"


@dataclasses.dataclass(kw_only=True)
class BracketError(SpectreDiagnosticError):
    message: str = "Could not bracket the root"


@dataclasses.dataclass(kw_only=True)
class ConvergenceError(SpectreDiagnosticError):
    message: str = "Iteration did not converge"


@dataclasses.dataclass(kw_only=True)
class PoleError(DomainError):
    message: str = "Evaluation point coincides with a retained eigenvalue"


@dataclasses.dataclass(kw_only=True)
class InvalidObservationError(SpectreDiagnosticError):
    message: str = "Observation matrix is not usable"


@dataclasses.dataclass(kw_only=True)
class SingularCovarianceError(SpectreDiagnosticError):
    message: str = "Covariance matrix is singular"


@dataclasses.dataclass(kw_only=True)
class DivergentIntegralError(SpectreDiagnosticError):
    message: str = "Spectral density touches zero, inverse moments diverge"


class Constellation(enum.StrEnum):
    QPSK = "qpsk"
    GAUSSIAN = "gaussian"

    @property
    def kappa(self) -> float:
        """Fourth cumulant parameter `E|s|^4 - 2` of the unit-variance symbols"""
        return -1.0 if self is Constellation.QPSK else 0.0


def _as_float_tuple(value: Any) -> Any:
    if value is None:
        return ()
    if isinstance(value, (int, float)):
        return (value,)
    return value


class ArmaSpec(pydantic.BaseModel, frozen=True, extra="forbid"):
    """
    Stationary ARMA noise process.

    Coefficients follow the process convention
    `x_t = ar[0] x_{t-1} + ... + w_t + ma[0] w_{t-1} + ...`,
    i.e. the transfer function is `(1 + sum ma_j z^-j) / (1 - sum ar_i z^-i)`.
    """

    ar: tuple[float, ...] = ()
    ma: tuple[float, ...] = ()
    # Rescale so that `r_0 = 1`.
    unit_variance: bool = True
    # `None` picks the length from the tail-mass rule.
    impulse_truncation: int | None = pydantic.Field(default=None, ge=1)
    quad_points: int = pydantic.Field(default=2048, ge=64)

    @pydantic.field_validator("ar", "ma", mode="before")
    @classmethod
    def _normalize_coeffs(cls, value: Any) -> Any:
        return _as_float_tuple(value)

    @pydantic.model_validator(mode="after")
    def _check_stability(self) -> Self:
        roots = self.ar_roots
        if roots.size and float(np.max(np.abs(roots))) >= 1.0:
            raise UnstableFilterError(details={"ar": self.ar, "max_root_modulus": float(np.max(np.abs(roots)))})
        return self

    @property
    def ar_roots(self) -> np.ndarray:
        return np.roots(self.denominator) if self.ar else np.zeros(0)

    @property
    def numerator(self) -> np.ndarray:
        return np.array([1.0, *self.ma])

    @property
    def denominator(self) -> np.ndarray:
        return np.array([1.0, *(-coef for coef in self.ar)])

    @property
    def is_white(self) -> bool:
        return not any(self.ar) and not any(self.ma)

    @classmethod
    def ar1(cls, a: float, **kwargs: Any) -> Self:
        return cls(ar=(a,) if a else (), **kwargs)

    def replace(self, **kwargs: Any) -> Self:
        return self.model_validate({**self.model_dump(), **kwargs})


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class NuQuadrature:
    """
    Quadrature representation of the noise spectral measure:
    `integral of f d(nu)` is `sum(weights * f(nodes))`.
    """

    nodes: np.ndarray
    weights: np.ndarray
    a_nu: float
    b_nu: float

    def __post_init__(self) -> None:
        if self.nodes.shape != self.weights.shape or not self.nodes.size:
            raise DomainError(message="Quadrature nodes/weights mismatch", details={"nodes": self.nodes.shape})
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            total = float(self.weights.sum())
            raise DomainError(message="Quadrature weights do not sum to one", details={"sum": total})
        if np.any(self.nodes < 0):
            raise DomainError(message="Negative quadrature node")

    @classmethod
    def atoms(cls, values: np.ndarray | list[float]) -> Self:
        """Uniform atomic measure, e.g. the empirical eigenvalue measure of `R_T`"""
        nodes = np.clip(np.asarray(values, dtype=float).ravel(), 0.0, None)
        weights = np.full(nodes.shape, 1.0 / nodes.size)
        return cls(nodes=nodes, weights=weights, a_nu=float(nodes.min()), b_nu=float(nodes.max()))

    def integrate(self, values: np.ndarray) -> Any:
        """Integrate along the last axis of `values` (evaluated at `nodes`)"""
        return values @ self.weights

    @property
    def mean(self) -> float:
        return float(self.integrate(self.nodes))


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class ToeplitzCovariance:
    """Hermitian Toeplitz covariance `R_T` along with its eigendecomposition"""

    first_row: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = dataclasses.field(repr=False)

    @property
    def dim(self) -> int:
        return self.first_row.size

    def matrix(self) -> np.ndarray:
        return scipy.linalg.toeplitz(self.first_row)

    def sqrt(self) -> np.ndarray:
        """Hermitian square root"""
        vals = np.sqrt(np.clip(self.eigenvalues, 0.0, None))
        return (self.eigenvectors * vals) @ self.eigenvectors.T

    def inv_sqrt(self) -> np.ndarray:
        """Hermitian inverse square root"""
        if self.eigenvalues.min() <= 1e-12 * self.eigenvalues.max():
            raise SingularCovarianceError(details={"min_eigenvalue": float(self.eigenvalues.min())})
        return (self.eigenvectors / np.sqrt(self.eigenvalues)) @ self.eigenvectors.T

    @property
    def inverse_trace_ratio(self) -> float:
        """`T^-1 tr R_T^-1`"""
        return float(np.mean(1.0 / self.eigenvalues))


@dataclasses.dataclass(frozen=True, kw_only=True)
class SolverConfig:
    abs_tol: float = 1e-12
    # Tolerance on the `x` axis.
    x_tol: float = 1e-10
    max_iter: int = 200
    bracket_expansion: float = 2.0

    def __post_init__(self) -> None:
        if self.abs_tol <= 0 or self.x_tol <= 0:
            raise DomainError(message="Solver tolerances must be positive", details={"abs_tol": self.abs_tol})
        if self.bracket_expansion <= 1:
            raise DomainError(message="Bracket expansion factor must exceed 1")

    def replace(self, **kwargs: Any) -> Self:
        return dataclasses.replace(self, **kwargs)


class EdgeSolution(NamedTuple):
    # right edge of the limiting noise bulk
    b: float
    # `m(b+)`
    m_b: float


class DetectionConfig(pydantic.BaseModel, frozen=True, extra="forbid"):
    # `L`, known upper bound on the number of sources.
    max_sources: int = pydantic.Field(default=5, ge=1)
    epsilon: float = pydantic.Field(default=0.75, gt=0)

    def replace(self, **kwargs: Any) -> Self:
        return self.model_copy(update=kwargs)


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class EigenDecomp:
    """Eigenvalues (descending) and matching eigenvectors (columns) of `Y Y^H`"""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = dataclasses.field(repr=False)

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    def projector(self, indices: tuple[int, ...] | list[int]) -> np.ndarray:
        vecs = self.eigenvectors[:, list(indices)]
        return vecs @ vecs.conj().T


class DetectionResult(NamedTuple):
    k_hat: int
    # `lambda_k / lambda_{k+1}` for k = 1..L
    ratios: tuple[float, ...]


class PowerEstimates(NamedTuple):
    powers: tuple[float, ...]
    # `False` where `g_hat(lambda_i) <= 0`
    reliable: tuple[bool, ...]

    @property
    def all_reliable(self) -> bool:
        return all(self.reliable)


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class LocalizationScan:
    theta_grid: np.ndarray
    gamma_values: np.ndarray
    # Refined local maxima, descending by height.
    peaks: tuple[float, ...]
    peak_heights: tuple[float, ...]
    k: int

    @property
    def estimates(self) -> tuple[float, ...]:
        """The top-`k` peak angles (radians)"""
        return self.peaks[: self.k]

    def dominant_peaks(self, min_ratio: float = DOMINANT_PEAK_RATIO) -> tuple[float, ...]:
        """
        Peaks reaching `min_ratio` times the highest one.
        Array sidelobes of a close source pair stay around a twentieth of the main lobe.
        """
        if not self.peaks:
            return ()
        floor = min_ratio * self.peak_heights[0]
        return tuple(theta for theta, height in zip(self.peaks, self.peak_heights, strict=True) if height >= floor)


@dataclasses.dataclass(frozen=True, kw_only=True)
class FluctuationParams:
    alpha: float
    beta: float
    phi: float
    kappa: float
    p: float
    rho: float
    g_prime_at_rho: float

    @property
    def psi(self) -> float:
        return self.alpha + self.beta + self.kappa * self.phi

    @property
    def psi_breve(self) -> float:
        return self.alpha + self.beta

    def replace(self, **kwargs: Any) -> Self:
        return dataclasses.replace(self, **kwargs)
