"""Synthetic observations of the spiked model and reproducible trial execution"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import functools
import logging
from collections.abc import Callable, Sequence
from typing import Any, Self, TypeVar

import numpy as np

from .equilibrium import EquilibriumContext, finite_horizon
from .inference import (
    detect_sources,
    estimate_powers,
    music_scan,
    sample_gram_eigs,
    traditional_music_scan,
)
from .rmt_models import (
    ArmaSpec,
    Constellation,
    DetectionConfig,
    DomainError,
    EigenDecomp,
    ToeplitzCovariance,
)
from .spectral_model import build_nu, toeplitz_covariance
from .utils import steering_matrix

LOGGER = logging.getLogger(__name__)

TResult = TypeVar("TResult")


@functools.lru_cache(maxsize=32)
def noise_covariance(noise: ArmaSpec, t: int) -> ToeplitzCovariance:
    return toeplitz_covariance(noise, t)


@functools.lru_cache(maxsize=32)
def _noise_sqrt(noise: ArmaSpec, t: int) -> np.ndarray:
    root = noise_covariance(noise, t).sqrt()
    root.setflags(write=False)
    return root


@functools.lru_cache(maxsize=32)
def equilibrium_context(noise: ArmaSpec, c: float) -> EquilibriumContext:
    """Shared asymptotic context, so that the edge is solved once per `(noise, c)`"""
    return EquilibriumContext(nu=build_nu(noise), c=c)


@functools.lru_cache(maxsize=32)
def finite_horizon_context(noise: ArmaSpec, t: int, c: float) -> EquilibriumContext:
    """Context on the eigenvalue measure of `R_T` itself, for finite-`T` predictions"""
    return finite_horizon(noise_covariance(noise, t), c)


@dataclasses.dataclass(frozen=True, kw_only=True)
class Scenario:
    n: int
    t: int
    thetas_deg: tuple[float, ...] = ()
    # `SNR_k = 20 log10(a_k)` against unit noise power.
    amplitudes: tuple[float, ...] = ()
    constellation: Constellation = Constellation.QPSK
    noise: ArmaSpec = dataclasses.field(default_factory=ArmaSpec)
    detection: DetectionConfig = dataclasses.field(default_factory=DetectionConfig)

    def __post_init__(self) -> None:
        details = dict(n=self.n, t=self.t, thetas_deg=self.thetas_deg, amplitudes=self.amplitudes)
        if self.n < 1 or self.t < 1:
            raise DomainError(message="Dimensions must be positive", details=details)
        if len(self.thetas_deg) != len(self.amplitudes):
            raise DomainError(message="One amplitude per source is required", details=details)
        if len(set(self.thetas_deg)) != len(self.thetas_deg):
            raise DomainError(message="Source angles must be distinct", details=details)
        if any(amp <= 0 for amp in self.amplitudes) or list(self.amplitudes) != sorted(self.amplitudes, reverse=True):
            raise DomainError(message="Amplitudes must be positive and descending", details=details)
        if any(abs(theta) > 90 for theta in self.thetas_deg):
            raise DomainError(message="Angles must lie within [-90, 90] degrees", details=details)
        if not self.detection.max_sources < self.n:
            raise DomainError(message="Need L < N", details={**details, "max_sources": self.detection.max_sources})
        if self.k > self.detection.max_sources:
            raise DomainError(
                message="More sources than L", details={**details, "max_sources": self.detection.max_sources}
            )

    @classmethod
    def from_snr_db(cls, *, snr_db: Sequence[float], **kwargs: Any) -> Self:
        return cls(amplitudes=tuple(10.0 ** (snr / 20.0) for snr in snr_db), **kwargs)

    def replace(self, **kwargs: Any) -> Self:
        return dataclasses.replace(self, **kwargs)

    def noise_only(self) -> Self:
        return self.replace(thetas_deg=(), amplitudes=())

    @property
    def k(self) -> int:
        return len(self.thetas_deg)

    @property
    def c_t(self) -> float:
        return self.n / self.t

    @property
    def thetas_rad(self) -> np.ndarray:
        return np.deg2rad(np.array(self.thetas_deg, dtype=float))

    @property
    def powers(self) -> tuple[float, ...]:
        return tuple(amp**2 for amp in self.amplitudes)

    @property
    def steering(self) -> np.ndarray:
        return steering_matrix(self.n, self.thetas_rad)

    @property
    def covariance(self) -> ToeplitzCovariance:
        return noise_covariance(self.noise, self.t)

    def context(self) -> EquilibriumContext:
        return equilibrium_context(self.noise, self.c_t)

    def horizon_context(self) -> EquilibriumContext:
        return finite_horizon_context(self.noise, self.t, self.c_t)


def draw_symbols(constellation: Constellation, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Unit-variance circular symbols"""
    if constellation is Constellation.QPSK:
        signs = 2.0 * rng.integers(0, 2, size=(2, *shape)) - 1.0
        return (signs[0] + 1j * signs[1]) / np.sqrt(2.0)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synth_observation(sc: Scenario, rng: np.random.Generator) -> np.ndarray:
    """`Y = T^-1/2 (H diag(a) S + W R^1/2)` with i.i.d. `CN(0, 1)` entries in `W`"""
    white = draw_symbols(Constellation.GAUSSIAN, (sc.n, sc.t), rng)
    noise = white if sc.noise.is_white else white @ _noise_sqrt(sc.noise, sc.t)
    if sc.k:
        symbols = draw_symbols(sc.constellation, (sc.k, sc.t), rng)
        noise = noise + (sc.steering * np.array(sc.amplitudes)) @ symbols
    return noise / np.sqrt(sc.t)


def trial_rng(seed: int, sweep_index: int, trial_index: int) -> np.random.Generator:
    """Counter-derived substream, independent of scheduling"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(sweep_index, trial_index)))


def run_trials(
    trial_fn: Callable[[np.random.Generator], TResult],
    *,
    seed: int,
    trials: int,
    sweep_index: int = 0,
    threads: int = 1,
) -> list[TResult]:
    """Results in trial order, whatever the worker count"""

    def run_one(trial_index: int) -> TResult:
        return trial_fn(trial_rng(seed, sweep_index, trial_index))

    if threads <= 1:
        return [run_one(idx) for idx in range(trials)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run_one, range(trials)))


@dataclasses.dataclass(frozen=True, kw_only=True)
class TrialOutcome:
    k_hat: int
    p_hats: tuple[float, ...]
    # Degrees.
    theta_hats: tuple[float, ...]
    # Localization function values at the true angles.
    gamma_at_truth: tuple[float, ...]
    top_eigenvalues: tuple[float, ...]


def analyze_observation(
    eigs: EigenDecomp,
    sc: Scenario,
    *,
    forced_k: int | None = None,
    weighted: bool = True,
    grid_deg: np.ndarray | None = None,
    window_deg: tuple[float, float] | None = None,
    power_scale: float = 1.0,
    with_powers: bool = True,
) -> TrialOutcome:
    """
    Detection, power estimation and localization on one decomposition.
    `power_scale` divides the power estimates (whitened data carry `tau_T p`).
    """
    k_hat = detect_sources(eigs, sc.detection).k_hat if forced_k is None else forced_k
    top = tuple(float(val) for val in eigs.eigenvalues[: sc.detection.max_sources + 1])
    if k_hat < 1:
        return TrialOutcome(k_hat=k_hat, p_hats=(), theta_hats=(), gamma_at_truth=(), top_eigenvalues=top)

    p_hats: tuple[float, ...] = ()
    if with_powers:
        p_hats = tuple(power / power_scale for power in estimate_powers(eigs, k_hat, sc.c_t).powers)

    def scan(grid_rad: np.ndarray, window: tuple[float, float] | None = None) -> Any:
        if weighted:
            return music_scan(eigs, k_hat, sc.c_t, grid_rad, window=window)
        return traditional_music_scan(eigs, k_hat, grid_rad, window=window)

    gamma_at_truth: tuple[float, ...] = ()
    if sc.k:
        gamma_at_truth = tuple(float(scan(np.array([theta])).gamma_values[0]) for theta in sc.thetas_rad)
    theta_hats: tuple[float, ...] = ()
    if grid_deg is not None:
        window = None if window_deg is None else (np.deg2rad(window_deg[0]), np.deg2rad(window_deg[1]))
        theta_hats = tuple(float(np.rad2deg(theta)) for theta in scan(np.deg2rad(grid_deg), window).estimates)
    return TrialOutcome(
        k_hat=k_hat, p_hats=p_hats, theta_hats=theta_hats, gamma_at_truth=gamma_at_truth, top_eigenvalues=top
    )


def observe(sc: Scenario, rng: np.random.Generator) -> EigenDecomp:
    return sample_gram_eigs(synth_observation(sc, rng))
