"""
ARMA noise model: impulse response, autocovariances, spectral density, the
Toeplitz covariance `R_T` and the spectral measure `nu` as a quadrature.
"""

from __future__ import annotations

import functools
import logging

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.signal

from .rmt_models import (
    ArmaSpec,
    ConvergenceError,
    DivergentIntegralError,
    DomainError,
    NuQuadrature,
    SpectreDiagnosticError,
    ToeplitzCovariance,
)

LOGGER = logging.getLogger(__name__)

TAIL_MASS_RTOL = 1e-12
MAX_IMPULSE_LENGTH = 1 << 22
PSD_PIVOT_RTOL = 1e-10


def _raw_impulse(numerator: np.ndarray, denominator: np.ndarray, length: int) -> np.ndarray:
    impulse = np.zeros(length)
    impulse[0] = 1.0
    return scipy.signal.lfilter(numerator, denominator, impulse)


@functools.lru_cache(maxsize=128)
def _impulse_response_cached(spec: ArmaSpec) -> tuple[np.ndarray, float]:
    """Returns the (unnormalized) truncated impulse response and its energy"""
    numerator, denominator = spec.numerator, spec.denominator
    if spec.impulse_truncation is not None:
        psi = _raw_impulse(numerator, denominator, spec.impulse_truncation)
    else:
        length = max(64, 2 * numerator.size)
        while True:
            psi = _raw_impulse(numerator, denominator, length)
            abs_psi = np.abs(psi)
            # Tail beyond the last MA tap decays geometrically;
            # a negligible second half means the full tail is negligible too.
            if abs_psi[length // 2 :].sum() < TAIL_MASS_RTOL * abs_psi.sum():
                break
            length *= 2
            if length > MAX_IMPULSE_LENGTH:
                raise ConvergenceError(
                    message="Impulse response does not decay", details={"ar": spec.ar, "length": length}
                )
        tail = np.cumsum(abs_psi[::-1])[::-1]
        keep = int(np.argmax(tail < TAIL_MASS_RTOL * abs_psi.sum()))
        psi = psi[: max(keep, numerator.size)]
    energy = float(np.dot(psi, psi))
    psi.setflags(write=False)
    return psi, energy


def impulse_response(spec: ArmaSpec) -> np.ndarray:
    """
    Power-series coefficients `psi_0, psi_1, ...` of the transfer function,
    rescaled to unit energy when `unit_variance` is set.
    """
    psi, energy = _impulse_response_cached(spec)
    if spec.unit_variance:
        return psi / np.sqrt(energy)
    return psi.copy()


def autocovariances(spec: ArmaSpec, max_lag: int) -> np.ndarray:
    """`r_0 .. r_{max_lag}`"""
    if max_lag < 0:
        raise DomainError(message="Negative lag", details={"max_lag": max_lag})
    psi = impulse_response(spec)
    full = np.correlate(psi, psi, mode="full")[psi.size - 1 :]
    result = np.zeros(max_lag + 1)
    count = min(full.size, max_lag + 1)
    result[:count] = full[:count]
    return result


def autocovariance(spec: ArmaSpec, lag: int) -> float:
    return float(autocovariances(spec, abs(lag))[-1])


def spectral_density(spec: ArmaSpec, u: float | np.ndarray) -> np.ndarray | float:
    """`q(u) = |p(exp(2 i pi u))|^2`, normalized to unit mean when `unit_variance` is set"""
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    _, response = scipy.signal.freqz(spec.numerator, spec.denominator, worN=2 * np.pi * u_arr)
    values = np.abs(response) ** 2
    if spec.unit_variance:
        _, energy = _impulse_response_cached(spec)
        values = values / energy
    if np.ndim(u) == 0:
        return float(values[0])
    return values


def _refine_extremum(spec: ArmaSpec, u_center: float, step: float, *, maximize: bool) -> float:
    sign = -1.0 if maximize else 1.0
    res = scipy.optimize.minimize_scalar(
        lambda u: sign * float(spectral_density(spec, u % 1.0)),
        bounds=(u_center - step, u_center + step),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(spectral_density(spec, float(res.x) % 1.0))


@functools.lru_cache(maxsize=64)
def build_nu(spec: ArmaSpec) -> NuQuadrature:
    """Pushforward of the uniform measure on `[0, 1)` through `q`, on uniform nodes"""
    if spec.is_white:
        one = np.ones(1)
        return NuQuadrature(nodes=one, weights=one, a_nu=1.0, b_nu=1.0)

    count = spec.quad_points
    u_nodes = np.arange(count) / count
    nodes = np.asarray(spectral_density(spec, u_nodes))
    weights = np.full(count, 1.0 / count)
    step = 1.0 / count
    b_nu = max(float(nodes.max()), _refine_extremum(spec, u_nodes[np.argmax(nodes)], step, maximize=True))
    a_nu = min(float(nodes.min()), _refine_extremum(spec, u_nodes[np.argmin(nodes)], step, maximize=False))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    LOGGER.debug(
        "Built nu quadrature",
        extra=dict(x_quad_points=count, x_a_nu=a_nu, x_b_nu=b_nu, x_mean=float(nodes.mean())),
    )
    return NuQuadrature(nodes=nodes, weights=weights, a_nu=max(a_nu, 0.0), b_nu=b_nu)


def inverse_moments(spec: ArmaSpec) -> tuple[float, float]:
    """`(integral of 1/q, integral of 1/q^2)` over `[0, 1)`"""
    nu = build_nu(spec)
    if nu.a_nu <= 1e-14 * nu.b_nu:
        raise DivergentIntegralError(details={"a_nu": nu.a_nu, "b_nu": nu.b_nu})
    inv = 1.0 / nu.nodes
    return float(nu.integrate(inv)), float(nu.integrate(inv**2))


def toeplitz_covariance(spec: ArmaSpec, dim: int) -> ToeplitzCovariance:
    if dim < 1:
        raise DomainError(message="Covariance dimension must be positive", details={"dim": dim})
    first_row = autocovariances(spec, dim - 1)
    eigenvalues, eigenvectors = scipy.linalg.eigh(scipy.linalg.toeplitz(first_row))
    if eigenvalues[0] < -PSD_PIVOT_RTOL * first_row[0]:
        raise SpectreDiagnosticError(
            message="Toeplitz covariance is not positive semidefinite",
            details={"min_eigenvalue": float(eigenvalues[0]), "dim": dim},
        )
    return ToeplitzCovariance(first_row=first_row, eigenvalues=eigenvalues, eigenvectors=eigenvectors)
