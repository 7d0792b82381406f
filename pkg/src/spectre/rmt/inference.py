"""
Estimators driven by the sample Gram matrix `Y Y^H`:
source counting, power estimation, subspace bilinear forms and localization,
along with the classical baselines they are compared against.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
import scipy.linalg
import scipy.signal
import scipy.stats

from .rmt_models import (
    DetectionConfig,
    DetectionResult,
    DomainError,
    EigenDecomp,
    InvalidObservationError,
    LocalizationScan,
    PoleError,
    PowerEstimates,
    SingularCovarianceError,
    ToeplitzCovariance,
)
from .utils import parabolic_peak, steering_matrix

LOGGER = logging.getLogger(__name__)

EIGENVALUE_FLOOR_RTOL = 1e-14

TEigenvalues = EigenDecomp | Sequence[float] | np.ndarray


def _eigenvalues(eigs: TEigenvalues) -> np.ndarray:
    if isinstance(eigs, EigenDecomp):
        return eigs.eigenvalues
    return np.sort(np.asarray(eigs, dtype=float))[::-1]


def sample_gram_eigs(y: np.ndarray) -> EigenDecomp:
    y = np.asarray(y)
    if y.ndim != 2 or not y.size:
        raise InvalidObservationError(message="Observation must be a non-empty matrix", details={"shape": y.shape})
    if not np.all(np.isfinite(y)):
        raise InvalidObservationError(message="Observation has non-finite entries")
    n, t = y.shape
    if n > t:
        LOGGER.warning("More sensors than samples, the Gram matrix has zero modes", extra=dict(x_n=n, x_t=t))
    eigenvalues, eigenvectors = scipy.linalg.eigh(y @ y.conj().T)
    return EigenDecomp(eigenvalues=eigenvalues[::-1].copy(), eigenvectors=eigenvectors[:, ::-1].copy())


def detect_sources(eigs: TEigenvalues, cfg: DetectionConfig) -> DetectionResult:
    """
    Largest `k` in `0..L` such that `lambda_k / lambda_{k+1} > 1 + epsilon`,
    with `lambda_0 = inf` making `k = 0` always admissible.
    """
    values = _eigenvalues(eigs)
    max_sources = cfg.max_sources
    if values.size < max_sources + 1:
        raise DomainError(
            message="Need at least L + 1 eigenvalues", details={"n": values.size, "max_sources": max_sources}
        )
    head = values[: max_sources + 1]
    floor = EIGENVALUE_FLOOR_RTOL * head[0]
    clamped = head <= floor
    if np.any(clamped):
        LOGGER.warning(
            "Clamped vanishing eigenvalues, their ratios are infinite",
            extra=dict(x_clamped=int(clamped.sum()), x_floor=float(floor)),
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(clamped[1:], np.inf, head[:-1] / np.where(clamped[1:], 1.0, head[1:]))

    k_hat = int(k_hats_for_thresholds(ratios, [cfg.epsilon])[0])
    return DetectionResult(k_hat=k_hat, ratios=tuple(float(ratio) for ratio in ratios))


def k_hats_for_thresholds(ratios: Sequence[float] | np.ndarray, epsilons: Sequence[float] | np.ndarray) -> np.ndarray:
    """
    Detector output for each gap threshold, from precomputed ratios.

    >>> k_hats_for_thresholds([9.0, 1.1, 4.0], [0.5, 5.0, 10.0]).tolist()
    [3, 1, 0]
    """
    ratios_arr = np.asarray(ratios, dtype=float)
    passing = ratios_arr[None, :] > 1.0 + np.asarray(epsilons, dtype=float)[:, None]
    last = ratios_arr.size - np.argmax(passing[:, ::-1], axis=1)
    return np.where(passing.any(axis=1), last, 0)


def _retained(eigs: TEigenvalues, k_hat: int, x: float) -> np.ndarray:
    values = _eigenvalues(eigs)
    if not 0 <= k_hat < values.size:
        raise DomainError(message="k_hat out of range", details={"k_hat": k_hat, "n": values.size})
    tail = values[k_hat:]
    if np.any(tail == x):
        raise PoleError(details={"x": x})
    return tail


def empirical_m_hat(eigs: TEigenvalues, k_hat: int, x: float) -> float:
    """`(N - k_hat)^-1 sum over n > k_hat of 1 / (lambda_n - x)`"""
    return float(np.mean(1.0 / (_retained(eigs, k_hat, x) - x)))


def _m_hat_and_prime(eigs: TEigenvalues, k_hat: int, x: float) -> tuple[float, float]:
    inv = 1.0 / (_retained(eigs, k_hat, x) - x)
    return float(np.mean(inv)), float(np.mean(inv**2))


def empirical_g_hat(eigs: TEigenvalues, k_hat: int, c_t: float, x: float) -> float:
    m_hat = empirical_m_hat(eigs, k_hat, x)
    return m_hat * (x * c_t * m_hat + c_t - 1.0)


def empirical_g_hat_prime(eigs: TEigenvalues, k_hat: int, c_t: float, x: float) -> float:
    m_hat, m_hat_prime = _m_hat_and_prime(eigs, k_hat, x)
    return m_hat_prime * (x * c_t * m_hat + c_t - 1.0) + m_hat * (c_t * m_hat + x * c_t * m_hat_prime)


def subspace_weight(eigs: TEigenvalues, k_hat: int, c_t: float, index: int) -> float:
    """`g_hat'(lambda_i) / (m_hat(lambda_i) g_hat(lambda_i))`"""
    x = float(_eigenvalues(eigs)[index])
    m_hat, m_hat_prime = _m_hat_and_prime(eigs, k_hat, x)
    g_hat = m_hat * (x * c_t * m_hat + c_t - 1.0)
    g_hat_prime = m_hat_prime * (x * c_t * m_hat + c_t - 1.0) + m_hat * (c_t * m_hat + x * c_t * m_hat_prime)
    return g_hat_prime / (m_hat * g_hat)


def estimate_powers(eigs: TEigenvalues, k_hat: int, c_t: float) -> PowerEstimates:
    """`p_hat_i = 1 / g_hat(lambda_i)` for the `k_hat` largest eigenvalues"""
    if k_hat < 1:
        raise DomainError(message="Power estimation needs at least one detected source", details={"k_hat": k_hat})
    values = _eigenvalues(eigs)
    g_hats = [empirical_g_hat(values, k_hat, c_t, float(values[idx])) for idx in range(k_hat)]
    reliable = tuple(g_hat > 0 for g_hat in g_hats)
    if not all(reliable):
        LOGGER.warning(
            "Power estimate unreliable, eigenvalue too close to the bulk",
            extra=dict(x_g_hats=g_hats, x_k_hat=k_hat),
        )
    return PowerEstimates(powers=tuple(1.0 / g_hat for g_hat in g_hats), reliable=reliable)


def bilinear_form_estimate(
    eigs: EigenDecomp,
    index: int,
    group: Sequence[int] | None,
    a_vec: np.ndarray,
    b_vec: np.ndarray,
    c_t: float,
    *,
    k_hat: int,
) -> complex:
    """
    Consistent estimate of `a^H Pi b`, `Pi` being the projector on the
    signal eigenspace that the eigenvalue `index` belongs to.
    Groups of equal-power eigenvalues default to singletons.
    `k_hat` is the detected source count, the `k_hat` largest eigenvalues stay out of `m_hat`.
    """
    group = tuple(group) if group is not None else (index,)
    if index not in group:
        raise DomainError(message="Eigenvalue index must belong to its group", details={"index": index, "group": group})
    if not max(group) < k_hat:
        raise DomainError(message="Group must lie within the detected spikes", details={"group": group, "k_hat": k_hat})
    weight = subspace_weight(eigs, k_hat, c_t, index)
    vecs = eigs.eigenvectors[:, list(group)]
    form = (np.conj(a_vec) @ vecs) @ (vecs.conj().T @ b_vec)
    return complex(weight * form)


def group_projector(eigs: EigenDecomp, group: Sequence[int]) -> np.ndarray:
    """Sample projector `Pi_hat` on the eigenvectors of a group"""
    return eigs.projector(list(group))


def _find_peaks(
    grid: np.ndarray, values: np.ndarray, window: tuple[float, float] | None
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    indices, _ = scipy.signal.find_peaks(values)
    peaks: list[tuple[float, float]] = []
    for idx in indices:
        offset, height = parabolic_peak(values[idx - 1], values[idx], values[idx + 1])
        step = grid[idx + 1] - grid[idx] if offset >= 0 else grid[idx] - grid[idx - 1]
        theta = float(grid[idx] + offset * step)
        if window is not None and not window[0] <= theta <= window[1]:
            continue
        peaks.append((height, theta))
    peaks.sort(reverse=True)
    return tuple(theta for _, theta in peaks), tuple(height for height, _ in peaks)


def _scan(
    eigs: EigenDecomp,
    k_hat: int,
    weights: np.ndarray,
    grid: Sequence[float] | np.ndarray,
    window: tuple[float, float] | None,
) -> LocalizationScan:
    grid_arr = np.asarray(grid, dtype=float)
    if not grid_arr.size:
        raise DomainError(message="Empty localization grid")
    if np.any(np.abs(grid_arr) > np.pi / 2 + 1e-12) or np.any(np.diff(grid_arr) <= 0):
        raise DomainError(message="Grid must increase strictly within [-pi/2, pi/2]")
    if k_hat < 1:
        raise DomainError(message="Localization needs at least one detected source", details={"k_hat": k_hat})
    steering = steering_matrix(eigs.n, grid_arr)
    proj = eigs.eigenvectors[:, :k_hat].conj().T @ steering
    gamma = weights @ (np.abs(proj) ** 2)
    peaks, heights = _find_peaks(grid_arr, gamma, window)
    return LocalizationScan(theta_grid=grid_arr, gamma_values=gamma, peaks=peaks, peak_heights=heights, k=k_hat)


def music_scan(
    eigs: EigenDecomp,
    k_hat: int,
    c_t: float,
    grid: Sequence[float] | np.ndarray,
    *,
    window: tuple[float, float] | None = None,
) -> LocalizationScan:
    """Weighted (noise-aware) MUSIC localization function, angles in radians"""
    weights = np.array([subspace_weight(eigs, k_hat, c_t, idx) for idx in range(k_hat)])
    return _scan(eigs, k_hat, weights, grid, window)


def traditional_music_scan(
    eigs: EigenDecomp,
    k_hat: int,
    grid: Sequence[float] | np.ndarray,
    *,
    window: tuple[float, float] | None = None,
    weights: np.ndarray | None = None,
) -> LocalizationScan:
    """Unweighted signal-subspace localization function"""
    return _scan(eigs, k_hat, np.ones(k_hat) if weights is None else np.asarray(weights), grid, window)


def true_localization(steering: np.ndarray, grid: Sequence[float] | np.ndarray) -> np.ndarray:
    """`h(theta)^H Pi h(theta)` for the projector on the span of the true steering vectors"""
    basis = scipy.linalg.orth(steering)
    return np.sum(np.abs(basis.conj().T @ steering_matrix(steering.shape[0], grid)) ** 2, axis=0)


def whiten(y: np.ndarray, cov: ToeplitzCovariance | np.ndarray) -> np.ndarray:
    """`Y R^{-1/2}` with the Hermitian inverse square root"""
    if isinstance(cov, ToeplitzCovariance):
        return y @ cov.inv_sqrt()
    eigenvalues, eigenvectors = scipy.linalg.eigh(np.asarray(cov))
    if eigenvalues.min() <= 1e-12 * eigenvalues.max():
        raise SingularCovarianceError(details={"min_eigenvalue": float(eigenvalues.min())})
    return y @ ((eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.conj().T)


def _information_criterion(eigs: TEigenvalues, n: int, t: int, max_sources: int, *, mdl: bool) -> int:
    values = _eigenvalues(eigs)[:n]
    if not max_sources < n:
        raise DomainError(message="Need L < N", details={"max_sources": max_sources, "n": n})
    values = np.clip(values, EIGENVALUE_FLOOR_RTOL * values[0], None)
    scores = []
    for k in range(max_sources + 1):
        tail = values[k:]
        log_ratio = np.log(scipy.stats.gmean(tail) / np.mean(tail))
        penalty = 0.5 * k * (2 * n - k) * np.log(t) if mdl else k * (2 * n - k)
        scores.append(-t * (n - k) * log_ratio + penalty)
    return int(np.argmin(scores))


def mdl_estimate(eigs: TEigenvalues, n: int, t: int, max_sources: int) -> int:
    return _information_criterion(eigs, n, t, max_sources, mdl=True)


def aic_estimate(eigs: TEigenvalues, n: int, t: int, max_sources: int) -> int:
    return _information_criterion(eigs, n, t, max_sources, mdl=False)
