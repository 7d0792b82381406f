"""
Monte Carlo experiments comparing the noise-aware estimators with the
classical baselines and with oracle whitening.
Each experiment appends its rows to an `ExperimentReport` one sweep point at a time,
so that a failure leaves the completed points in the report.
"""

import dataclasses
import logging
import time
from collections.abc import Callable, Sequence
from typing import Any, NamedTuple, TypeVar

import numpy as np
import scipy.stats

from .rmt.equilibrium import spike_location
from .rmt.fluctuations import eigenvalue_variance, fluct_params, power_variance, predicted_nmse
from .rmt.inference import (
    aic_estimate,
    detect_sources,
    estimate_powers,
    k_hats_for_thresholds,
    mdl_estimate,
    music_scan,
    sample_gram_eigs,
    traditional_music_scan,
    true_localization,
    whiten,
)
from .rmt.montecarlo import Scenario, analyze_observation, observe, run_trials, synth_observation
from .rmt.rmt_models import EigenDecomp, SubcriticalPowerError
from .settings import Settings
from .stats import ExperimentReport, ReportRow, TrialStats

LOGGER = logging.getLogger(__name__)

TResult = TypeVar("TResult")

DEFAULT_SWEEPS: dict[str, tuple[float, ...]] = {
    "detection": (10, 20, 30, 40, 60, 80, 100),
    "roc": tuple(float(val) for val in np.round(np.linspace(0.0, 3.0, 61), 10)),
    "power": (0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20),
    "music_mse": (0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20),
    "resolution": (8, 10, 12, 14, 16, 18, 20, 22, 24),
    "fluctuation": (),
}
RESOLUTION_WINDOW_DEG = (5.0, 17.0)

DETECTION_DEFINITIONS = {
    "cdr": "P(k_hat == K), signal-present trials",
    "cdr_ge": "P(k_hat >= K), signal-present trials",
    "far": "P(k_hat >= 1), companion noise-only trials",
    "far_gt": "P(k_hat > K), signal-present trials",
}


@dataclasses.dataclass()
class ExperimentRunner:
    seed: int = 0
    trials: int = 10_000
    settings: Settings = dataclasses.field(default_factory=Settings)
    logger: logging.Logger = LOGGER

    @property
    def threads(self) -> int:
        return self.settings.opts.threads

    def run_point(
        self, experiment: str, sweep_index: int, sweep: float, trial_fn: Callable[[np.random.Generator], TResult]
    ) -> list[TResult]:
        start_time = time.monotonic()
        results = run_trials(
            trial_fn, seed=self.seed, trials=self.trials, sweep_index=sweep_index, threads=self.threads
        )
        self.logger.info(
            "Experiment %s: sweep point %r done",
            experiment,
            sweep,
            extra=dict(
                x_experiment=experiment,
                x_sweep=sweep,
                x_trials=self.trials,
                x_threads=self.threads,
                x_time_taken=time.monotonic() - start_time,
            ),
        )
        return results


def _with_snr(sc: Scenario, snr_db: float) -> Scenario:
    return sc.replace(amplitudes=tuple(10.0 ** (snr_db / 20.0) for _ in sc.thetas_deg))


def _oracle_eigs(y: np.ndarray, sc: Scenario) -> EigenDecomp:
    return sample_gram_eigs(whiten(y, sc.covariance))


def _add_detection_counts(stats: TrialStats, method: str, sweep: float, k_true: int, k_hat: int, k_noise: int) -> None:
    stats.add_proportion(f"{method}_cdr", sweep, k_hat == k_true)
    stats.add_proportion(f"{method}_cdr_ge", sweep, k_hat >= k_true)
    stats.add_proportion(f"{method}_far", sweep, k_noise >= 1)
    stats.add_proportion(f"{method}_far_gt", sweep, k_hat > k_true)


class _CountEstimates(NamedTuple):
    proposed: int
    mdl: int
    aic: int


def _count_sources(eigs: EigenDecomp, sc: Scenario) -> _CountEstimates:
    max_sources = sc.detection.max_sources
    return _CountEstimates(
        proposed=detect_sources(eigs, sc.detection).k_hat,
        mdl=mdl_estimate(eigs, sc.n, sc.t, max_sources),
        aic=aic_estimate(eigs, sc.n, sc.t, max_sources),
    )


def run_detection_experiment(
    base: Scenario,
    n_values: Sequence[float],
    *,
    runner: ExperimentRunner,
    report: ExperimentReport | None = None,
) -> ExperimentReport:
    """Source-count rates versus the array size `N`, at fixed `c_T`"""
    if report is None:
        report = ExperimentReport(name="detection", sweep_name="n")
    report.definitions.update(DETECTION_DEFINITIONS)
    for sweep_index, n_value in enumerate(n_values):
        n = int(n_value)
        sc = base.replace(n=n, t=max(1, round(n / base.c_t)))
        noise_sc = sc.noise_only()

        def trial(rng: np.random.Generator, sc: Scenario = sc, noise_sc: Scenario = noise_sc) -> Any:
            return _count_sources(observe(sc, rng), sc), _count_sources(observe(noise_sc, rng), noise_sc)

        stats = TrialStats()
        for signal_counts, noise_counts in runner.run_point(report.name, sweep_index, n, trial):
            for method in _CountEstimates._fields:
                _add_detection_counts(
                    stats, method, n, sc.k, getattr(signal_counts, method), getattr(noise_counts, method)
                )
        report.add_rows(stats.rows_by_curve())
    return report


def run_roc_experiment(
    sc: Scenario,
    epsilons: Sequence[float],
    *,
    runner: ExperimentRunner,
    report: ExperimentReport | None = None,
) -> ExperimentReport:
    """`(FAR, CDR)` per gap threshold; every threshold reuses the same trials"""
    if report is None:
        report = ExperimentReport(name="roc", sweep_name="epsilon")
    report.definitions.update(DETECTION_DEFINITIONS)
    eps = np.asarray(epsilons, dtype=float)
    noise_sc = sc.noise_only()

    def ratios(eigs: EigenDecomp) -> np.ndarray:
        return np.array(detect_sources(eigs, sc.detection).ratios)

    def trial(rng: np.random.Generator) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        y = synth_observation(sc, rng)
        y_noise = synth_observation(noise_sc, rng)
        return {
            "proposed": (ratios(sample_gram_eigs(y)), ratios(sample_gram_eigs(y_noise))),
            "oracle": (ratios(_oracle_eigs(y, sc)), ratios(_oracle_eigs(y_noise, sc))),
        }

    stats = TrialStats()
    for result in runner.run_point(report.name, 0, float("nan"), trial):
        for method, (signal_ratios, noise_ratios) in result.items():
            k_signal = k_hats_for_thresholds(signal_ratios, eps)
            k_noise = k_hats_for_thresholds(noise_ratios, eps)
            for epsilon, k_hat, k_hat_noise in zip(eps, k_signal, k_noise, strict=True):
                _add_detection_counts(stats, method, float(epsilon), sc.k, int(k_hat), int(k_hat_noise))
    report.add_rows(stats.rows_by_curve())
    return report


def _theory_nmse(sc: Scenario, kappa: float) -> float | None:
    """Prediction on the eigenvalue measure of `R_T`, not on its `T -> inf` limit"""
    try:
        return predicted_nmse(fluct_params(sc.horizon_context(), sc.powers[0], kappa), sc.t)
    except SubcriticalPowerError:
        return None


def run_power_nmse_experiment(
    base: Scenario,
    snr_values: Sequence[float],
    *,
    runner: ExperimentRunner,
    report: ExperimentReport | None = None,
) -> ExperimentReport:
    """NMSE of the single-source power estimate under forced detection"""
    if report is None:
        report = ExperimentReport(name="power", sweep_name="snr_db")
    report.definitions.update(
        proposed_nmse="E[(p_hat - p)^2 / p^2], noise-aware estimator",
        oracle_nmse="same on whitened data, estimate divided by T^-1 tr R_T^-1",
    )
    for sweep_index, snr in enumerate(snr_values):
        sc = _with_snr(base, snr)
        power = sc.powers[0]
        tau = sc.covariance.inverse_trace_ratio

        def trial(rng: np.random.Generator, sc: Scenario = sc, power: float = power, tau: float = tau) -> Any:
            y = synth_observation(sc, rng)
            proposed = analyze_observation(sample_gram_eigs(y), sc, forced_k=1).p_hats[0]
            oracle = analyze_observation(_oracle_eigs(y, sc), sc, forced_k=1, power_scale=tau).p_hats[0]
            return ((proposed - power) / power) ** 2, ((oracle - power) / power) ** 2

        stats = TrialStats()
        for proposed_err, oracle_err in runner.run_point(report.name, sweep_index, snr, trial):
            stats.add_value("proposed_nmse", snr, proposed_err)
            stats.add_value("oracle_nmse", snr, oracle_err)
        stats.set_theory("proposed_nmse", snr, _theory_nmse(sc, sc.constellation.kappa))
        report.add_rows(stats.rows_by_curve())
    return report


def run_music_mse_experiment(
    base: Scenario,
    snr_values: Sequence[float],
    *,
    runner: ExperimentRunner,
    report: ExperimentReport | None = None,
) -> ExperimentReport:
    """MSE of the localization function at the true angle, single source, forced detection"""
    if report is None:
        report = ExperimentReport(name="music_mse", sweep_name="snr_db")
    report.definitions.update(
        proposed_mse="E[(gamma_hat(theta_1) - gamma(theta_1))^2], weighted localization",
        traditional_mse="same, unweighted localization",
        oracle_mse="weighted localization on whitened data",
    )
    for sweep_index, snr in enumerate(snr_values):
        sc = _with_snr(base, snr)
        target = float(true_localization(sc.steering, sc.thetas_rad[:1])[0])

        def trial(rng: np.random.Generator, sc: Scenario = sc) -> Any:
            y = synth_observation(sc, rng)
            eigs = sample_gram_eigs(y)
            outcomes = (
                analyze_observation(eigs, sc, forced_k=1, with_powers=False),
                analyze_observation(eigs, sc, forced_k=1, weighted=False, with_powers=False),
                analyze_observation(_oracle_eigs(y, sc), sc, forced_k=1, with_powers=False),
            )
            return tuple(outcome.gamma_at_truth[0] for outcome in outcomes)

        stats = TrialStats()
        for proposed, traditional, oracle in runner.run_point(report.name, sweep_index, snr, trial):
            stats.add_value("proposed_mse", snr, (proposed - target) ** 2)
            stats.add_value("traditional_mse", snr, (traditional - target) ** 2)
            stats.add_value("oracle_mse", snr, (oracle - target) ** 2)
        report.add_rows(stats.rows_by_curve())
    return report


def resolution_grid(step_deg: float, window_deg: tuple[float, float] = RESOLUTION_WINDOW_DEG) -> np.ndarray:
    """Window grid padded by one step on each side, so that peaks at the window borders are found"""
    count = int(round((window_deg[1] - window_deg[0]) / step_deg)) + 3
    return window_deg[0] - step_deg + step_deg * np.arange(count)


def run_resolution_experiment(
    base: Scenario,
    snr_values: Sequence[float],
    *,
    runner: ExperimentRunner,
    step_deg: float = 0.05,
    report: ExperimentReport | None = None,
) -> ExperimentReport:
    """
    Probability of exactly two dominant localization peaks within the window, two equal-power sources.
    Peaks below half the highest in-window peak are sidelobes and do not count.
    """
    if report is None:
        report = ExperimentReport(name="resolution", sweep_name="snr_db")
    window_s = f"{RESOLUTION_WINDOW_DEG} deg"
    report.definitions.update(
        {
            f"{method}_resolution": f"P(exactly two maxima above half the top one in {window_s}), {method}"
            for method in ("proposed", "traditional", "oracle")
        }
    )
    grid = np.deg2rad(resolution_grid(step_deg))
    window = (np.deg2rad(RESOLUTION_WINDOW_DEG[0]), np.deg2rad(RESOLUTION_WINDOW_DEG[1]))
    k_forced = base.k
    for sweep_index, snr in enumerate(snr_values):
        sc = _with_snr(base, snr)

        def trial(rng: np.random.Generator, sc: Scenario = sc) -> Any:
            y = synth_observation(sc, rng)
            eigs = sample_gram_eigs(y)
            scans = (
                music_scan(eigs, k_forced, sc.c_t, grid, window=window),
                traditional_music_scan(eigs, k_forced, grid, window=window),
                music_scan(_oracle_eigs(y, sc), k_forced, sc.c_t, grid, window=window),
            )
            return tuple(len(scan.dominant_peaks()) == 2 for scan in scans)

        stats = TrialStats()
        for proposed, traditional, oracle in runner.run_point(report.name, sweep_index, snr, trial):
            stats.add_proportion("proposed_resolution", snr, proposed)
            stats.add_proportion("traditional_resolution", snr, traditional)
            stats.add_proportion("oracle_resolution", snr, oracle)
        report.add_rows(stats.rows_by_curve())
    return report


def run_fluctuation_experiment(
    base: Scenario,
    snr_values: Sequence[float] = (),
    *,
    runner: ExperimentRunner,
    report: ExperimentReport | None = None,
) -> ExperimentReport:
    """
    Empirical spread of `sqrt(T) (lambda_hat_1 - rho_T)` and `sqrt(T) (p_hat - p)`
    against the predicted variances, with a normality statistic.
    An empty sweep runs the base scenario as is.
    """
    if report is None:
        report = ExperimentReport(name="fluctuation", sweep_name="snr_db")
    report.definitions.update(
        eig_variance="Var[sqrt(T) (lambda_hat_1 - rho_T)], theory psi / (p g'(rho))^2",
        power_variance="Var[sqrt(T) (p_hat - p)], theory p^2 psi",
        eig_ks="Kolmogorov-Smirnov distance of standardized eigenvalue fluctuations to N(0, 1)",
        power_ks="Kolmogorov-Smirnov distance of standardized power fluctuations to N(0, 1)",
    )
    scenarios = [_with_snr(base, snr) for snr in snr_values] or [base]
    kappa = base.constellation.kappa
    for sweep_index, sc in enumerate(scenarios):
        power = sc.powers[0]
        sweep = float(10.0 * np.log10(power))
        ctx = sc.horizon_context()
        rho_t = spike_location(ctx, power)
        params = fluct_params(ctx, power, kappa)
        scale = np.sqrt(sc.t)

        def trial(rng: np.random.Generator, sc: Scenario = sc, rho_t: float = rho_t, power: float = power) -> Any:
            eigs = observe(sc, rng)
            p_hat = estimate_powers(eigs, 1, sc.c_t).powers[0]
            return scale * (eigs.eigenvalues[0] - rho_t), scale * (p_hat - power)

        samples = np.array(runner.run_point(report.name, sweep_index, sweep, trial))
        stats = TrialStats()
        for eig_dev, power_dev in samples:
            stats.add_variance_sample("eig_variance", sweep, eig_dev)
            stats.add_variance_sample("power_variance", sweep, power_dev)
        stats.set_theory("eig_variance", sweep, eigenvalue_variance(params))
        stats.set_theory("power_variance", sweep, power_variance(params))
        report.add_rows(stats.rows_by_curve())

        for column, curve in enumerate(("eig_ks", "power_ks")):
            values = samples[:, column]
            standardized = (values - values.mean()) / values.std(ddof=1)
            ks = scipy.stats.kstest(standardized, "norm")
            report.add_rows(
                {curve: [ReportRow(sweep, float(ks.statistic), float(ks.statistic), float(ks.statistic), len(values))]}
            )
        report.extras.setdefault("params", {})[str(sweep)] = dataclasses.asdict(params) | {
            "psi": params.psi,
            "psi_breve": params.psi_breve,
            "rho_t": rho_t,
        }
    return report
