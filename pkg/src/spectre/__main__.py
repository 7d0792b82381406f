import logging
from collections.abc import Callable
from pathlib import Path
from typing import Annotated, Any, NamedTuple

import numpy as np
import typer

from . import experiments
from .matrix_io import MatrixFormatError, read_matrix, write_report, write_scan
from .rmt.equilibrium import detectability_threshold
from .rmt.fluctuations import snr_gap
from .rmt.inference import detect_sources, estimate_powers, music_scan, sample_gram_eigs
from .rmt.montecarlo import equilibrium_context
from .rmt.rmt_models import DivergentIntegralError, EigenDecomp, InvalidObservationError
from .run_config import Command, ConfigError, RunConfig, parse_config, parse_override_args
from .runlib import init_all
from .settings import Settings
from .stats import ExperimentReport

LOGGER = logging.getLogger(__name__)

EXIT_RUNTIME_ERROR = 1
EXIT_INPUT_ERROR = 2
# Extra `--section.key value` pairs reach the command through `ctx.args`.
OVERRIDE_CONTEXT = {"allow_extra_args": True, "ignore_unknown_options": True}

ConfigOpt = Annotated[Path | None, typer.Option("--config", help="YAML run configuration")]
SeedOpt = Annotated[int | None, typer.Option("--seed", help="64-bit master seed")]
TrialsOpt = Annotated[int | None, typer.Option("--trials", help="Monte Carlo trials per sweep point")]
OutOpt = Annotated[Path | None, typer.Option("--out", help="Output directory")]


class Observation(NamedTuple):
    eigs: EigenDecomp
    c_t: float


def _fmt(value: float) -> str:
    return format(float(value), ".10g")


def _out_dir(cfg: RunConfig, settings: Settings) -> Path:
    return cfg.io.output or settings.opts.default_out_dir


def _read_observation(cfg: RunConfig) -> Observation:
    if cfg.io.input is None:
        raise ConfigError(f"Command {cfg.command.value!r} needs `io.input`")
    y = read_matrix(cfg.io.input)
    return Observation(eigs=sample_gram_eigs(y), c_t=y.shape[0] / y.shape[1])


def _scan_grid_rad(cfg: RunConfig) -> np.ndarray:
    count = int(np.floor(180.0 / cfg.grid_step_deg + 1e-9)) + 1
    return np.deg2rad(np.clip(-90.0 + cfg.grid_step_deg * np.arange(count), -90.0, 90.0))


def _window_rad(cfg: RunConfig) -> tuple[float, float] | None:
    if cfg.window_deg is None:
        return None
    return (float(np.deg2rad(cfg.window_deg[0])), float(np.deg2rad(cfg.window_deg[1])))


def _echo_values(name: str, values: tuple[float, ...] | list[float]) -> None:
    typer.echo(f"{name} = {', '.join(_fmt(value) for value in values)}")


def run_edge(cfg: RunConfig, settings: Settings) -> None:
    c = cfg.scenario.c if cfg.scenario.c is not None else cfg.scenario.n / cfg.scenario.samples
    ctx = equilibrium_context(cfg.noise, c)
    typer.echo(f"c = {_fmt(c)}")
    typer.echo(f"b = {_fmt(ctx.edge.b)}")
    typer.echo(f"m_b = {_fmt(ctx.edge.m_b)}")
    typer.echo(f"p_lim = {_fmt(detectability_threshold(ctx))}")
    try:
        typer.echo(f"snr_gap_db = {_fmt(snr_gap(cfg.noise))}")
    except DivergentIntegralError:
        LOGGER.warning("Oracle SNR gap is unbounded for this noise", extra=dict(x_noise=cfg.noise.model_dump()))


def _detect(cfg: RunConfig, obs: Observation) -> int:
    detection = detect_sources(obs.eigs, cfg.scenario.detection)
    typer.echo(f"k_hat = {detection.k_hat}")
    _echo_values("ratios", detection.ratios)
    return detection.k_hat


def _echo_powers(obs: Observation, k_hat: int) -> None:
    estimates = estimate_powers(obs.eigs, k_hat, obs.c_t)
    _echo_values("p_hat", estimates.powers)
    if not estimates.all_reliable:
        typer.echo(f"unreliable = {', '.join(str(idx) for idx, ok in enumerate(estimates.reliable) if not ok)}")


def run_detect(cfg: RunConfig, settings: Settings) -> None:
    obs = _read_observation(cfg)
    k_hat = _detect(cfg, obs)
    if k_hat < 1:
        return
    _echo_powers(obs, k_hat)
    scan = music_scan(obs.eigs, k_hat, obs.c_t, _scan_grid_rad(cfg), window=_window_rad(cfg))
    _echo_values("theta_hat_deg", [float(np.rad2deg(theta)) for theta in scan.estimates])


def run_powers(cfg: RunConfig, settings: Settings) -> None:
    obs = _read_observation(cfg)
    k_hat = _detect(cfg, obs)
    if k_hat >= 1:
        _echo_powers(obs, k_hat)


def run_music(cfg: RunConfig, settings: Settings) -> None:
    obs = _read_observation(cfg)
    k_hat = _detect(cfg, obs)
    if k_hat < 1:
        return
    scan = music_scan(obs.eigs, k_hat, obs.c_t, _scan_grid_rad(cfg), window=_window_rad(cfg))
    path = _out_dir(cfg, settings) / "music_scan.csv"
    write_scan(path, np.rad2deg(scan.theta_grid), scan.gamma_values)
    _echo_values("theta_hat_deg", [float(np.rad2deg(theta)) for theta in scan.estimates])
    _echo_values("peaks_deg", [float(np.rad2deg(theta)) for theta in scan.peaks])
    typer.echo(f"scan = {path}")


class FigureSpec(NamedTuple):
    report_name: str
    sweep_name: str
    run: Callable[..., ExperimentReport]
    extra_kwargs: Callable[[RunConfig], dict[str, Any]] = lambda cfg: {}


FIGURES: dict[Command, FigureSpec] = {
    Command.FIG_DETECTION: FigureSpec("detection", "n", experiments.run_detection_experiment),
    Command.FIG_ROC: FigureSpec("roc", "epsilon", experiments.run_roc_experiment),
    Command.FIG_POWER: FigureSpec("power", "snr_db", experiments.run_power_nmse_experiment),
    Command.FIG_MUSIC_MSE: FigureSpec("music_mse", "snr_db", experiments.run_music_mse_experiment),
    Command.FIG_RESOLUTION: FigureSpec(
        "resolution",
        "snr_db",
        experiments.run_resolution_experiment,
        lambda cfg: {"step_deg": cfg.grid_step_deg},
    ),
    Command.FIG_FLUCT: FigureSpec("fluctuation", "snr_db", experiments.run_fluctuation_experiment),
}


def run_figure(cfg: RunConfig, settings: Settings) -> None:
    """Completed sweep points are flushed with the `.partial` suffix when a later point fails"""
    figure = FIGURES[cfg.command]
    values = cfg.sweep.values if cfg.sweep.values is not None else experiments.DEFAULT_SWEEPS[figure.report_name]
    trials = cfg.trials or settings.opts.default_trials
    runner = experiments.ExperimentRunner(seed=cfg.seed, trials=trials, settings=settings)
    report = ExperimentReport(name=figure.report_name, sweep_name=figure.sweep_name)
    out_dir = _out_dir(cfg, settings)
    try:
        figure.run(cfg.scenario_obj(), values, runner=runner, report=report, **figure.extra_kwargs(cfg))
    except Exception:
        write_report(report, out_dir, partial=True)
        raise
    for path in write_report(report, out_dir):
        typer.echo(str(path))


HANDLERS: dict[Command, Callable[[RunConfig, Settings], None]] = {
    Command.EDGE: run_edge,
    Command.DETECT: run_detect,
    Command.POWERS: run_powers,
    Command.MUSIC: run_music,
    **{command: run_figure for command in FIGURES},
}


def execute(
    command: Command,
    ctx: typer.Context,
    *,
    config: Path | None,
    seed: int | None,
    trials: int | None,
    out: Path | None,
) -> None:
    """Exit codes: 0 on success, 2 on a configuration or input error, 1 on any other failure"""
    settings = init_all(Settings())
    try:
        overrides = parse_override_args(ctx.args)
        overrides.extend(
            (key, str(value))
            for key, value in (("seed", seed), ("trials", trials), ("io.output", out))
            if value is not None
        )
        cfg = parse_config(config, overrides, command=command)
        HANDLERS[command](cfg, settings)
    except (ConfigError, MatrixFormatError, InvalidObservationError) as exc:
        typer.echo(f"Error: {exc}", err=True)
        raise typer.Exit(code=EXIT_INPUT_ERROR) from exc
    except Exception as exc:
        LOGGER.exception("Command %s failed", command.value, extra=dict(x_command=command.value))
        typer.echo(f"Failed: {exc}", err=True)
        raise typer.Exit(code=EXIT_RUNTIME_ERROR) from exc


CLI_APP = typer.Typer(no_args_is_help=True)


def _register(command: Command, help_text: str) -> None:
    def cli_fn(
        ctx: typer.Context,
        config: ConfigOpt = None,
        seed: SeedOpt = None,
        trials: TrialsOpt = None,
        out: OutOpt = None,
    ) -> None:
        execute(command, ctx, config=config, seed=seed, trials=trials, out=out)

    cli_fn.__doc__ = help_text
    CLI_APP.command(command.value, context_settings=OVERRIDE_CONTEXT)(cli_fn)


_register(Command.EDGE, "Print the bulk edge `b`, `m_b`, the detectability threshold and the oracle SNR gap.")
_register(Command.DETECT, "Count the sources in `io.input`, then estimate their powers and angles.")
_register(Command.POWERS, "Count the sources in `io.input` and estimate their powers.")
_register(Command.MUSIC, "Noise-aware MUSIC scan of `io.input`, written to `<out>/music_scan.csv`.")
_register(Command.FIG_DETECTION, "Detection rates versus `N`: proposed, MDL, AIC.")
_register(Command.FIG_ROC, "Detector (FAR, CDR) per gap threshold, proposed and oracle.")
_register(Command.FIG_POWER, "Power estimate NMSE versus SNR, with the fluctuation theory.")
_register(Command.FIG_MUSIC_MSE, "Localization function MSE at the true angle versus SNR.")
_register(Command.FIG_RESOLUTION, "Probability of resolving two close sources versus SNR.")
_register(Command.FIG_FLUCT, "Eigenvalue and power fluctuations against the predicted variances.")


def main() -> None:
    CLI_APP()


if __name__ == "__main__":
    main()
