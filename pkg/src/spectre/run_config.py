"""Run configuration: a YAML file plus `--section.key value` overrides"""

import enum
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Self

import pydantic
import yaml

from .rmt.montecarlo import Scenario
from .rmt.rmt_models import ArmaSpec, Constellation, DetectionConfig, SpectreError

LOGGER = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


class ConfigError(Exception):
    """Unusable run configuration"""


class Command(enum.StrEnum):
    EDGE = "edge"
    DETECT = "detect"
    POWERS = "powers"
    MUSIC = "music"
    FIG_DETECTION = "fig-detection"
    FIG_ROC = "fig-roc"
    FIG_POWER = "fig-power"
    FIG_MUSIC_MSE = "fig-music-mse"
    FIG_RESOLUTION = "fig-resolution"
    FIG_FLUCT = "fig-fluct"


# Scenario keys a command starts from when neither the file nor an override sets them.
COMMAND_SCENARIO_DEFAULTS: dict[str, dict[str, Any]] = {
    Command.FIG_ROC.value: {"snr_db": 2.0},
}


def _as_tuple(value: Any) -> Any:
    if isinstance(value, (int, float, str)):
        return (value,)
    return value


class IOConfig(pydantic.BaseModel, frozen=True, extra="forbid"):
    input: Path | None = None
    output: Path | None = None


class ScenarioConfig(pydantic.BaseModel, frozen=True, extra="forbid"):
    n: int = pydantic.Field(default=20, ge=2)
    # Either `t` or `c` fixes the sample count.
    t: int | None = pydantic.Field(default=None, ge=1)
    c: float | None = pydantic.Field(default=None, gt=0)
    thetas_deg: tuple[float, ...] = (10.0,)
    # One value per source, or one value for all of them.
    snr_db: tuple[float, ...] = (10.0,)
    constellation: Constellation = Constellation.QPSK
    detection: DetectionConfig = DetectionConfig()

    @pydantic.field_validator("thetas_deg", "snr_db", mode="before")
    @classmethod
    def _wrap_scalars(cls, value: Any) -> Any:
        return _as_tuple(value)

    @pydantic.model_validator(mode="after")
    def _check_consistency(self) -> Self:
        if self.t is not None and self.c is not None and abs(self.n / self.t - self.c) > 1e-12:
            raise ValueError(f"Contradictory t={self.t} and c={self.c} for n={self.n}")
        if len(self.snr_db) not in (1, len(self.thetas_deg)):
            raise ValueError("snr_db needs one value or one value per source")
        if len(self.thetas_deg) > self.detection.max_sources:
            raise ValueError(
                f"K={len(self.thetas_deg)} sources exceed the bound L={self.detection.max_sources}"
            )
        if self.detection.max_sources >= self.n:
            raise ValueError(f"L={self.detection.max_sources} must be below N={self.n}")
        return self

    @property
    def samples(self) -> int:
        if self.t is not None:
            return self.t
        return max(1, round(self.n / (self.c if self.c is not None else 0.5)))

    @property
    def snr_per_source(self) -> tuple[float, ...]:
        if len(self.snr_db) == 1:
            return self.snr_db * len(self.thetas_deg)
        return self.snr_db

    def to_scenario(self, noise: ArmaSpec) -> Scenario:
        # Stronger sources first.
        order = sorted(range(len(self.thetas_deg)), key=lambda idx: -self.snr_per_source[idx])
        return Scenario.from_snr_db(
            snr_db=[self.snr_per_source[idx] for idx in order],
            n=self.n,
            t=self.samples,
            thetas_deg=tuple(self.thetas_deg[idx] for idx in order),
            constellation=self.constellation,
            noise=noise,
            detection=self.detection,
        )


class SweepConfig(pydantic.BaseModel, frozen=True, extra="forbid"):
    # `None` picks the experiment default.
    values: tuple[float, ...] | None = None

    @pydantic.field_validator("values", mode="before")
    @classmethod
    def _wrap_scalars(cls, value: Any) -> Any:
        return _as_tuple(value)


class RunConfig(pydantic.BaseModel, frozen=True, extra="forbid"):
    command: Command
    seed: int = pydantic.Field(default=0, ge=0, le=MAX_SEED)
    # `None` picks the settings default.
    trials: int | None = pydantic.Field(default=None, ge=1)
    grid_step_deg: float = pydantic.Field(default=0.05, gt=0, le=10)
    # Peak search window for the one-shot commands; the full grid also holds the alias peaks.
    window_deg: tuple[float, float] | None = None
    io: IOConfig = IOConfig()
    scenario: ScenarioConfig = ScenarioConfig()
    noise: ArmaSpec = ArmaSpec()
    sweep: SweepConfig = SweepConfig()

    def scenario_obj(self) -> Scenario:
        return self.scenario.to_scenario(self.noise)

    def replace(self, **kwargs: Any) -> Self:
        return self.model_copy(update=kwargs)


def _normalize_key(key: str) -> list[str]:
    parts = [part.replace("-", "_") for part in key.split(".") if part]
    if not parts:
        raise ConfigError(f"Empty override key: {key!r}")
    # Bare keys that are not top-level fields refer to the scenario.
    if parts[0] not in RunConfig.model_fields:
        parts = ["scenario", *parts]
    return parts


def apply_overrides(data: dict[str, Any], overrides: Sequence[tuple[str, str]]) -> dict[str, Any]:
    """
    >>> apply_overrides({"scenario": {"t": 40}}, [("noise.ar", "0.6"), ("c", "0.5"), ("snr-db", "[3, 4]")])
    {'scenario': {'c': 0.5, 'snr_db': [3, 4]}, 'noise': {'ar': 0.6}}
    """
    result = dict(data)
    for key, raw_value in overrides:
        parts = _normalize_key(key)
        try:
            value = yaml.safe_load(raw_value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"Malformed value for {key!r}: {raw_value!r}") from exc
        node = result
        for part in parts[:-1]:
            child = node.get(part)
            child = dict(child) if isinstance(child, dict) else {}
            node[part] = child
            node = child
        node[parts[-1]] = value
        # `t` and `c` are two ways to set the same thing.
        if parts[:1] == ["scenario"] and parts[-1] in ("t", "c") and len(parts) == 2:
            node.pop("c" if parts[-1] == "t" else "t", None)
    return result


def load_config_file(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a key/value mapping")
    return data


def _apply_command_defaults(data: dict[str, Any]) -> None:
    command = data.get("command")
    defaults = COMMAND_SCENARIO_DEFAULTS.get(command, {}) if isinstance(command, str) else {}
    scenario = data.get("scenario")
    if defaults and (scenario is None or isinstance(scenario, dict)):
        data["scenario"] = {**defaults, **(scenario or {})}


def parse_config(
    path: Path | None,
    overrides: Sequence[tuple[str, str]] = (),
    *,
    command: Command | None = None,
) -> RunConfig:
    data = apply_overrides(load_config_file(path), overrides)
    if command is not None:
        file_command = data.get("command")
        if file_command is not None and file_command != command.value:
            raise ConfigError(f"Config is for {file_command!r}, not {command.value!r}")
        data["command"] = command.value
    _apply_command_defaults(data)
    try:
        config = RunConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    except SpectreError as exc:
        raise ConfigError(str(exc)) from exc
    if config.scenario.thetas_deg:
        try:
            config.scenario_obj()
        except SpectreError as exc:
            raise ConfigError(str(exc)) from exc
    LOGGER.debug("Parsed run config", extra=dict(x_command=config.command.value, x_seed=config.seed))
    return config


def parse_override_args(args: Sequence[str]) -> list[tuple[str, str]]:
    """
    `--key value` and `--key=value` pairs.

    >>> parse_override_args(["--noise.ar", "0.6", "--c=0.5"])
    [('noise.ar', '0.6'), ('c', '0.5')]
    """
    result: list[tuple[str, str]] = []
    pos = 0
    while pos < len(args):
        token = args[pos]
        if not token.startswith("--") or len(token) <= 2:
            raise ConfigError(f"Unexpected argument: {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            pos += 1
        else:
            if pos + 1 >= len(args):
                raise ConfigError(f"Missing value for {token!r}")
            value = args[pos + 1]
            pos += 2
        result.append((key, value))
    return result
