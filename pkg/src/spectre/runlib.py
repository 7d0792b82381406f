"""Process-wide initialization for the CLI: logging, error reporting, warning capture"""

import logging

import hyapp.logs as hyapp_logs
import sentry_sdk

from .settings import Settings

LOGGER = logging.getLogger(__name__)

INIT_STATE: dict[str, Settings] = {}


class SettingsConflictError(Exception):
    """Process already initialized with other settings"""


def init_logs(settings: Settings) -> None:
    # numpy `RuntimeWarning`s from the trial loops end up in the same handlers.
    logging.captureWarnings(True)
    if settings.opts.env in ("dev", "tests"):
        hyapp_logs.init_dev_logs()
        return

    hyapp_logs.init_logs()

    if settings.opts.sentry_dsn:
        # Errors only, no tracing.
        sentry_sdk.init(dsn=settings.opts.sentry_dsn, environment=settings.opts.env, traces_sample_rate=0.0)


def init_all(settings: Settings | None = None) -> Settings:
    """Returns the settings the process runs with"""
    if settings is None:
        settings = Settings()

    # Re-calls with equal settings are no-ops, e.g. several CLI invocations within one test process.
    prev_settings = INIT_STATE.get("settings")
    if prev_settings is not None:
        if settings != prev_settings:
            raise SettingsConflictError(f"Already initialized with {prev_settings.opts!r}, got {settings.opts!r}")
        return prev_settings
    INIT_STATE["settings"] = settings

    init_logs(settings)
    LOGGER.info(
        "Initialized",
        extra=dict(
            x_env=settings.opts.env,
            x_threads=settings.opts.threads,
            x_default_trials=settings.opts.default_trials,
        ),
    )
    return settings
