import dataclasses
import enum
import logging
from typing import Any, NamedTuple, Self

import numpy as np
import scipy.stats
from hyapp.funcutils import groupby

LOGGER = logging.getLogger(__name__)

CONFIDENCE_LEVEL = 0.95
NORMAL_QUANTILE = 1.959963984540054


class MetricKind(enum.StrEnum):
    PROPORTION = "proportion"
    MEAN = "mean"
    VARIANCE = "variance"


class MetricKey(NamedTuple):
    """Counters key for a single report row"""

    # e.g. `proposed_cdr`
    curve: str
    sweep: float

    def replace(self, **kwargs: Any) -> Self:
        return self._replace(**kwargs)


class ReportRow(NamedTuple):
    sweep: float
    metric: float
    ci_low: float
    ci_high: float
    n_trials: int
    theory: float | None = None


@dataclasses.dataclass()
class TrialStats:
    """
    Order-independent accumulation of per-trial values:
    count, sum and sum of squares per key.
    """

    logger: logging.Logger = LOGGER

    def __post_init__(self) -> None:
        self.kinds: dict[str, MetricKind] = {}
        self.counts: dict[MetricKey, int] = {}
        self.sums: dict[MetricKey, float] = {}
        self.sums_sq: dict[MetricKey, float] = {}
        self.theory: dict[MetricKey, float] = {}

    def increment_stats_straight(self, key: MetricKey, value: float, count: int = 1) -> None:
        self.counts[key] = self.counts.setdefault(key, 0) + count
        self.sums[key] = self.sums.setdefault(key, 0.0) + value
        self.sums_sq[key] = self.sums_sq.setdefault(key, 0.0) + value * value

    def _register(self, curve: str, kind: MetricKind) -> None:
        prev = self.kinds.setdefault(curve, kind)
        if prev != kind:
            raise ValueError(f"Curve {curve!r} registered as {prev}, not {kind}")

    def add_proportion(self, curve: str, sweep: float, success: bool) -> None:
        self._register(curve, MetricKind.PROPORTION)
        self.increment_stats_straight(MetricKey(curve, sweep), 1.0 if success else 0.0)

    def add_value(self, curve: str, sweep: float, value: float) -> None:
        self._register(curve, MetricKind.MEAN)
        self.increment_stats_straight(MetricKey(curve, sweep), float(value))

    def add_variance_sample(self, curve: str, sweep: float, value: float) -> None:
        self._register(curve, MetricKind.VARIANCE)
        self.increment_stats_straight(MetricKey(curve, sweep), float(value))

    def set_theory(self, curve: str, sweep: float, value: float | None) -> None:
        if value is not None:
            self.theory[MetricKey(curve, sweep)] = float(value)

    def summarize(self, key: MetricKey) -> ReportRow:
        count = self.counts[key]
        total = self.sums[key]
        kind = self.kinds[key.curve]
        theory = self.theory.get(key)
        if kind == MetricKind.PROPORTION:
            successes = round(total)
            interval = scipy.stats.binomtest(successes, count).proportion_ci(
                confidence_level=CONFIDENCE_LEVEL, method="wilson"
            )
            return ReportRow(key.sweep, successes / count, interval.low, interval.high, count, theory)

        mean = total / count
        variance = max(self.sums_sq[key] / count - mean**2, 0.0) * count / max(count - 1, 1)
        if kind == MetricKind.VARIANCE:
            # Normal-theory interval for a sample variance.
            halfwidth = NORMAL_QUANTILE * variance * np.sqrt(2.0 / max(count - 1, 1))
            return ReportRow(key.sweep, variance, variance - halfwidth, variance + halfwidth, count, theory)
        halfwidth = NORMAL_QUANTILE * np.sqrt(variance / count)
        return ReportRow(key.sweep, mean, mean - halfwidth, mean + halfwidth, count, theory)

    def rows_by_curve(self) -> dict[str, list[ReportRow]]:
        grouped = groupby((key.curve, self.summarize(key)) for key in self.counts)
        return {curve: sorted(rows) for curve, rows in grouped.items()}


@dataclasses.dataclass()
class ExperimentReport:
    name: str
    sweep_name: str
    curves: dict[str, list[ReportRow]] = dataclasses.field(default_factory=dict)
    # curve -> human-readable definition
    definitions: dict[str, str] = dataclasses.field(default_factory=dict)
    extras: dict[str, Any] = dataclasses.field(default_factory=dict)

    def add_rows(self, rows_by_curve: dict[str, list[ReportRow]]) -> None:
        for curve, rows in rows_by_curve.items():
            self.curves.setdefault(curve, []).extend(rows)

    def metric_at(self, curve: str, sweep: float) -> ReportRow:
        for row in self.curves[curve]:
            if row.sweep == sweep:
                return row
        raise KeyError((curve, sweep))
