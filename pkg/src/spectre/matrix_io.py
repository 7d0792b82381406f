"""
Text formats: observation matrices (`a+bi` tokens, comma separated, one row per line)
and experiment reports (one CSV per curve plus a JSON summary).
"""

import csv
import dataclasses
import logging
import re
from pathlib import Path
from typing import Any

import numpy as np
import orjson

from .stats import ExperimentReport

LOGGER = logging.getLogger(__name__)

_NUMBER = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
COMPLEX_TOKEN_RE = re.compile(rf"^\s*([+-]?{_NUMBER})\s*([+-])\s*({_NUMBER})\s*i\s*$")
REPORT_COLUMNS = ("sweep", "metric", "ci_low", "ci_high", "n_trials")
PARTIAL_SUFFIX = ".partial"


@dataclasses.dataclass(kw_only=True)
class MatrixFormatError(Exception):
    """Malformed matrix file; `row` and `column` are 1-based"""

    message: str
    row: int | None = None
    column: int | None = None
    path: Path | None = None

    def __str__(self) -> str:
        location = f" at row {self.row}" if self.row is not None else ""
        location += f", column {self.column}" if self.column is not None else ""
        return f"{self.path or '<matrix>'}: {self.message}{location}"


def parse_complex(token: str) -> complex:
    """
    >>> parse_complex("1.5-2e-3i")
    (1.5-0.002j)
    >>> parse_complex("-0+1i")
    (-0+1j)
    """
    match = COMPLEX_TOKEN_RE.match(token)
    if match is None:
        raise ValueError(f"Not a complex number token: {token!r}")
    real_s, sign, imag_s = match.groups()
    imag = float(imag_s)
    return complex(float(real_s), -imag if sign == "-" else imag)


def format_complex(value: complex) -> str:
    """
    17 significant digits, enough for an exact round trip.

    >>> format_complex(complex(0.1, -2.0))
    '0.10000000000000001-2i'
    """
    return f"{value.real:.17g}{value.imag:+.17g}i"


def read_matrix(path: Path) -> np.ndarray:
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise MatrixFormatError(message=f"Unreadable matrix file ({exc})", path=path) from exc
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise MatrixFormatError(message="Empty matrix file", path=path)
    rows: list[list[complex]] = []
    for row_idx, line in enumerate(lines, start=1):
        row: list[complex] = []
        for col_idx, token in enumerate(line.split(","), start=1):
            try:
                row.append(parse_complex(token))
            except ValueError as exc:
                raise MatrixFormatError(
                    message=f"Non-numeric token {token.strip()!r}", row=row_idx, column=col_idx, path=path
                ) from exc
        if rows and len(row) != len(rows[0]):
            raise MatrixFormatError(
                message=f"Ragged row, expected {len(rows[0])} entries, got {len(row)}",
                row=row_idx,
                column=min(len(row), len(rows[0])) + 1,
                path=path,
            )
        rows.append(row)
    return np.array(rows, dtype=complex)


def write_matrix(path: Path, matrix: np.ndarray) -> None:
    text = "".join(",".join(format_complex(complex(val)) for val in row) + "\n" for row in np.atleast_2d(matrix))
    path.write_text(text, encoding="utf-8")


def _format_float(value: float) -> str:
    return format(float(value), ".17g")


def write_scan(path: Path, theta_deg: np.ndarray, gamma: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fobj:
        writer = csv.writer(fobj, lineterminator="\n")
        writer.writerow(("theta_deg", "gamma"))
        for theta, value in zip(theta_deg, gamma, strict=True):
            writer.writerow((_format_float(theta), _format_float(value)))


def write_report(report: ExperimentReport, out_dir: Path, *, partial: bool = False) -> list[Path]:
    """One CSV per curve and a `<name>_summary.json`; `partial` appends the `.partial` suffix"""
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = PARTIAL_SUFFIX if partial else ""
    paths: list[Path] = []
    for curve, rows in sorted(report.curves.items()):
        with_theory = any(row.theory is not None for row in rows)
        path = out_dir / f"{report.name}_{curve}.csv{suffix}"
        with path.open("w", encoding="utf-8", newline="") as fobj:
            writer = csv.writer(fobj, lineterminator="\n")
            writer.writerow((*REPORT_COLUMNS, "theory") if with_theory else REPORT_COLUMNS)
            for row in rows:
                values = [_format_float(row.sweep), *map(_format_float, (row.metric, row.ci_low, row.ci_high))]
                values.append(str(row.n_trials))
                if with_theory:
                    values.append("" if row.theory is None else _format_float(row.theory))
                writer.writerow(values)
        paths.append(path)

    summary: dict[str, Any] = {
        "name": report.name,
        "sweep_name": report.sweep_name,
        "partial": partial,
        "definitions": report.definitions,
        "curves": {curve: [row._asdict() for row in rows] for curve, rows in report.curves.items()},
        "extras": report.extras,
    }
    summary_path = out_dir / f"{report.name}_summary.json{suffix}"
    summary_path.write_bytes(
        orjson.dumps(summary, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
    )
    paths.append(summary_path)
    LOGGER.info(
        "Wrote report %s",
        report.name,
        extra=dict(x_out_dir=str(out_dir), x_files=len(paths), x_partial=partial),
    )
    return paths
