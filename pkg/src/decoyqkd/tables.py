"""Delimited-table and key=value config I/O shared by the CLI and tests.

Measured-statistics tables are whitespace-delimited text with a header
row naming the columns length_km, s_mu, e_mu, s_nu, e_nu; scientific
notation is accepted and '#' lines are comments. Bounds tables carry
one output row per input row in input order; rows whose analysis
aborts carry the cause in the diagnostics column instead of values.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import IO, Iterable, Sequence

from .estimator import MeasuredStats, SecurityBounds

__all__ = [
    "TableParseError",
    "BoundsRow",
    "STATS_COLUMNS",
    "read_measured_stats",
    "write_measured_stats",
    "write_bounds_table",
    "read_config",
    "bundled_reference_table",
    "bundled_reference_text",
]

STATS_COLUMNS = ("length_km", "s_mu", "e_mu", "s_nu", "e_nu")
BOUNDS_COLUMNS = ("length_km", "s_nu_lower", "s1_lower", "e1_upper", "r_lower",
                  "secure", "diagnostics")

_REFERENCE_RESOURCE = "reference_run.tsv"


class TableParseError(ValueError):
    """Malformed table or config input; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class BoundsRow:
    """One analyzed table row: bounds on success, an error cause otherwise."""

    length_km: float
    bounds: SecurityBounds | None
    error: str | None = None


def read_measured_stats(stream: Iterable[str]) -> list[MeasuredStats]:
    """Parse a measured-statistics table; raises TableParseError with line numbers."""
    rows: list[MeasuredStats] = []
    header_seen = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if not header_seen:
            if tuple(parts) != STATS_COLUMNS:
                raise TableParseError(
                    lineno, f"expected header {' '.join(STATS_COLUMNS)}, got {line!r}"
                )
            header_seen = True
            continue
        if len(parts) != len(STATS_COLUMNS):
            raise TableParseError(
                lineno, f"expected {len(STATS_COLUMNS)} columns, got {len(parts)}"
            )
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise TableParseError(lineno, str(exc)) from None
        try:
            rows.append(MeasuredStats(*values))
        except ValueError as exc:
            raise TableParseError(lineno, str(exc)) from None
    if not header_seen:
        raise TableParseError(0, "empty input: header row is required")
    return rows


def write_measured_stats(rows: Sequence[MeasuredStats], stream: IO[str],
                         header_comments: Sequence[str] = ()) -> None:
    for comment in header_comments:
        stream.write(f"# {comment}\n")
    stream.write("\t".join(STATS_COLUMNS) + "\n")
    for row in rows:
        stream.write("\t".join(repr(getattr(row, c)) for c in STATS_COLUMNS) + "\n")


def write_bounds_table(rows: Sequence[BoundsRow], stream: IO[str],
                       header_comments: Sequence[str] = ()) -> None:
    """Write analyzed rows; floats use repr so re-parsing is lossless."""
    for comment in header_comments:
        stream.write(f"# {comment}\n")
    stream.write("\t".join(BOUNDS_COLUMNS) + "\n")
    for row in rows:
        if row.bounds is not None:
            b = row.bounds
            fields = [repr(row.length_km), repr(b.s_nu_lower), repr(b.s1_lower),
                      repr(b.e1_upper), repr(b.r_lower), str(b.secure).lower(), "-"]
        else:
            fields = [repr(row.length_km), "-", "-", "-", "-", "false",
                      (row.error or "unknown").replace("\t", " ")]
        stream.write("\t".join(fields) + "\n")


def read_config(stream: Iterable[str], allowed_keys: Sequence[str]) -> dict[str, float]:
    """Parse a flat key=value config file; unknown keys are rejected."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise TableParseError(lineno, f"expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in allowed_keys:
            raise TableParseError(
                lineno, f"unknown key {key!r}; allowed: {', '.join(allowed_keys)}"
            )
        try:
            values[key] = float(value.strip())
        except ValueError:
            raise TableParseError(lineno, f"value for {key!r} is not a number") from None
    return values


def bundled_reference_text() -> str:
    """Raw text of the bundled reference dataset (six measured fiber lengths)."""
    return resources.files("decoyqkd.data").joinpath(_REFERENCE_RESOURCE).read_text()


def bundled_reference_table() -> list[MeasuredStats]:
    return read_measured_stats(bundled_reference_text().splitlines())
