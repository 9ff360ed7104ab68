"""
Tabular output of sweep results.
"""

import csv
import io
import math
from pathlib import Path
from typing import Optional, Union

from uwqkd.sweep import SweepResult, SweepRow

CSV_HEADER = (
    "scheme",
    "water",
    "d_m",
    "m",
    "theta",
    "lambda",
    "L",
    "N",
    "delta",
    "p_acc",
    "qber_analytic",
    "qber_mc",
    "qber_mc_stderr",
)


def format_value(value) -> str:
    """Empty for missing values, shortest round-trip repr for floats."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def row_values(row: SweepRow):
    data = row.as_json()
    return [format_value(data[column]) for column in CSV_HEADER]


def dumps_csv(result: SweepResult) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in result.rows:
        writer.writerow(row_values(row))
    return buffer.getvalue()


def emit_csv(result: SweepResult, path: Union[str, Path]) -> Path:
    """Write the result table; identical results give byte-identical files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(dumps_csv(result))
    return path


def emit_notes(result: SweepResult, path: Union[str, Path]) -> Optional[Path]:
    """Side file listing rows that carry a failure note, if any."""
    failures = result.failures()
    if not failures:
        return None
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("scheme", "water", "d_m", "m", "L", "N", "note"))
        for row in failures:
            writer.writerow(
                [format_value(v) for v in (row.scheme, row.water, row.d_m, row.m, row.L, row.N, row.note)]
            )
    return path
