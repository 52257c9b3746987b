"""CSV panel ingestion, panel round-tripping, and JSON report plumbing.

Floats are written with ``repr`` so a write/read round trip is bitwise
exact; reports are serialized with sorted keys so re-running a command
yields byte-identical output.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .dgp import Panel
from .errors import MissingData, NonMonotoneDates, SchemaMismatch

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CsvPanelSchema:
    """Column layout of an external factor-model CSV file."""

    date_col: str
    portfolio_cols: tuple[str, ...]
    factor_cols: tuple[str, ...]
    rf_col: str | None = None
    percent: bool = False

    def __post_init__(self):
        if not self.portfolio_cols or not self.factor_cols:
            raise ValueError("portfolio_cols and factor_cols must be non-empty")


def schema_from_json(source) -> CsvPanelSchema:
    """Build a panel schema from a JSON file path or a parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            source = json.load(fh)
    return CsvPanelSchema(
        date_col=source["date_col"],
        portfolio_cols=tuple(source["portfolio_cols"]),
        factor_cols=tuple(source["factor_cols"]),
        rf_col=source.get("rf_col"),
        percent=bool(source.get("percent", False)),
    )


def _date_key(raw: str):
    raw = raw.strip()
    try:
        return (0, int(raw))
    except ValueError:
        return (1, raw)


def load_csv_panel(path, schema: CsvPanelSchema, date_range: tuple[str, str] | None = None):
    """Load an external CSV into a Panel of excess returns and factors.

    Returns (panel, dates). Portfolio returns have the risk-free column
    subtracted when the schema names one; percent-scaled values are
    divided by 100; the date filter is inclusive on both ends.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if any(cell.strip() for cell in row)]

    needed = [schema.date_col, *schema.portfolio_cols, *schema.factor_cols]
    if schema.rf_col:
        needed.append(schema.rf_col)
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaMismatch(f"{path}: missing columns {missing}")
    col_idx = {c: header.index(c) for c in needed}

    def cell(row_i: int, col: str) -> float:
        raw = rows[row_i][col_idx[col]].strip()
        if raw == "":
            raise MissingData(f"{path}: empty cell at row {row_i + 2}, column {col!r}")
        try:
            return float(raw)
        except ValueError:
            raise MissingData(
                f"{path}: unparseable cell {raw!r} at row {row_i + 2}, column {col!r}"
            ) from None

    dates = [rows[i][col_idx[schema.date_col]].strip() for i in range(len(rows))]
    keys = [_date_key(d) for d in dates]
    if any(k2 <= k1 for k1, k2 in zip(keys, keys[1:])):
        raise NonMonotoneDates(f"{path}: date column {schema.date_col!r} is not increasing")

    if date_range is not None:
        lo, hi = (_date_key(v) for v in date_range)
        sel = [i for i, k in enumerate(keys) if lo <= k <= hi]
    else:
        sel = list(range(len(rows)))
    if not sel:
        raise MissingData(f"{path}: no rows in the selected date range")

    n, r = len(schema.portfolio_cols), len(schema.factor_cols)
    y = np.empty((len(sel), n))
    x = np.empty((len(sel), r))
    for out_i, row_i in enumerate(sel):
        rf = cell(row_i, schema.rf_col) if schema.rf_col else 0.0
        for j, col in enumerate(schema.portfolio_cols):
            y[out_i, j] = cell(row_i, col) - rf
        for j, col in enumerate(schema.factor_cols):
            x[out_i, j] = cell(row_i, col)
    if schema.percent:
        y /= 100.0
        x /= 100.0
    return Panel(y=y, x=x), [dates[i] for i in sel]


def save_panel_csv(panel: Panel, path) -> None:
    """Write a simulated panel with generic y*/x*(/u*) headers."""
    n, r = panel.n, panel.r
    header = ["t"] + [f"y{i+1}" for i in range(n)] + [f"x{j+1}" for j in range(r)]
    if panel.u_true is not None:
        header += [f"u{i+1}" for i in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(panel.t):
            row = [str(t + 1)]
            row += [repr(float(v)) for v in panel.y[t]]
            row += [repr(float(v)) for v in panel.x[t]]
            if panel.u_true is not None:
                row += [repr(float(v)) for v in panel.u_true[t]]
            writer.writerow(row)


def load_panel_csv(path) -> Panel:
    """Read a panel written by :func:`save_panel_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    y_cols = [i for i, h in enumerate(header) if h.startswith("y")]
    x_cols = [i for i, h in enumerate(header) if h.startswith("x")]
    u_cols = [i for i, h in enumerate(header) if h.startswith("u")]
    if not y_cols or not x_cols:
        raise SchemaMismatch(f"{path}: expected y*/x* columns, found {header}")
    try:
        y = np.array([[float(row[i]) for i in y_cols] for row in rows])
        x = np.array([[float(row[i]) for i in x_cols] for row in rows])
        u = np.array([[float(row[i]) for i in u_cols] for row in rows]) if u_cols else None
    except ValueError as exc:
        raise MissingData(f"{path}: {exc}") from exc
    return Panel(y=y, x=x, u_true=u)


def dump_json(obj, path=None) -> str:
    """Deterministic JSON serialization (sorted keys, repr floats)."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def jsonable(value):
    """Recursively convert numpy values for JSON output."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def load_report_schema(name: str) -> dict:
    """Load a versioned report schema shipped with the package."""
    ref = importlib.resources.files("gdsur") / "schemas" / f"{name}.schema.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def validate_report(obj: dict, name: str) -> None:
    """Validate a report dict against its shipped schema (raises on failure)."""
    jsonschema.validate(obj, load_report_schema(name))
