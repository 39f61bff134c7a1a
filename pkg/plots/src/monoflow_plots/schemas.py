"""CSV schemas for the four figure kinds and input classification.

The plotting layer is strictly downstream of the modeling CLI: it consumes
the CSV files as-is and never recomputes statistics.  Files are classified
by their header so ``--in`` arguments can be given in any order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("fit", "streamlines", "sweep", "intervals")

# column sets identifying each table role
PREDICT_COLUMNS = ("x", "mean", "q2.5", "q97.5")
DATA_COLUMNS = ("x", "y")
SAMPLES_COLUMNS = ("sample", "x", "value")
STREAMLINE_COLUMNS = ("draw", "step", "particle", "position", "time")
INDUCING_COLUMNS = ("space", "time", "mean", "variance")
SWEEP_COLUMNS = ("sweep", "value", "x", "mean", "lo", "hi")

REQUIRED_ROLES = {
    "fit": ("data", "predict"),
    "intervals": ("data", "predict"),
    "streamlines": ("streamlines",),
    "sweep": ("sweep",),
}
OPTIONAL_ROLES = {
    "fit": ("samples",),
    "intervals": ("samples",),
    "streamlines": ("inducing",),
    "sweep": (),
}

_ROLE_COLUMNS = {
    "predict": PREDICT_COLUMNS,
    "samples": SAMPLES_COLUMNS,
    "streamlines": STREAMLINE_COLUMNS,
    "inducing": INDUCING_COLUMNS,
    "sweep": SWEEP_COLUMNS,
    "data": DATA_COLUMNS,
}


class SchemaError(ValueError):
    """A CSV does not carry the columns its figure kind requires."""


@dataclass
class Table:
    path: Path
    columns: list
    rows: dict            # column -> list of raw strings

    def numeric(self, column) -> np.ndarray:
        try:
            return np.array([float(v) for v in self.rows[column]])
        except ValueError as exc:
            raise SchemaError(
                f"{self.path}: column {column!r} is not numeric ({exc})")

    def strings(self, column) -> list:
        return self.rows[column]

    def __len__(self):
        return len(next(iter(self.rows.values()), []))


@dataclass
class FigureSpec:
    """One figure to render: kind, classified inputs, output, styling."""

    kind: str
    inputs: dict           # role -> Table
    output: Path
    style: dict = field(default_factory=dict)


def read_table(path) -> Table:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such file")
    header = None
    rows = None
    with path.open(newline="") as fh:
        for raw in csv.reader(fh):
            if not raw or raw[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in raw]
                rows = {c: [] for c in header}
                continue
            for c, v in zip(header, raw):
                rows[c].append(v)
    if header is None:
        raise SchemaError(f"{path}: empty CSV (no header row)")
    if not next(iter(rows.values()), []):
        raise SchemaError(f"{path}: no data rows")
    return Table(path=path, columns=header, rows=rows)


def classify(table: Table) -> str:
    """Best-matching role for a table, judged by its header."""
    cols = set(table.columns)
    # most specific first: predict before data (both contain x)
    for role in ("sweep", "streamlines", "inducing", "samples", "predict",
                 "data"):
        if set(_ROLE_COLUMNS[role]).issubset(cols):
            return role
    raise SchemaError(
        f"{table.path}: unrecognized columns {table.columns}; expected one "
        f"of the monoflow CSV schemas")


def require_columns(table: Table, columns) -> None:
    missing = [c for c in columns if c not in table.columns]
    if missing:
        raise SchemaError(
            f"{table.path}: missing column {missing[0]!r} "
            f"(expected columns {list(columns)})")


def build_spec(kind: str, paths, output, style=None) -> FigureSpec:
    """Classify the input CSVs and validate the kind's required roles."""
    if kind not in KINDS:
        raise SchemaError(f"unknown figure kind {kind!r}; expected {KINDS}")
    inputs = {}
    for p in paths:
        table = read_table(p)
        role = classify(table)
        inputs.setdefault(role, table)
    for role in REQUIRED_ROLES[kind]:
        if role not in inputs:
            cols = _ROLE_COLUMNS[role]
            raise SchemaError(
                f"figure kind {kind!r} needs a CSV with columns "
                f"{list(cols)}; none of the inputs matched")
        require_columns(inputs[role], _ROLE_COLUMNS[role])
    return FigureSpec(kind=kind, inputs=inputs, output=Path(output),
                      style=dict(style or {}))
