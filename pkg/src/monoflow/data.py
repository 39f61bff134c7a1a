"""Paired input/output data with provenance for synthetic benchmarks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DatasetMeta:
    """Provenance of a synthetic dataset."""

    function_id: str
    noise_sd: float
    seed: int
    n: int


@dataclass(frozen=True)
class Dataset:
    """Paired (x, y) observations, optionally with synthetic provenance."""

    x: np.ndarray
    y: np.ndarray
    meta: DatasetMeta | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ValueError(f"x and y lengths differ: {x.shape} vs {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset values must be finite")
        if self.meta is not None and np.any(np.diff(x) <= 0):
            raise ValueError("synthetic datasets must have strictly increasing x")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.size


def read_dataset_csv(path) -> Dataset:
    """Read a two-column ``x,y`` CSV (header required, '#' lines skipped)."""
    path = Path(path)
    xs, ys = [], []
    with path.open(newline="") as fh:
        lineno = 0
        header = None
        for row in csv.reader(fh):
            lineno += 1
            if not row or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip().lower() for c in row]
                if header[:2] != ["x", "y"]:
                    raise ValueError(
                        f"{path}: line {lineno}: expected header 'x,y', "
                        f"got {','.join(row)!r}")
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: line {lineno}: expected two columns")
            try:
                xs.append(float(row[0]))
                ys.append(float(row[1]))
            except ValueError as exc:
                raise ValueError(
                    f"{path}: line {lineno}: non-numeric value ({exc})") from None
    if header is None:
        raise ValueError(f"{path}: empty file (expected 'x,y' header)")
    return Dataset(x=np.array(xs), y=np.array(ys))


def write_dataset_csv(path, data: Dataset, comments: list[str] | None = None):
    """Write a dataset as an ``x,y`` CSV with optional leading '#' comments."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in comments or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for xi, yi in zip(data.x, data.y):
            writer.writerow([repr(float(xi)), repr(float(yi))])
