"""Structured-grid field serialization.

A field dump is a CSV file with a two-line preamble describing the grid
(number of intervals N, half-width L, spacing h) followed by one record
per lattice node in j-major order: (i, j, x, y, class, value).  The class
column is one of ``inside``, ``ghost`` or ``inactive``; inactive nodes
carry an empty value field.  Floats are printed with 17 significant
digits, so a read-back reproduces the field bit-exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import CartesianGrid, DomainClassification

INSIDE = "inside"
GHOST = "ghost"
INACTIVE = "inactive"

_FMT = ".17g"


@dataclass
class FieldDump:
    """In-memory image of a field file."""

    intervals: int
    half_width: float
    h: float
    kind: np.ndarray       # (N+1, N+1) of str
    values: np.ndarray     # (N+1, N+1) float, NaN at inactive nodes

    def active_values(self) -> np.ndarray:
        return self.values[self.kind != INACTIVE]


def write_field(grid: CartesianGrid, classification: DomainClassification,
                field: np.ndarray, path) -> None:
    """Dump a nodal field (sized n_active, enumeration order) to ``path``."""
    field = np.asarray(field, dtype=float)
    if field.shape[0] != classification.n_active:
        raise ValueError(
            f"field has {field.shape[0]} entries, expected "
            f"{classification.n_active} active nodes")
    n1 = grid.intervals + 1
    values = classification.scatter(field)
    xs = grid.nodes_1d()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("N", "L", "h"))
        writer.writerow((grid.intervals, format(grid.half_width, _FMT),
                         format(grid.h, _FMT)))
        writer.writerow(("i", "j", "x", "y", "class", "value"))
        for j in range(n1):
            for i in range(n1):
                if classification.inside_mask[i, j]:
                    kind = INSIDE
                elif classification.ghost_mask[i, j]:
                    kind = GHOST
                else:
                    kind = INACTIVE
                value = "" if kind == INACTIVE else format(values[i, j], _FMT)
                writer.writerow((i, j, format(xs[i], _FMT),
                                 format(xs[j], _FMT), kind, value))


def read_field(path) -> FieldDump:
    """Read a field file back; inverse of :func:`write_field`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["N", "L", "h"]:
            raise ValueError(f"not a field dump: bad header {header!r}")
        meta = next(reader)
        intervals = int(meta[0])
        half_width = float(meta[1])
        h = float(meta[2])
        next(reader)                      # column names
        n1 = intervals + 1
        kind = np.full((n1, n1), INACTIVE, dtype=object)
        values = np.full((n1, n1), np.nan)
        for row in reader:
            i, j = int(row[0]), int(row[1])
            kind[i, j] = row[4]
            if row[5] != "":
                values[i, j] = float(row[5])
    return FieldDump(intervals, half_width, h, kind, values)
