"""Mixed-type datasets with missingness, schema files and empirical CDFs."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

KINDS = ("continuous", "ordinal", "nominal")
MISSING_MARKERS = ("", "NA")


class DataError(ValueError):
    """Raised for malformed data, schema or CSV input."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    n_categories: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "nominal":
            if self.n_categories is None or self.n_categories < 2:
                raise DataError(f"nominal column {self.name!r} needs n_categories >= 2")
        elif self.n_categories is not None:
            raise DataError(f"column {self.name!r}: n_categories only applies to nominal columns")

    @property
    def ordered(self) -> bool:
        return self.kind != "nominal"

    @property
    def n_latent(self) -> int:
        """Latent dimensions used by this column (Q = n_categories - 1 for nominal)."""
        return 1 if self.ordered else self.n_categories - 1


@dataclass(frozen=True)
class Schema:
    """Column list plus an optional grouping column for random effects."""

    columns: tuple[ColumnSchema, ...]
    group: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        if not names:
            raise DataError("schema has no columns")
        if sum(not c.ordered for c in self.columns) > 1:
            raise DataError("at most one nominal column is supported")
        if self.group is not None and self.group in names:
            raise DataError("group column cannot also be a modelled column")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]


def parse_schema(text: str) -> Schema:
    """Parse a schema file: one ``name,kind[,n_categories]`` line per column.

    A line ``group=<column>`` names the grouping column used for random
    effects. Blank lines and ``#`` comments are ignored.
    """
    columns = []
    group = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("group="):
            group = line.split("=", 1)[1].strip() or None
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise DataError(f"schema line {lineno}: expected name,kind[,n_categories]")
        n_cat = None
        if len(parts) == 3:
            try:
                n_cat = int(parts[2])
            except ValueError:
                raise DataError(f"schema line {lineno}: bad n_categories {parts[2]!r}") from None
        columns.append(ColumnSchema(parts[0], parts[1], n_cat))
    return Schema(tuple(columns), group)


def format_schema(schema: Schema) -> str:
    lines = []
    for c in schema.columns:
        lines.append(f"{c.name},{c.kind}" + (f",{c.n_categories}" if c.n_categories else ""))
    if schema.group:
        lines.append(f"group={schema.group}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class Dataset:
    """An N x (p+1) mixed-type table; ``mask`` is True where a cell is missing.

    Missing cells hold NaN in ``cells``; nominal codes are stored as floats
    with integral values so one array covers every column.
    """

    schema: Schema
    cells: np.ndarray
    mask: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        cells = np.array(self.cells, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if cells.ndim != 2 or cells.shape != mask.shape:
            raise DataError("cells and mask must be matching 2-d arrays")
        if cells.shape[1] != len(self.schema.columns):
            raise DataError("cell columns do not match schema")
        if cells.shape[0] < 1:
            raise DataError("dataset needs at least one row")
        cells[mask] = np.nan
        if np.isnan(cells[~mask]).any():
            raise DataError("observed cells must be numeric")
        for j, col in enumerate(self.schema.columns):
            obs = cells[~mask[:, j], j]
            if obs.size == 0:
                raise DataError(f"column {col.name!r} is fully missing")
            if not col.ordered:
                bad = (obs != np.round(obs)) | (obs < 0) | (obs > col.n_categories - 1)
                if bad.any():
                    raise DataError(
                        f"nominal column {col.name!r} has codes outside 0..{col.n_categories - 1}"
                    )
        cells.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "mask", mask)
        if self.groups is not None:
            groups = np.asarray(self.groups)
            if groups.shape != (cells.shape[0],):
                raise DataError("groups must have one entry per row")
            object.__setattr__(self, "groups", groups)

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def names(self) -> list[str]:
        return self.schema.names

    def column(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def observed(self, j: int) -> np.ndarray:
        return self.cells[~self.mask[:, j], j]

    def with_cells(self, cells: np.ndarray, mask: np.ndarray | None = None) -> "Dataset":
        return Dataset(self.schema, cells, self.mask if mask is None else mask, self.groups)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = list(self.names)
        if self.groups is not None and self.schema.group:
            header.append(self.schema.group)
        writer.writerow(header)
        for i in range(self.n_rows):
            row = []
            for j, col in enumerate(self.schema.columns):
                if self.mask[i, j]:
                    row.append("NA")
                elif col.ordered:
                    row.append(_fmt(self.cells[i, j]))
                else:
                    row.append(str(int(self.cells[i, j])))
            if self.groups is not None and self.schema.group:
                row.append(str(self.groups[i]))
            writer.writerow(row)
        return buf.getvalue()


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def load_dataset(csv_text: str, schema: Schema | Sequence[ColumnSchema]) -> Dataset:
    """Parse CSV text against a schema.

    Empty strings and ``NA`` mark missing cells. Extra columns are an error,
    except the schema's group column, which is read into ``Dataset.groups``.
    """
    if not isinstance(schema, Schema):
        schema = Schema(tuple(schema))
    rows = list(csv.reader(io.StringIO(csv_text)))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError("empty CSV")
    header = [h.strip() for h in rows[0]]
    expected = set(schema.names) | ({schema.group} if schema.group else set())
    for h in header:
        if h not in expected:
            raise DataError(f"unknown column {h!r}")
    for name in expected:
        if name not in header:
            raise DataError(f"column {name!r} missing from CSV header")
    body = rows[1:]
    if not body:
        raise DataError("CSV has no data rows")
    n, m = len(body), len(schema.columns)
    cells = np.full((n, m), np.nan)
    mask = np.zeros((n, m), dtype=bool)
    pos = {h: k for k, h in enumerate(header)}
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"row {i + 1}: expected {len(header)} fields, got {len(row)}")
        for j, col in enumerate(schema.columns):
            raw = row[pos[col.name]].strip()
            if raw in MISSING_MARKERS:
                mask[i, j] = True
                continue
            try:
                val = float(raw)
            except ValueError:
                raise DataError(f"row {i + 1}, column {col.name!r}: non-numeric value {raw!r}") from None
            if not math.isfinite(val):
                raise DataError(f"row {i + 1}, column {col.name!r}: non-finite value {raw!r}")
            cells[i, j] = val
    groups = None
    if schema.group:
        raw_groups = [row[pos[schema.group]].strip() for row in body]
        if any(g in MISSING_MARKERS for g in raw_groups):
            raise DataError("group column cannot have missing values")
        groups = np.array(raw_groups)
    return Dataset(schema, cells, mask, groups)


def read_dataset(data_path: str | Path, schema_path: str | Path) -> Dataset:
    schema = parse_schema(Path(schema_path).read_text())
    return load_dataset(Path(data_path).read_text(), schema)


@dataclass(frozen=True, eq=False)
class EmpiricalCDF:
    """Empirical CDF scaled by n+1 so values stay strictly inside (0, 1)."""

    sorted_values: np.ndarray
    n_obs: int = field(init=False)

    def __post_init__(self):
        vals = np.sort(np.asarray(self.sorted_values, dtype=float).ravel())
        if vals.size == 0:
            raise DataError("empirical CDF needs at least one observed value")
        vals.setflags(write=False)
        object.__setattr__(self, "sorted_values", vals)
        object.__setattr__(self, "n_obs", vals.size)

    def eval(self, y):
        ranks = np.searchsorted(self.sorted_values, y, side="right")
        return ranks / (self.n_obs + 1)

    def inverse(self, u):
        # smallest observed v with eval(v) >= u; the 1e-9 slack keeps
        # inverse(eval(y)) exact despite rounding in u * (n + 1)
        c = np.ceil(np.asarray(u, dtype=float) * (self.n_obs + 1) - 1e-9).astype(int)
        c = np.clip(c, 1, self.n_obs)
        out = self.sorted_values[c - 1]
        return out if out.ndim else float(out)


def build_ecdf(column) -> EmpiricalCDF:
    return EmpiricalCDF(np.asarray(column, dtype=float))
