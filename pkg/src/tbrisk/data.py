"""Typed column-oriented datasets, schemas, CSV ingestion and column summaries.

Columns are stored per role:

* categorical / identifier / raw target: dictionary-coded ``int32`` codes
  (``-1`` marks a missing cell) plus a tuple of category strings in
  first-appearance order,
* numeric: ``float64`` with ``NaN`` in missing cells,
* date: ``int64`` days since 1970-01-01 (``0`` in missing cells),
* binarized target: ``int8`` labels in {0, 1}.

Every column also carries an explicit boolean missing mask. Datasets are
treated as immutable; every transforming method returns a new object.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import DuplicateColumn, MissingColumn, ParseError, SchemaMismatch, UnknownColumn

ROLES = ("categorical", "numeric", "date", "target", "identifier")
DEFAULT_MISSING_TOKENS = frozenset({"", "NA", "NULL", "null"})
EPOCH = dt.date(1970, 1, 1)


def date_to_days(value: dt.date) -> int:
    return (value - EPOCH).days


def days_to_date(days: int) -> dt.date:
    return EPOCH + dt.timedelta(days=int(days))


def parse_date(text: str) -> int:
    """Parse a strict ``YYYY-MM-DD`` string into days since epoch."""
    if len(text) != 10 or text[4] != "-" or text[7] != "-":
        raise ValueError(f"not an ISO-8601 day: {text!r}")
    return date_to_days(dt.date.fromisoformat(text))


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str
    nullable: bool = True

    def __post_init__(self):
        if not self.name:
            raise ValueError("column names must be non-empty")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r} for column {self.name!r}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        seen = set()
        for spec in self.columns:
            if spec.name in seen:
                raise DuplicateColumn(f"duplicate column {spec.name!r} in schema")
            seen.add(spec.name)
        n_target = sum(spec.role == "target" for spec in self.columns)
        if n_target != 1:
            raise ValueError(f"schema needs exactly one target column, found {n_target}")

    @property
    def names(self) -> list[str]:
        return [spec.name for spec in self.columns]

    @property
    def target(self) -> str:
        return next(spec.name for spec in self.columns if spec.role == "target")

    def spec(self, name: str) -> ColumnSpec:
        for spec in self.columns:
            if spec.name == name:
                return spec
        raise UnknownColumn(f"unknown column {name!r}")

    def role(self, name: str) -> str:
        return self.spec(name).role

    def by_role(self, role: str) -> list[str]:
        return [spec.name for spec in self.columns if spec.role == role]

    def drop(self, names: Iterable[str]) -> "Schema":
        names = set(names)
        return Schema(tuple(spec for spec in self.columns if spec.name not in names))

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": s.name, "role": s.role, "nullable": s.nullable} for s in self.columns
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Schema":
        return cls(
            tuple(
                ColumnSpec(str(c["name"]), str(c["role"]), bool(c.get("nullable", True)))
                for c in data["columns"]
            )
        )

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


@dataclass(frozen=True, eq=False)
class Column:
    role: str
    values: np.ndarray
    missing: np.ndarray
    categories: tuple[str, ...] | None = None

    def __len__(self):
        return len(self.values)

    @property
    def is_coded(self) -> bool:
        return self.categories is not None

    def decoded(self) -> list:
        """Python-level cell values, ``None`` for missing cells."""
        if self.is_coded:
            cats = self.categories
            return [None if c < 0 else cats[c] for c in self.values.tolist()]
        if self.role == "date":
            return [None if m else days_to_date(v) for v, m in zip(self.values.tolist(), self.missing)]
        if self.values.dtype.kind in "iub":
            return [None if m else int(v) for v, m in zip(self.values.tolist(), self.missing)]
        return [None if m else float(v) for v, m in zip(self.values.tolist(), self.missing)]

    def take(self, indices: np.ndarray) -> "Column":
        return Column(self.role, self.values[indices], self.missing[indices], self.categories)

    def equals(self, other: "Column") -> bool:
        return (
            self.role == other.role
            and np.array_equal(self.missing, other.missing)
            and self.decoded() == other.decoded()
        )


def coded_column(role: str, cells: Sequence[str | None]) -> Column:
    """Dictionary-code a sequence of strings (``None`` = missing)."""
    lookup: dict[str, int] = {}
    codes = np.empty(len(cells), dtype=np.int32)
    for i, cell in enumerate(cells):
        if cell is None:
            codes[i] = -1
        else:
            code = lookup.get(cell)
            if code is None:
                code = lookup[cell] = len(lookup)
            codes[i] = code
    return Column(role, codes, codes < 0, tuple(lookup))


def numeric_column(values: Sequence[float | None]) -> Column:
    arr = np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)
    return Column("numeric", arr, np.isnan(arr))


def date_column(values: Sequence) -> Column:
    days = np.zeros(len(values), dtype=np.int64)
    missing = np.zeros(len(values), dtype=bool)
    for i, v in enumerate(values):
        if v is None:
            missing[i] = True
        elif isinstance(v, dt.date):
            days[i] = date_to_days(v)
        elif isinstance(v, str):
            days[i] = parse_date(v)
        else:
            days[i] = int(v)
    return Column("date", days, missing)


def label_column(labels) -> Column:
    y = np.asarray(labels, dtype=np.int8)
    if y.size and not np.isin(y, (0, 1)).all():
        raise ValueError("binarized target must contain only 0/1")
    return Column("target", y, np.zeros(len(y), dtype=bool))


class Dataset:
    """An immutable table of typed columns sharing one row count."""

    def __init__(self, schema: Schema, columns: Mapping[str, Column]):
        missing = [n for n in schema.names if n not in columns]
        if missing:
            raise MissingColumn(f"no storage for column(s) {missing}")
        lengths = {len(columns[n]) for n in schema.names}
        if len(lengths) > 1:
            raise ValueError(f"columns have differing lengths {sorted(lengths)}")
        self.schema = schema
        self._columns = {n: columns[n] for n in schema.names}
        self.n_rows = lengths.pop() if lengths else 0

    # construction -------------------------------------------------------

    @classmethod
    def from_values(cls, schema: Schema, data: Mapping[str, Sequence]) -> "Dataset":
        """Build from python cell values; ``None`` marks a missing cell.

        A target given as integers/booleans is stored binarized, a target
        given as strings is stored raw (dictionary-coded).
        """
        columns = {}
        for spec in schema.columns:
            if spec.name not in data:
                raise MissingColumn(f"column {spec.name!r} absent from data")
            cells = list(data[spec.name])
            if spec.role == "numeric":
                columns[spec.name] = numeric_column(cells)
            elif spec.role == "date":
                columns[spec.name] = date_column(cells)
            elif spec.role == "target" and cells and all(
                isinstance(c, (int, np.integer, bool, np.bool_)) for c in cells
            ):
                columns[spec.name] = label_column(cells)
            else:
                columns[spec.name] = coded_column(
                    spec.role, [None if c is None else str(c) for c in cells]
                )
        return cls(schema, columns)

    # access -------------------------------------------------------------

    @property
    def names(self) -> list[str]:
        return self.schema.names

    def column(self, name: str) -> Column:
        try:
            return self._columns[name]
        except KeyError:
            raise UnknownColumn(f"unknown column {name!r}") from None

    __getitem__ = column

    def __contains__(self, name) -> bool:
        return name in self._columns

    def __len__(self):
        return self.n_rows

    @property
    def target_binarized(self) -> bool:
        return not self.column(self.schema.target).is_coded

    @property
    def labels(self) -> np.ndarray:
        col = self.column(self.schema.target)
        if col.is_coded:
            raise SchemaMismatch("target column has not been binarized")
        return col.values.astype(np.int64)

    def strings(self, name: str) -> list:
        return self.column(name).decoded()

    # transformations ----------------------------------------------------

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, {n: c.take(idx) for n, c in self._columns.items()})

    def drop_columns(self, names: Iterable[str]) -> "Dataset":
        names = set(names)
        schema = self.schema.drop(names)
        return Dataset(schema, {n: self._columns[n] for n in schema.names})

    def replace_column(self, name: str, column: Column) -> "Dataset":
        self.column(name)
        cols = dict(self._columns)
        cols[name] = column
        return Dataset(self.schema, cols)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        schema = parts[0].schema
        for p in parts[1:]:
            if p.schema != schema:
                raise SchemaMismatch("cannot concatenate datasets with different schemas")
        columns = {}
        for name in schema.names:
            cols = [p.column(name) for p in parts]
            if cols[0].is_coded:
                columns[name] = coded_column(cols[0].role, [v for c in cols for v in c.decoded()])
            else:
                columns[name] = Column(
                    cols[0].role,
                    np.concatenate([c.values for c in cols]),
                    np.concatenate([c.missing for c in cols]),
                )
        return cls(schema, columns)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.schema == other.schema
            and self.n_rows == other.n_rows
            and all(self.column(n).equals(other.column(n)) for n in self.names)
        )

    # output -------------------------------------------------------------

    def to_csv(self, path, delimiter: str = ",") -> None:
        cols = [self.column(n) for n in self.names]
        decoded = [c.decoded() for c in cols]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(self.names)
            for i in range(self.n_rows):
                writer.writerow([_format_cell(col[i]) for col in decoded])

    def __repr__(self):
        return f"Dataset(n_rows={self.n_rows}, columns={self.names})"


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dt.date):
        return value.isoformat()
    return str(value)


def load_csv(
    path,
    schema: Schema,
    delimiter: str = ",",
    missing_tokens: Iterable[str] = DEFAULT_MISSING_TOKENS,
) -> Dataset:
    """Read a headed CSV file into a :class:`Dataset` following ``schema``.

    Header order does not matter and extra columns are ignored. A target
    column whose cells are all ``0``/``1`` loads already binarized.
    """
    missing_tokens = frozenset(missing_tokens)
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required", row=0) from None
        seen = set()
        for name in header:
            if name in seen:
                raise DuplicateColumn(f"{path}: duplicate header column {name!r}")
            seen.add(name)
        for name in schema.names:
            if name not in seen:
                raise MissingColumn(f"{path}: column {name!r} missing from header")
        positions = {name: header.index(name) for name in schema.names}
        raw = {name: [] for name in schema.names}
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(record)}",
                    row=line_no,
                )
            for name, pos in positions.items():
                cell = record[pos]
                raw[name].append(None if cell in missing_tokens else cell)

    columns = {}
    for spec in schema.columns:
        cells = raw[spec.name]
        if not spec.nullable:
            for i, cell in enumerate(cells):
                if cell is None:
                    raise ParseError(
                        f"{path}: row {i + 2}, column {spec.name!r}: missing value in non-nullable column",
                        row=i + 2,
                        column=spec.name,
                    )
        columns[spec.name] = _parse_cells(path, spec, cells)
    return Dataset(schema, columns)


def _parse_cells(path, spec: ColumnSpec, cells: list) -> Column:
    if spec.role == "numeric":
        values = np.full(len(cells), np.nan)
        for i, cell in enumerate(cells):
            if cell is None:
                continue
            try:
                values[i] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {i + 2}, column {spec.name!r}: cannot parse {cell!r} as a number",
                    row=i + 2,
                    column=spec.name,
                ) from None
            if not math.isfinite(values[i]):
                raise ParseError(
                    f"{path}: row {i + 2}, column {spec.name!r}: non-finite number {cell!r}",
                    row=i + 2,
                    column=spec.name,
                )
        return Column("numeric", values, np.array([c is None for c in cells], dtype=bool))
    if spec.role == "date":
        days = np.zeros(len(cells), dtype=np.int64)
        for i, cell in enumerate(cells):
            if cell is None:
                continue
            try:
                days[i] = parse_date(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {i + 2}, column {spec.name!r}: cannot parse {cell!r} as YYYY-MM-DD",
                    row=i + 2,
                    column=spec.name,
                ) from None
        return Column("date", days, np.array([c is None for c in cells], dtype=bool))
    if spec.role == "target" and cells and all(c in ("0", "1") for c in cells):
        return label_column([int(c) for c in cells])
    return coded_column(spec.role, cells)


@dataclass
class ColumnStats:
    missing_fraction: float
    cardinality: int | None = None
    mean: float | None = None
    std: float | None = None
    min: float | None = None
    max: float | None = None
    value_counts: dict = field(default_factory=dict)


def column_stats(ds: Dataset, column: str) -> ColumnStats:
    """Summaries over non-missing cells. ``std`` uses the population convention (divide by n)."""
    col = ds.column(column)
    n_missing = int(col.missing.sum())
    frac = n_missing / ds.n_rows if ds.n_rows else 0.0
    present = ~col.missing
    if col.is_coded:
        codes = col.values[present]
        counts = np.bincount(codes, minlength=len(col.categories)) if codes.size else np.zeros(0, int)
        vc = {col.categories[i]: int(c) for i, c in enumerate(counts) if c > 0}
        return ColumnStats(frac, cardinality=len(vc), value_counts=vc)
    vals = col.values[present].astype(np.float64)
    if col.role == "target":
        vc = {int(k): int(v) for k, v in zip(*np.unique(vals.astype(int), return_counts=True))}
        return ColumnStats(frac, cardinality=len(vc), value_counts=vc,
                           mean=float(vals.mean()) if vals.size else None)
    if not vals.size:
        return ColumnStats(frac, cardinality=0)
    return ColumnStats(
        frac,
        cardinality=int(np.unique(vals).size),
        mean=float(vals.mean()),
        std=float(vals.std()),
        min=float(vals.min()),
        max=float(vals.max()),
    )
