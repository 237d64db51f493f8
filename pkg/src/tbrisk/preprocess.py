"""Registry cleaning and chronological splitting."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import yaml

from .data import Column, Dataset, coded_column, column_stats, label_column
from .errors import ConfigError, EmptyPartition, MissingDates, TargetUnmappable, UnknownColumn

STRATEGIES = ("copy_from_column", "mean", "mode", "constant", "cross_verify")


@dataclass(frozen=True)
class Replacement:
    column: str
    from_value: str
    to_value: str | None  # None turns the cell into a missing value
    strict: bool = True

    def matches(self, cell: str) -> bool:
        if self.strict:
            return cell == self.from_value
        return cell.strip().casefold() == self.from_value.strip().casefold()


@dataclass(frozen=True)
class ImputeRule:
    column: str
    strategy: str
    source: str | None = None
    value: object = None
    source_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown imputation strategy {self.strategy!r}")
        if self.strategy == "copy_from_column" and not self.source:
            raise ConfigError("copy_from_column needs a source column")
        if self.strategy == "cross_verify" and not self.source_columns:
            raise ConfigError("cross_verify needs source_columns")


@dataclass
class CleaningPlan:
    sparse_threshold: float = 0.15
    replacements: list[Replacement] = field(default_factory=list)
    impute_rules: list[ImputeRule] = field(default_factory=list)
    target_positive_values: frozenset = frozenset({"1"})
    target_negative_values: frozenset | None = None

    def __post_init__(self):
        if not 0 < self.sparse_threshold < 1:
            raise ConfigError("sparse_threshold must lie in (0, 1)")
        self.target_positive_values = frozenset(self.target_positive_values)
        if self.target_negative_values is not None:
            self.target_negative_values = frozenset(self.target_negative_values)

    @classmethod
    def from_dict(cls, data: dict) -> "CleaningPlan":
        data = dict(data or {})
        reps = [
            Replacement(r["column"], str(r["from"]), None if r.get("to") is None else str(r["to"]),
                        bool(r.get("strict", True)))
            for r in data.get("replacements", [])
        ]
        rules = [
            ImputeRule(
                r["column"],
                r["strategy"],
                source=r.get("source"),
                value=r.get("value"),
                source_columns=tuple(r.get("source_columns", ())),
            )
            for r in data.get("impute", [])
        ]
        neg = data.get("target_negative_values")
        return cls(
            sparse_threshold=float(data.get("sparse_threshold", 0.15)),
            replacements=reps,
            impute_rules=rules,
            target_positive_values=frozenset(str(v) for v in data.get("target_positive_values", ["1"])),
            target_negative_values=None if neg is None else frozenset(str(v) for v in neg),
        )

    @classmethod
    def load(cls, path) -> "CleaningPlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


@dataclass
class CleaningLog:
    entries: list[dict] = field(default_factory=list)

    def add(self, action: str, column: str, affected_rows: int) -> None:
        self.entries.append({"action": action, "column": column, "affected_rows": int(affected_rows)})

    def to_json(self) -> str:
        return json.dumps(self.entries, indent=2)

    def actions(self, action: str) -> list[str]:
        return [e["column"] for e in self.entries if e["action"] == action]


def clean(ds: Dataset, plan: CleaningPlan) -> tuple[Dataset, CleaningLog]:
    """Apply replacements, the sparse-column rule, imputation and target binarization.

    Steps run in that order. Columns (other than the target) whose missing
    fraction exceeds ``plan.sparse_threshold`` after replacement are dropped.
    Imputation rules only fill cells that are still missing when they run.
    """
    for ref in _referenced_columns(plan):
        if ref not in ds:
            raise UnknownColumn(f"cleaning plan references unknown column {ref!r}")
    log = CleaningLog()
    target = ds.schema.target

    for rep in plan.replacements:
        col = ds.column(rep.column)
        if not col.is_coded:
            raise ConfigError(f"replacements apply to categorical columns, not {rep.column!r}")
        cells = col.decoded()
        hits = 0
        for i, cell in enumerate(cells):
            if cell is not None and rep.matches(cell):
                cells[i] = rep.to_value
                hits += 1
        if hits:
            ds = ds.replace_column(rep.column, coded_column(col.role, cells))
        log.add("strict_replace" if rep.strict else "replace", rep.column, hits)

    sparse = [
        name
        for name in ds.names
        if name != target and column_stats(ds, name).missing_fraction > plan.sparse_threshold
    ]
    for name in sparse:
        log.add("drop_sparse_column", name, int(ds.column(name).missing.sum()))
    if sparse:
        ds = ds.drop_columns(sparse)

    for rule in plan.impute_rules:
        if rule.column not in ds:
            continue  # dropped by the sparse rule
        ds, filled = _impute(ds, rule)
        log.add(f"impute_{rule.strategy}", rule.column, filled)

    return _binarize_target(ds, plan, log), log


def _referenced_columns(plan: CleaningPlan) -> set[str]:
    refs = {r.column for r in plan.replacements}
    for rule in plan.impute_rules:
        refs.add(rule.column)
        if rule.source:
            refs.add(rule.source)
        refs.update(rule.source_columns)
    return refs


def _impute(ds: Dataset, rule: ImputeRule) -> tuple[Dataset, int]:
    col = ds.column(rule.column)
    todo = col.missing.copy()
    if not todo.any():
        return ds, 0

    if rule.strategy == "copy_from_column":
        if rule.source not in ds:
            return ds, 0
        src = ds.column(rule.source)
        if src.is_coded != col.is_coded:
            raise ConfigError(f"cannot copy {rule.source!r} into {rule.column!r}: incompatible roles")
        usable = todo & ~src.missing
        if col.is_coded:
            cells = col.decoded()
            src_cells = src.decoded()
            for i in np.flatnonzero(usable):
                cells[i] = src_cells[i]
            new = coded_column(col.role, cells)
        else:
            values = col.values.copy()
            values[usable] = src.values[usable]
            new = Column(col.role, values, col.missing & ~usable)
        return ds.replace_column(rule.column, new), int(usable.sum())

    if rule.strategy == "cross_verify":
        return _cross_verify(ds, rule)

    if rule.strategy == "mean":
        if col.is_coded or col.role != "numeric":
            raise ConfigError(f"mean imputation needs a numeric column, got {rule.column!r}")
        if todo.all():
            return ds, 0
        fill = float(col.values[~col.missing].mean())
    elif rule.strategy == "mode":
        present = [v for v in col.decoded() if v is not None]
        if not present:
            return ds, 0
        counts = Counter(present)
        top = max(counts.values())
        fill = min(v for v, c in counts.items() if c == top)
    else:
        fill = rule.value

    if col.is_coded:
        cells = col.decoded()
        for i in np.flatnonzero(todo):
            cells[i] = str(fill)
        new = coded_column(col.role, cells)
    else:
        values = col.values.copy()
        values[todo] = fill
        new = Column(col.role, values, np.zeros(len(values), dtype=bool))
    return ds.replace_column(rule.column, new), int(todo.sum())


def _cross_verify(ds: Dataset, rule: ImputeRule) -> tuple[Dataset, int]:
    """Fill a missing cell only when every complete row sharing its source
    values agrees on a single value for the column."""
    col = ds.column(rule.column)
    sources = [c for c in rule.source_columns if c in ds]
    if not sources:
        return ds, 0
    src_cells = list(zip(*(ds.column(s).decoded() for s in sources)))
    cells = col.decoded()
    seen: dict[tuple, set] = {}
    for key, cell in zip(src_cells, cells):
        if cell is not None and None not in key:
            seen.setdefault(key, set()).add(cell)
    filled = 0
    for i, cell in enumerate(cells):
        if cell is None and None not in src_cells[i]:
            options = seen.get(src_cells[i])
            if options is not None and len(options) == 1:
                cells[i] = next(iter(options))
                filled += 1
    if not filled:
        return ds, 0
    if col.is_coded:
        new = coded_column(col.role, cells)
    else:
        values = np.array([np.nan if c is None else c for c in cells], dtype=col.values.dtype)
        new = Column(col.role, values, np.array([c is None for c in cells]))
    return ds.replace_column(rule.column, new), filled


def _binarize_target(ds: Dataset, plan: CleaningPlan, log: CleaningLog) -> Dataset:
    target = ds.schema.target
    col = ds.column(target)
    if not col.is_coded:
        return ds
    if col.missing.any():
        log.add("drop_missing_target", target, int(col.missing.sum()))
        ds = ds.take(np.flatnonzero(~col.missing))
        col = ds.column(target)
    labels = np.zeros(ds.n_rows, dtype=np.int8)
    positive = plan.target_positive_values
    negative = plan.target_negative_values
    for i, raw in enumerate(col.decoded()):
        if raw in positive:
            labels[i] = 1
        elif negative is not None and raw not in negative:
            raise TargetUnmappable(f"target value {raw!r} is in neither the positive nor negative set")
    log.add("binarize_target", target, ds.n_rows)
    return ds.replace_column(target, label_column(labels))


# --------------------------------------------------------------------------
# chronological split


@dataclass
class SplitBundle:
    train: Dataset
    validation: Dataset
    test: Dataset
    passive: Dataset
    boundary_dates: tuple[int, int, int, int]  # train_end, val_end, test_end, passive_start
    date_column: str = ""

    @property
    def modeling(self) -> Dataset:
        return Dataset.concat([self.train, self.validation, self.test])

    def sizes(self) -> dict:
        return {
            "train": self.train.n_rows,
            "validation": self.validation.n_rows,
            "test": self.test.n_rows,
            "passive": self.passive.n_rows,
        }


def _cut(fraction: float, m: int) -> int:
    # guard against 0.7 * m landing a hair under an integer
    return math.floor(fraction * m + 1e-9)


def split_sizes(m: int, ratios: Sequence[float] = (0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    first = _cut(ratios[0], m)
    second = _cut(ratios[0] + ratios[1], m)
    return first, second - first, m - second


def temporal_split(
    ds: Dataset,
    date_column: str,
    passive_window_days: int = 183,
    ratios: Sequence[float] = (0.70, 0.15, 0.15),
) -> SplitBundle:
    """Hold out the most recent window as the passive split, then cut the
    remaining rows chronologically into train / validation / test."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if ds.schema.role(date_column) != "date":
        raise ConfigError(f"column {date_column!r} does not have the date role")
    col = ds.column(date_column)
    if col.missing.any():
        raise MissingDates(f"{int(col.missing.sum())} rows lack a value in {date_column!r}")
    if ds.n_rows == 0:
        raise EmptyPartition("dataset is empty")
    dates = col.values
    passive_start = int(dates.max()) - int(passive_window_days)
    is_passive = dates >= passive_start
    passive_idx = np.flatnonzero(is_passive)
    model_idx = np.flatnonzero(~is_passive)
    model_idx = model_idx[np.argsort(dates[model_idx], kind="stable")]
    n_train, n_val, n_test = split_sizes(len(model_idx), ratios)
    parts = {
        "train": model_idx[:n_train],
        "validation": model_idx[n_train : n_train + n_val],
        "test": model_idx[n_train + n_val :],
        "passive": passive_idx,
    }
    for name, idx in parts.items():
        if len(idx) == 0:
            raise EmptyPartition(f"{name} partition would be empty")
    bounds = (
        int(dates[parts["train"]].max()),
        int(dates[parts["validation"]].max()),
        int(dates[parts["test"]].max()),
        int(dates[parts["passive"]].min()),
    )
    return SplitBundle(
        train=ds.take(parts["train"]),
        validation=ds.take(parts["validation"]),
        test=ds.take(parts["test"]),
        passive=ds.take(parts["passive"]),
        boundary_dates=bounds,
        date_column=date_column,
    )
