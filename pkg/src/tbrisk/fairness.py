"""Cohort-wise evaluation, cohort data expansion and post-hoc score balancing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Column, ColumnSpec, Dataset
from .errors import ConfigError, TBRiskError, UnknownCohort
from .metrics import EvalReport, classification_report, ranking, selected_count

AGE_EDGES = (15, 30, 45, 60)


def age_bands(values, edges=AGE_EDGES) -> list[str | None]:
    """Label ages by band: with the default edges 0-14, 15-29, 30-44, 45-59, 60+."""
    labels = [f"0-{edges[0] - 1}"]
    labels += [f"{lo}-{hi - 1}" for lo, hi in zip(edges[:-1], edges[1:])]
    labels.append(f"{edges[-1]}+")
    out = []
    for v in values:
        if v is None or (isinstance(v, float) and math.isnan(v)):
            out.append(None)
        else:
            out.append(labels[int(np.searchsorted(edges, v, side="right"))])
    return out


def add_age_band(ds: Dataset, column: str = "age", name: str = "age_band", edges=AGE_EDGES) -> Dataset:
    """Append a categorical age-band column derived from a numeric age column."""
    col = ds.column(column)
    values = [None if m else float(v) for v, m in zip(col.values, col.missing)]
    bands = age_bands(values, edges)
    cats = tuple(dict.fromkeys(b for b in bands if b is not None))
    index = {c: i for i, c in enumerate(cats)}
    codes = np.array([index[b] if b is not None else -1 for b in bands], dtype=np.int32)
    new = Column("categorical", codes, codes < 0, cats)
    specs = list(ds.schema.columns) + [ColumnSpec(name, "categorical")]
    columns = {n: ds.column(n) for n in ds.schema.names}
    columns[name] = new
    return Dataset(type(ds.schema)(tuple(specs)), columns)


@dataclass
class CohortEntry:
    value: str
    n: int
    positives: int
    recall_at_20: float | None
    av_recall: float | None
    report: EvalReport | None = None
    flag: str | None = None  # reason ranking metrics are absent

    def to_dict(self) -> dict:
        d = {
            "value": self.value,
            "n": self.n,
            "positives": self.positives,
            "recall_at_20": self.recall_at_20,
            "av_recall": self.av_recall,
            "flag": self.flag,
        }
        if self.report is not None:
            d["report"] = self.report.summary()
        return d


@dataclass
class CohortReport:
    column: str
    mode: str
    entries: list[CohortEntry]
    floor: float = 0.7
    k: float = 20

    @property
    def scored(self) -> list[CohortEntry]:
        return [e for e in self.entries if e.recall_at_20 is not None]

    @property
    def disparity(self) -> float | None:
        """max - min cohort Recall@k over cohorts that have positives."""
        vals = [e.recall_at_20 for e in self.scored]
        return max(vals) - min(vals) if vals else None

    @property
    def low_cohorts(self) -> list[str]:
        return [e.value for e in self.scored if e.recall_at_20 < self.floor]

    @property
    def mean_below_floor(self) -> float | None:
        vals = [e.recall_at_20 for e in self.scored if e.recall_at_20 < self.floor]
        return math.fsum(vals) / len(vals) if vals else None

    def entry(self, value) -> CohortEntry:
        for e in self.entries:
            if e.value == value:
                return e
        raise UnknownCohort(f"no cohort {value!r} in {self.column!r}")

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "mode": self.mode,
            "k": self.k,
            "floor": self.floor,
            "disparity": self.disparity,
            "mean_below_floor": self.mean_below_floor,
            "low_cohorts": self.low_cohorts,
            "cohorts": [e.to_dict() for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cohort_column", "cohort_value", "n", "recall_at_20", "av_recall"])
            for e in self.entries:
                w.writerow([
                    self.column,
                    e.value,
                    e.n,
                    "" if e.recall_at_20 is None else repr(e.recall_at_20),
                    "" if e.av_recall is None else repr(e.av_recall),
                ])


def _cohort_index(cohorts) -> dict:
    groups: dict = {}
    for i, c in enumerate(cohorts):
        groups.setdefault("" if c is None else str(c), []).append(i)
    return {k: np.array(v, dtype=np.int64) for k, v in sorted(groups.items())}


def _global_recall(selected_rank, y, rows, n, k):
    # share of this cohort's positives inside the global top k%
    pos = rows[y[rows] == 1]
    return float(np.count_nonzero(selected_rank[pos] < selected_count(k, n))) / len(pos)


def cohort_report(
    scores, labels, cohorts, column: str = "cohort", mode: str = "within", k: float = 20, floor: float = 0.7
) -> CohortReport:
    """Per-cohort metrics.

    ``mode="within"`` ranks each cohort on its own (every metric is that of
    the cohort's own :func:`classification_report`). ``mode="global"``
    keeps the global ranking: a cohort's Recall@k is the share of its
    positives that land in the global top k%, which is what a single
    programme-wide screening cut-off delivers to that cohort.
    Cohorts without positives are flagged, not fatal.
    """
    if mode not in ("within", "global"):
        raise ConfigError(f"unknown cohort mode {mode!r}")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if len(s) != len(y) or len(cohorts) != len(s):
        raise ConfigError("scores, labels and cohorts must be row-aligned")
    n = len(s)
    rank_of = np.empty(n, dtype=np.int64)
    rank_of[ranking(s)] = np.arange(n)
    entries = []
    for value, rows in _cohort_index(cohorts).items():
        ys = y[rows]
        pos = int(ys.sum())
        if pos == 0:
            entries.append(CohortEntry(value, len(rows), 0, None, None, None, "no positives"))
            continue
        try:
            report = classification_report(s[rows], ys)
        except TBRiskError as exc:  # pragma: no cover - guarded by pos > 0
            entries.append(CohortEntry(value, len(rows), pos, None, None, None, str(exc)))
            continue
        if mode == "within":
            r20 = report.recall_at[int(k)] if float(k).is_integer() else None
            av = report.av_recall_10_40
        else:
            r20 = _global_recall(rank_of, y, rows, n, k)
            av = math.fsum(_global_recall(rank_of, y, rows, n, j) for j in range(10, 41)) / 31
        entries.append(CohortEntry(value, len(rows), pos, r20, av, report))
    return CohortReport(column, mode, entries, floor, k)


def posthoc_balance(scores, cohorts) -> np.ndarray:
    """Replace each score by its within-cohort fractional rank (rank - 0.5) / size.

    Ranks run 1..size in ascending score order. Equal scores get distinct
    ranks with the lower row index ranked higher, so the within-cohort order
    under the global tie rule (score descending, row index ascending) is
    exactly preserved.
    """
    s = np.asarray(scores, dtype=np.float64)
    if len(cohorts) != len(s):
        raise ConfigError("scores and cohorts must be row-aligned")
    out = np.empty(len(s))
    for rows in _cohort_index(cohorts).values():
        # ascending by score, descending by row index among ties
        order = np.lexsort((-rows, s[rows]))
        ranks = np.empty(len(rows))
        ranks[order] = np.arange(1, len(rows) + 1)
        out[rows] = (ranks - 0.5) / len(rows)
    return out


def expand_cohort_data(train: Dataset, low_cohorts, factor: float = 2.0, seed: int = 0) -> Dataset:
    """Duplicate rows of under-performing cohorts.

    ``low_cohorts`` is a list of ``(column, value)`` pairs. Each cohort's rows
    are topped up to ``ceil(factor * original)`` by seeded sampling with
    replacement; added rows are appended after the original table, so
    other rows keep their content and multiplicity.
    """
    if factor < 1:
        raise ConfigError("expansion factor must be >= 1")
    rng = np.random.default_rng(seed)
    extra = []
    for column, value in low_cohorts:
        if column not in train:
            raise UnknownCohort(f"cohort column {column!r} is not in the dataset")
        cells = train.strings(column)
        rows = np.array([i for i, c in enumerate(cells) if c == value], dtype=np.int64)
        if rows.size == 0:
            raise UnknownCohort(f"cohort {column}={value!r} has no rows")
        n_new = math.ceil(factor * len(rows) - 1e-9) - len(rows)
        if n_new > 0:
            extra.append(rows[rng.integers(0, len(rows), n_new)])
    if not extra:
        return train
    return train.take(np.concatenate([np.arange(train.n_rows)] + extra))


@dataclass
class BalanceComparison:
    before: CohortReport
    after: CohortReport
    extra: dict = field(default_factory=dict)

    @property
    def spread_reduction(self) -> float | None:
        b, a = self.before.disparity, self.after.disparity
        if b is None or a is None or b == 0:
            return None
        return 1.0 - a / b

    def to_dict(self) -> dict:
        return {
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
            "spread_reduction": self.spread_reduction,
            **self.extra,
        }


def compare_balance(scores, labels, cohorts, column: str = "cohort", k: float = 20) -> BalanceComparison:
    """Global-cutoff cohort Recall@k before and after :func:`posthoc_balance`."""
    before = cohort_report(scores, labels, cohorts, column, mode="global", k=k)
    after = cohort_report(posthoc_balance(scores, cohorts), labels, cohorts, column, mode="global", k=k)
    return BalanceComparison(before, after)
