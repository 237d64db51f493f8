"""Categorical encoders with strict fit/transform separation.

Every encoder learns, per categorical column, a table mapping category
strings to a real vector plus a fallback vector used for unseen or missing
categories. Numeric columns are passed through, with missing cells filled by
the training mean. Date and identifier columns are not features.

Notation used below: for a category ``c`` with ``n_c`` training rows of which
``n_c_pos`` are positive, ``N`` training rows with ``N_pos`` positives and a
global prior ``p = N_pos / N``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import ConfigError, DegenerateTarget, SchemaMismatch

KINDS = (
    "target",
    "leave_one_out",
    "ordered_target",
    "normalized_count",
    "ordinal",
    "woe",
    "probability_ratio",
    "odds_ratio",
    "log_odds_ratio",
    "similarity_count",
    "minhash",
    "gap",
)
TARGET_AWARE = frozenset(
    {"target", "leave_one_out", "ordered_target", "woe", "probability_ratio", "odds_ratio", "log_odds_ratio", "gap"}
)


@dataclass(frozen=True)
class EncoderKind:
    name: str
    smoothing: float = 20.0  # m, for target and gap
    prior_weight: float = 1.0  # a, for ordered_target
    ngram: int = 3
    signature_length: int = 8
    epsilon: float = 0.5  # Laplace count for ratio / log encoders
    seed: int = 0
    out_of_fold: int = 0  # k >= 2 enables k-fold train-time encoding

    def __post_init__(self):
        if self.name not in KINDS:
            raise ConfigError(f"unknown encoder kind {self.name!r}")
        if self.smoothing < 0:
            raise ConfigError("smoothing must be >= 0")
        if self.prior_weight <= 0:
            raise ConfigError("prior_weight must be > 0")
        if self.ngram < 1 or self.signature_length < 1:
            raise ConfigError("ngram and signature_length must be >= 1")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.out_of_fold == 1 or self.out_of_fold < 0:
            raise ConfigError("out_of_fold must be 0 (off) or >= 2")

    @property
    def target_aware(self) -> bool:
        return self.name in TARGET_AWARE

    @property
    def width(self) -> int:
        return self.signature_length if self.name == "minhash" else 1

    @classmethod
    def from_dict(cls, data) -> "EncoderKind":
        if isinstance(data, str):
            return cls(data)
        return cls(**data)


class Encoded(NamedTuple):
    X: np.ndarray
    names: list[str]


@dataclass
class ColumnTable:
    values: dict[str, tuple[float, ...]]
    fallback: tuple[float, ...]
    counts: dict[str, tuple[int, int]] = field(default_factory=dict)


@dataclass
class FittedEncoder:
    kind: EncoderKind
    categorical: list[str]
    numeric: list[str]
    tables: dict[str, ColumnTable]
    numeric_means: dict[str, float]
    target_prior: float
    fitted_on: int

    @property
    def feature_names(self) -> list[str]:
        names = []
        for col in self.categorical:
            if self.kind.width == 1:
                names.append(col)
            else:
                names.extend(f"{col}_{i}" for i in range(self.kind.width))
        return names + list(self.numeric)

    @property
    def dimensionality(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        return {
            "kind": asdict(self.kind),
            "categorical": self.categorical,
            "numeric": self.numeric,
            "tables": {
                col: {
                    "values": {k: list(v) for k, v in t.values.items()},
                    "fallback": list(t.fallback),
                    "counts": {k: list(v) for k, v in t.counts.items()},
                }
                for col, t in self.tables.items()
            },
            "numeric_means": self.numeric_means,
            "target_prior": self.target_prior,
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedEncoder":
        return cls(
            kind=EncoderKind(**data["kind"]),
            categorical=list(data["categorical"]),
            numeric=list(data["numeric"]),
            tables={
                col: ColumnTable(
                    values={k: tuple(v) for k, v in t["values"].items()},
                    fallback=tuple(t["fallback"]),
                    counts={k: tuple(v) for k, v in t.get("counts", {}).items()},
                )
                for col, t in data["tables"].items()
            },
            numeric_means={k: float(v) for k, v in data["numeric_means"].items()},
            target_prior=float(data["target_prior"]),
            fitted_on=int(data["fitted_on"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FittedEncoder":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# string helpers


def ngrams(text: str, n: int = 3) -> frozenset[str]:
    padded = f" {text} "
    if len(padded) <= n:
        return frozenset({padded})
    return frozenset(padded[i : i + n] for i in range(len(padded) - n + 1))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def _gram_hash(gram: str, index: int, seed: int) -> float:
    digest = hashlib.blake2b(f"{seed}:{index}:{gram}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def minhash_signature(text: str, length: int = 8, n: int = 3, seed: int = 0) -> tuple[float, ...]:
    grams = ngrams(text, n)
    return tuple(min(_gram_hash(g, i, seed) for g in grams) for i in range(length))


# --------------------------------------------------------------------------
# fitting


def _category_counts(ds: Dataset, column: str, y: np.ndarray | None):
    col = ds.column(column)
    present = ~col.missing
    codes = col.values[present]
    k = len(col.categories)
    n = np.bincount(codes, minlength=k)
    pos = np.bincount(codes, weights=y[present], minlength=k) if y is not None else np.zeros(k)
    rows = [(col.categories[i], int(n[i]), int(round(pos[i]))) for i in range(k) if n[i] > 0]
    rows.sort(key=lambda r: r[0])
    return rows


def _column_table(kind: EncoderKind, rows, N: int, N_pos: int) -> ColumnTable:
    p = N_pos / N if N else 0.0
    eps = kind.epsilon
    K = len(rows)
    name = kind.name
    values: dict[str, tuple[float, ...]] = {}
    counts = {c: (n, pos) for c, n, pos in rows}

    if name == "similarity_count":
        grams = {c: ngrams(c, kind.ngram) for c, _, _ in rows}
        for c, _, _ in rows:
            values[c] = (_similarity_value(grams[c], rows, grams, N),)
        return ColumnTable(values, (0.0,), counts)
    if name == "minhash":
        for c, _, _ in rows:
            values[c] = minhash_signature(c, kind.signature_length, kind.ngram, kind.seed)
        return ColumnTable(values, (1.0,) * kind.signature_length, counts)
    if name == "ordinal":
        for i, (c, _, _) in enumerate(rows):
            values[c] = (float(i),)
        return ColumnTable(values, (float(K),), counts)

    global_odds = (N_pos + eps) / (N - N_pos + eps) if (N - N_pos + eps) > 0 else 1.0
    for c, n, pos in rows:
        if name == "target":
            v = (pos + kind.smoothing * p) / (n + kind.smoothing)
        elif name == "leave_one_out":
            v = pos / n
        elif name == "ordered_target":
            v = (pos + kind.prior_weight * p) / (n + kind.prior_weight)
        elif name == "normalized_count":
            v = n / N
        elif name == "woe":
            v = woe_value(n - pos, N - N_pos, pos, N_pos, K, eps)
        elif name == "probability_ratio":
            pc = (pos + eps) / (n + 2 * eps)
            v = pc / (1 - pc)
        elif name in ("odds_ratio", "log_odds_ratio"):
            odds = (pos + eps) / (n - pos + eps)
            v = odds / global_odds
            if name == "log_odds_ratio":
                v = math.log(v)
        elif name == "gap":
            v = (pos + kind.smoothing * p) / (n + kind.smoothing) - p
        else:  # pragma: no cover
            raise ConfigError(name)
        values[c] = (float(v),)

    fallback = {
        "target": p,
        "leave_one_out": p,
        "ordered_target": p,
        "normalized_count": 0.0,
        "woe": 0.0,
        "probability_ratio": global_odds,
        "odds_ratio": 1.0,
        "log_odds_ratio": 0.0,
        "gap": 0.0,
    }[name]
    return ColumnTable(values, (float(fallback),), counts)


def woe_value(non_events: float, total_non_events: float, events: float, total_events: float,
              n_categories: int, epsilon: float = 0.5) -> float:
    """ln(share of non-events / share of events), Laplace-smoothed by ``epsilon``."""
    share_non = (non_events + epsilon) / (total_non_events + n_categories * epsilon)
    share_ev = (events + epsilon) / (total_events + n_categories * epsilon)
    return math.log(share_non / share_ev)


def _similarity_value(g: frozenset, rows, grams, N: int) -> float:
    if not N:
        return 0.0
    return sum(jaccard(g, grams[c]) * n for c, n, _ in rows) / N


def _feature_columns(ds: Dataset) -> tuple[list[str], list[str]]:
    cats = ds.schema.by_role("categorical")
    nums = ds.schema.by_role("numeric")
    return cats, nums


def fit_encoder(kind: EncoderKind | str, train: Dataset) -> FittedEncoder:
    """Learn per-column tables from ``train`` (the target must be binarized)."""
    if isinstance(kind, str):
        kind = EncoderKind(kind)
    y = train.labels.astype(np.float64)
    N = train.n_rows
    N_pos = int(y.sum())
    if kind.target_aware and (N_pos == 0 or N_pos == N):
        raise DegenerateTarget(
            f"{kind.name} encoding needs both classes in train ({N_pos} positives of {N})"
        )
    cats, nums = _feature_columns(train)
    tables = {
        col: _column_table(kind, _category_counts(train, col, y), N, N_pos) for col in cats
    }
    means = {}
    for col in nums:
        c = train.column(col)
        present = c.values[~c.missing]
        means[col] = float(present.mean()) if present.size else 0.0
    return FittedEncoder(
        kind=kind,
        categorical=cats,
        numeric=nums,
        tables=tables,
        numeric_means=means,
        target_prior=N_pos / N if N else 0.0,
        fitted_on=N,
    )


# --------------------------------------------------------------------------
# transforming


def _lookup(enc: FittedEncoder, column: str, category: str) -> tuple[float, ...]:
    table = enc.tables[column]
    hit = table.values.get(category)
    if hit is not None:
        return hit
    kind = enc.kind
    if kind.name == "similarity_count":
        rows = [(c, n, pos) for c, (n, pos) in table.counts.items()]
        grams = {c: ngrams(c, kind.ngram) for c, _, _ in rows}
        return (_similarity_value(ngrams(category, kind.ngram), rows, grams, enc.fitted_on),)
    if kind.name == "minhash":
        return minhash_signature(category, kind.signature_length, kind.ngram, kind.seed)
    return table.fallback


def _check_schema(enc: FittedEncoder, ds: Dataset) -> None:
    for col in enc.categorical:
        if col not in ds or ds.schema.role(col) != "categorical":
            raise SchemaMismatch(f"dataset lacks categorical column {col!r} seen at fit time")
    for col in enc.numeric:
        if col not in ds or ds.schema.role(col) != "numeric":
            raise SchemaMismatch(f"dataset lacks numeric column {col!r} seen at fit time")


def _encode_column(enc: FittedEncoder, ds: Dataset, column: str) -> np.ndarray:
    col = ds.column(column)
    width = enc.kind.width
    lut = np.empty((len(col.categories) + 1, width))
    for i, cat in enumerate(col.categories):
        lut[i] = _lookup(enc, column, cat)
    lut[-1] = enc.tables[column].fallback
    # code -1 (missing) indexes the fallback row
    return lut[col.values]


def transform(enc: FittedEncoder, ds: Dataset) -> Encoded:
    """Encode ``ds`` with frozen tables; never mutates ``enc``."""
    _check_schema(enc, ds)
    blocks = [_encode_column(enc, ds, col) for col in enc.categorical]
    for col in enc.numeric:
        c = ds.column(col)
        values = np.where(c.missing, enc.numeric_means[col], c.values)
        blocks.append(values.reshape(-1, 1))
    X = np.hstack(blocks) if blocks else np.zeros((ds.n_rows, 0))
    return Encoded(X.astype(np.float64, copy=False), enc.feature_names)


def fit_transform(kind: EncoderKind | str, train: Dataset) -> tuple[FittedEncoder, Encoded]:
    """Fit on ``train`` and return its train-time encoding.

    Train-time values differ from :func:`transform` for ``leave_one_out``
    (each row's own label is excluded), ``ordered_target`` (each row only
    sees rows before it in a seeded permutation) and, when ``out_of_fold``
    is set, for every target-aware kind (each fold is encoded by tables fit
    on the other folds).
    """
    if isinstance(kind, str):
        kind = EncoderKind(kind)
    enc = fit_encoder(kind, train)
    encoded = transform(enc, train)
    if not kind.target_aware:
        return enc, encoded
    X = encoded.X.copy()
    y = train.labels.astype(np.float64)
    if kind.out_of_fold >= 2:
        folds = np.array_split(np.random.default_rng(kind.seed).permutation(train.n_rows), kind.out_of_fold)
        for fold in folds:
            rest = np.setdiff1d(np.arange(train.n_rows), fold)
            sub = train.take(rest)
            if sub.labels.min() == sub.labels.max():
                continue  # fold complement is single-class; keep full-fit values
            part_enc = fit_encoder(kind, sub)
            X[np.sort(fold)] = transform(part_enc, train.take(np.sort(fold))).X
        return enc, Encoded(X, encoded.names)
    if kind.name == "leave_one_out":
        for j, col in enumerate(enc.categorical):
            X[:, j] = _loo_column(train.column(col), y, enc.target_prior)
    elif kind.name == "ordered_target":
        perm = np.random.default_rng(kind.seed).permutation(train.n_rows)
        for j, col in enumerate(enc.categorical):
            X[:, j] = _ordered_column(train.column(col), y, perm, enc.target_prior, kind.prior_weight)
    return enc, Encoded(X, encoded.names)


def _loo_column(col, y: np.ndarray, prior: float) -> np.ndarray:
    out = np.full(len(y), prior)
    present = ~col.missing
    codes = col.values
    k = len(col.categories)
    n = np.bincount(codes[present], minlength=k).astype(np.float64)
    pos = np.bincount(codes[present], weights=y[present], minlength=k)
    idx = np.flatnonzero(present)
    nc = n[codes[idx]]
    multi = nc > 1
    out[idx[multi]] = (pos[codes[idx[multi]]] - y[idx[multi]]) / (nc[multi] - 1)
    return out


def _ordered_column(col, y: np.ndarray, perm: np.ndarray, prior: float, a: float) -> np.ndarray:
    out = np.full(len(y), prior)
    present = ~col.missing
    order = perm[present[perm]]  # permutation restricted to rows with a category
    codes = col.values[order]
    labels = y[order]
    by_code = np.argsort(codes, kind="stable")
    sorted_codes = codes[by_code]
    sorted_y = labels[by_code]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_codes)) + 1]
    group_start = np.repeat(starts, np.diff(np.r_[starts, len(sorted_codes)]))
    cum = np.cumsum(sorted_y)
    before_sum = cum - sorted_y - np.where(group_start > 0, cum[group_start - 1], 0.0)
    before_cnt = np.arange(len(sorted_codes)) - group_start
    vals = (before_sum + a * prior) / (before_cnt + a)
    out[order[by_code]] = vals
    return out


# --------------------------------------------------------------------------
# information value


@dataclass
class IVRow:
    column: str
    information_value: float
    breakdown: list[dict]


def iv_rank(train: Dataset, epsilon: float = 0.5) -> list[IVRow]:
    """Rank categorical columns by information value, descending (ties by name).

    Each category contributes ``(share_non_events - share_events) * WoE``
    where shares are Laplace-smoothed by ``epsilon``.
    """
    y = train.labels.astype(np.float64)
    N = train.n_rows
    N_pos = int(y.sum())
    if N_pos == 0 or N_pos == N:
        raise DegenerateTarget(f"information value needs both classes ({N_pos} positives of {N})")
    table = []
    for col in train.schema.by_role("categorical"):
        rows = _category_counts(train, col, y)
        K = len(rows)
        breakdown = []
        for cat, n, pos in rows:
            share_non = (n - pos + epsilon) / (N - N_pos + K * epsilon)
            share_ev = (pos + epsilon) / (N_pos + K * epsilon)
            woe = math.log(share_non / share_ev)
            breakdown.append(
                {"category": cat, "woe": woe, "contribution": (share_non - share_ev) * woe}
            )
        iv = math.fsum(b["contribution"] for b in breakdown)
        table.append(IVRow(col, iv, breakdown))
    table.sort(key=lambda r: (-r.information_value, r.column))
    return table
