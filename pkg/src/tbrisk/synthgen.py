"""Seeded generator of registry-like treatment-outcome tables with planted signal.

Per row the log-odds of the positive (unfavourable) outcome are::

    intercept + scale_i * (sum of categorical level effects + sum of numeric
    coefficient * standardized value) + noise

where ``scale_i`` is 1 except for rows of the weak cohort (``attenuation``)
and rows after the drift cutoff (``drift.scale``); scaling acts on the
signal's deviation from its population mean. The intercept is found by
bisection so that the expected prevalence matches the configuration.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import Column, ColumnSpec, Dataset, Schema, date_to_days, label_column
from .errors import ConfigError, InfeasiblePrevalence


@dataclass(frozen=True)
class CategoricalSpec:
    name: str
    cardinality: int
    zipf: float = 1.1
    levels: tuple[str, ...] | None = None

    def level_names(self) -> tuple[str, ...]:
        if self.levels is not None:
            return tuple(self.levels)
        width = len(str(self.cardinality))
        return tuple(f"{self.name}_{i:0{width}d}" for i in range(1, self.cardinality + 1))


@dataclass(frozen=True)
class NumericSpec:
    name: str
    mean: float
    std: float
    low: float | None = None
    high: float | None = None
    integer: bool = False


@dataclass
class GenConfig:
    n_rows: int = 20000
    date_range: tuple[str, str] = ("2021-01-01", "2022-12-31")
    prevalence: float = 0.2213
    categorical: list[CategoricalSpec] = field(default_factory=list)
    numeric: list[NumericSpec] = field(default_factory=list)
    # feature -> scalar strength (level effects ~ N(0, s^2) / coefficient per std)
    # or, for categoricals, an explicit {level: effect} map
    signal: dict = field(default_factory=dict)
    noise_std: float = 0.0
    missingness: dict = field(default_factory=dict)
    drift: dict | None = None  # {"cutoff": "YYYY-MM-DD", "scale": float}
    # {"column", "value", "attenuation"} or a list of such cohorts
    weak_cohort: dict | list | None = None
    leak_column: bool = False
    leak_flip_rate: float = 0.05
    positive_label: str = "LFU"
    negative_label: str = "Cured"
    target_name: str = "outcome"
    date_name: str = "notification_date"
    id_name: str = "patient_id"
    leak_name: str = "patient_status"
    seed: int = 0

    def __post_init__(self):
        self.categorical = [c if isinstance(c, CategoricalSpec) else CategoricalSpec(**c) for c in self.categorical]
        self.numeric = [c if isinstance(c, NumericSpec) else NumericSpec(**c) for c in self.numeric]
        if not self.categorical and not self.numeric:
            self.categorical, self.numeric = default_roster()
        if not 0 < self.prevalence < 1:
            raise ConfigError("prevalence must lie in (0, 1)")
        if self.n_rows < 1:
            raise ConfigError("n_rows must be positive")
        for c in self.categorical:
            if c.cardinality < 2:
                raise ConfigError(f"cardinality of {c.name!r} must be >= 2")
            if c.levels is not None and len(c.levels) != c.cardinality:
                raise ConfigError(f"{c.name!r}: {len(c.levels)} levels given for cardinality {c.cardinality}")
        for name, frac in self.missingness.items():
            if not 0 <= frac < 1:
                raise ConfigError(f"missingness of {name!r} must lie in [0, 1)")
        names = {c.name for c in self.categorical} | {c.name for c in self.numeric}
        for name in self.signal:
            if name not in names:
                raise ConfigError(f"signal refers to unknown feature {name!r}")
        for wc in self.weak_cohorts():
            if wc["column"] not in {c.name for c in self.categorical}:
                raise ConfigError("weak_cohort column must be a categorical feature")

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        data = dict(data)
        if "date_range" in data:
            data["date_range"] = tuple(data["date_range"])
        for key in ("categorical",):
            if key in data:
                data[key] = [
                    CategoricalSpec(**{**c, "levels": tuple(c["levels"]) if c.get("levels") else None})
                    for c in data[key]
                ]
        if "numeric" in data:
            data["numeric"] = [NumericSpec(**c) for c in data["numeric"]]
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def weak_cohorts(self) -> list[dict]:
        if self.weak_cohort is None:
            return []
        return [self.weak_cohort] if isinstance(self.weak_cohort, dict) else list(self.weak_cohort)


def default_roster() -> tuple[list[CategoricalSpec], list[NumericSpec]]:
    """Column roster modelled on a merged notification + comorbidity register."""
    categorical = [
        CategoricalSpec("gender", 3, 1.5, ("Male", "Female", "Transgender")),
        CategoricalSpec("diagnosis_facility", 150, 1.1),
        CategoricalSpec("tb_unit", 40, 1.1),
        CategoricalSpec("hiv_status", 3, 1.5, ("Non-Reactive", "Reactive", "Unknown")),
        CategoricalSpec("diabetes_status", 3, 1.2, ("Non-Diabetic", "Diabetic", "Unknown")),
        CategoricalSpec(
            "key_population", 6, 1.3, ("Not Applicable", "Migrant", "Urban Slum", "Tribal", "Prisoner", "Miner")
        ),
        CategoricalSpec("type_of_case", 4, 1.3, ("New", "Retreatment", "Transfer In", "Relapse")),
    ]
    numeric = [
        NumericSpec("age", 40.0, 16.0, low=1, high=95, integer=True),
        NumericSpec("weight", 50.0, 10.0, low=20, high=120, integer=True),
    ]
    return categorical, numeric


def headline_config(n_rows: int = 50000, seed: int = 0, leak_column: bool = False) -> GenConfig:
    """Default roster with signal strong enough for a Bayes-optimal AUC near 0.96."""
    return GenConfig(
        n_rows=n_rows,
        signal={
            "diagnosis_facility": 2.16,
            "tb_unit": 1.8,
            "hiv_status": 1.8,
            "diabetes_status": 1.44,
            "key_population": 2.16,
            "type_of_case": 2.16,
            "gender": 0.9,
            "age": 1.8,
            "weight": -1.8,
        },
        missingness={"weight": 0.04},
        leak_column=leak_column,
        seed=seed,
    )


def fairness_config(n_rows: int = 40000, seed: int = 0) -> GenConfig:
    """Headline roster with two planted weak cohorts.

    ``gender == "Female"`` keeps only 30% of the signal (and gender has no
    main effect), so a calibrated model compresses that cohort's scores and a
    single global cut-off under-selects it. ``key_population == "Tribal"`` has
    its signal inverted, a pattern the booster only learns when the cohort
    carries enough weight.
    """
    cfg = headline_config(n_rows=n_rows, seed=seed)
    cfg.signal.pop("gender")
    cfg.weak_cohort = [
        {"column": "gender", "value": "Female", "attenuation": 0.3},
        {"column": "key_population", "value": "Tribal", "attenuation": -1.0},
    ]
    return cfg


@dataclass
class GroundTruth:
    intercept: float
    coefficients: dict
    log_odds: np.ndarray  # includes noise, drives the labels
    feature_log_odds: np.ndarray  # noise-free, the best achievable score

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": self.coefficients,
            "log_odds": self.log_odds.tolist(),
            "feature_log_odds": self.feature_log_odds.tolist(),
        }


def _zipf_probs(k: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** exponent
    return w / w.sum()


def _first_appearance(codes: np.ndarray, levels: tuple[str, ...]) -> Column:
    present = codes >= 0
    used, first = np.unique(codes[present], return_index=True)
    order = used[np.argsort(first)]
    remap = np.full(len(levels), -1, dtype=np.int32)
    remap[order] = np.arange(len(order), dtype=np.int32)
    new = np.where(present, remap[np.maximum(codes, 0)], -1).astype(np.int32)
    return Column("categorical", new, ~present, tuple(levels[i] for i in order))


def _solve_intercept(rest: np.ndarray, prevalence: float) -> float:
    lo, hi = -40.0, 40.0

    def rate(b):
        return float(expit(b + rest).mean())

    if rate(lo) > prevalence or rate(hi) < prevalence:
        raise InfeasiblePrevalence(f"no intercept in [{lo}, {hi}] reaches prevalence {prevalence}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) < prevalence:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def generate(cfg: GenConfig) -> tuple[Dataset, GroundTruth]:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_rows
    start = date_to_days(dt.date.fromisoformat(cfg.date_range[0]))
    end = date_to_days(dt.date.fromisoformat(cfg.date_range[1]))
    if end < start:
        raise ConfigError("date_range end precedes start")

    codes = {}
    for spec in cfg.categorical:
        codes[spec.name] = rng.choice(spec.cardinality, size=n, p=_zipf_probs(spec.cardinality, spec.zipf)).astype(
            np.int32
        )
    numeric = {}
    for spec in cfg.numeric:
        v = rng.normal(spec.mean, spec.std, n)
        if spec.low is not None or spec.high is not None:
            v = np.clip(v, spec.low, spec.high)
        if spec.integer:
            v = np.round(v)
        numeric[spec.name] = v
    days = rng.integers(start, end + 1, size=n)

    coefficients = {}
    signal = np.zeros(n)
    for spec in cfg.categorical:
        s = cfg.signal.get(spec.name)
        if s is None:
            continue
        levels = spec.level_names()
        if isinstance(s, dict):
            effects = np.array([float(s.get(lv, 0.0)) for lv in levels])
        else:
            effects = rng.normal(0.0, float(s), spec.cardinality)
        coefficients[spec.name] = {lv: float(e) for lv, e in zip(levels, effects)}
        signal += effects[codes[spec.name]]
    for spec in cfg.numeric:
        s = cfg.signal.get(spec.name)
        if s is None:
            continue
        coefficients[spec.name] = float(s)
        signal += float(s) * (numeric[spec.name] - spec.mean) / spec.std

    scale = np.ones(n)
    for wc in cfg.weak_cohorts():
        spec = next(c for c in cfg.categorical if c.name == wc["column"])
        levels = spec.level_names()
        if wc["value"] not in levels:
            raise ConfigError(f"weak cohort value {wc['value']!r} is not a level of {wc['column']!r}")
        scale[codes[wc["column"]] == levels.index(wc["value"])] *= float(wc["attenuation"])
    if cfg.drift:
        cutoff = date_to_days(dt.date.fromisoformat(cfg.drift["cutoff"]))
        scale[days >= cutoff] *= float(cfg.drift.get("scale", 1.0))
    # scale deviations from the average signal, so attenuating or inverting
    # a cohort moves its rows toward / through the population mean risk
    centre = float(signal.mean())
    signal = centre + (signal - centre) * scale
    noise = rng.normal(0.0, cfg.noise_std, n) if cfg.noise_std > 0 else np.zeros(n)

    intercept = _solve_intercept(signal + noise, cfg.prevalence)
    log_odds = intercept + signal + noise
    labels = (rng.random(n) < expit(log_odds)).astype(np.int8)

    specs = [ColumnSpec(cfg.id_name, "identifier", nullable=False)]
    columns = {
        cfg.id_name: Column(
            "identifier", np.arange(n, dtype=np.int32), np.zeros(n, dtype=bool),
            tuple(f"P{i:07d}" for i in range(n)),
        )
    }
    for spec in cfg.categorical:
        specs.append(ColumnSpec(spec.name, "categorical"))
        columns[spec.name] = _first_appearance(codes[spec.name], spec.level_names())
    for spec in cfg.numeric:
        specs.append(ColumnSpec(spec.name, "numeric"))
        columns[spec.name] = Column("numeric", numeric[spec.name], np.zeros(n, dtype=bool))
    if cfg.leak_column:
        flips = rng.random(n) < cfg.leak_flip_rate
        leak = np.where(flips, 1 - labels, labels)
        specs.append(ColumnSpec(cfg.leak_name, "categorical"))
        columns[cfg.leak_name] = _first_appearance(leak.astype(np.int32), ("Open", "Closed"))
    specs.append(ColumnSpec(cfg.date_name, "date", nullable=False))
    columns[cfg.date_name] = Column("date", days.astype(np.int64), np.zeros(n, dtype=bool))
    specs.append(ColumnSpec(cfg.target_name, "target", nullable=False))
    raw_target = np.where(labels == 1, 0, 1).astype(np.int32)
    tc = _first_appearance(raw_target, (cfg.positive_label, cfg.negative_label))
    columns[cfg.target_name] = Column("target", tc.values, tc.missing, tc.categories)

    # missingness is applied after labels are drawn
    for name, frac in sorted(cfg.missingness.items()):
        if name not in columns:
            raise ConfigError(f"missingness refers to unknown column {name!r}")
        if frac <= 0:
            continue
        col = columns[name]
        hit = np.zeros(n, dtype=bool)
        hit[rng.choice(n, size=int(round(frac * n)), replace=False)] = True
        if col.is_coded:
            new_codes = np.where(hit, -1, col.values).astype(np.int32)
            recoded = _first_appearance(new_codes, col.categories)
            columns[name] = Column(col.role, recoded.values, recoded.missing, recoded.categories)
        else:
            values = col.values.astype(np.float64).copy()
            values[hit] = np.nan
            columns[name] = Column(col.role, values, hit)

    truth = GroundTruth(intercept, coefficients, log_odds, intercept + signal)
    return Dataset(Schema(tuple(specs)), columns), truth


def binarized(ds: Dataset, positive_label: str = "LFU") -> Dataset:
    """Shortcut for tests: map the raw target to 0/1 without a full cleaning pass."""
    col = ds.column(ds.schema.target)
    if not col.is_coded:
        return ds
    labels = [1 if v == positive_label else 0 for v in col.decoded()]
    return ds.replace_column(ds.schema.target, label_column(labels))


def write_generated(ds: Dataset, truth: GroundTruth, out_dir) -> dict:
    """Write ``data.csv``, ``schema.yaml`` and ``ground_truth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"data": out / "data.csv", "schema": out / "schema.yaml", "ground_truth": out / "ground_truth.json"}
    ds.to_csv(paths["data"])
    ds.schema.dump(paths["schema"])
    with open(paths["ground_truth"], "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, sort_keys=True)
    return {k: str(v) for k, v in paths.items()}
