import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbrisk.data import Dataset, date_to_days
from tbrisk.errors import ConfigError, EmptyPartition, MissingDates, TargetUnmappable, UnknownColumn
from tbrisk.preprocess import (
    CleaningPlan,
    ImputeRule,
    Replacement,
    clean,
    split_sizes,
    temporal_split,
)

from conftest import make_schema

REG = make_schema(
    ("Age", "numeric"), ("Weight", "numeric"), ("hiv", "categorical"), ("unit", "categorical"), ("outcome", "target")
)


def registry(n=25, weight_missing=(1,), sparse_missing=0):
    rng = np.random.default_rng(0)
    age = [float(a) for a in rng.integers(18, 70, n)]
    weight = [None if i in weight_missing else float(w) for i, w in enumerate(rng.integers(35, 80, n))]
    hiv = [None if i < sparse_missing else ("Reactive" if i % 3 == 0 else "Non-Reactive") for i in range(n)]
    unit = ["U1" if i % 2 else "U2" for i in range(n)]
    outcome = ["LFU" if i % 4 == 0 else "Cured" for i in range(n)]
    return Dataset.from_values(REG, {"Age": age, "Weight": weight, "hiv": hiv, "unit": unit, "outcome": outcome})


def test_weight_from_age_then_mean():
    ds = registry(n=25, weight_missing=(1,))
    # one cell lacks both Weight and Age: only the mean can fill it
    ages = ds.column("Age").values.copy()
    ages[[1, 2]] = [np.nan, 44.0]
    w = ds.column("Weight").values.copy()
    w[2] = np.nan
    from tbrisk.data import Column

    ds = ds.replace_column("Age", Column("numeric", ages, np.isnan(ages)))
    ds = ds.replace_column("Weight", Column("numeric", w, np.isnan(w)))
    plan = CleaningPlan(
        impute_rules=[ImputeRule("Weight", "copy_from_column", source="Age"), ImputeRule("Weight", "mean")],
        target_positive_values={"LFU"},
    )
    out, log = clean(ds, plan)
    weights = out.column("Weight").values
    assert weights[2] == 44.0  # took Age
    observed = [v for i, v in enumerate(w) if i not in (1, 2)]
    # mean is taken after the copy step, so it includes the copied 44.0
    assert weights[1] == pytest.approx(np.mean(observed + [44.0]), abs=1e-12)
    assert not out.column("Weight").missing.any()
    assert [e["action"] for e in log.entries[:2]] == ["impute_copy_from_column", "impute_mean"]


def test_sparse_column_dropped_and_logged():
    ds = registry(n=20, weight_missing=(), sparse_missing=4)  # hiv 20% missing
    out, log = clean(ds, CleaningPlan(target_positive_values={"LFU"}))
    assert "hiv" not in out
    assert log.actions("drop_sparse_column") == ["hiv"]


def test_no_rules_fully_observed_is_identity():
    ds = registry(n=12, weight_missing=())
    binarized = Dataset.from_values(
        REG,
        {
            "Age": ds.column("Age").decoded(),
            "Weight": ds.column("Weight").decoded(),
            "hiv": ds.strings("hiv"),
            "unit": ds.strings("unit"),
            "outcome": [int(v == "LFU") for v in ds.strings("outcome")],
        },
    )
    out, _ = clean(binarized, CleaningPlan())
    assert out.equals(binarized)


def test_target_binarization_and_unmappable():
    ds = registry(n=8, weight_missing=())
    out, _ = clean(ds, CleaningPlan(target_positive_values={"LFU"}, target_negative_values={"Cured"}))
    assert out.labels.tolist() == [1, 0, 0, 0, 1, 0, 0, 0]
    with pytest.raises(TargetUnmappable):
        clean(ds, CleaningPlan(target_positive_values={"LFU"}, target_negative_values={"Died"}))


def test_replacements_strict_and_loose():
    ds = registry(n=6, weight_missing=())
    plan = CleaningPlan(
        replacements=[Replacement("unit", " u1 ", "Unit-1", strict=False), Replacement("hiv", "Reactive", None)],
        target_positive_values={"LFU"},
        sparse_threshold=0.9,
    )
    out, _ = clean(ds, plan)
    assert set(out.strings("unit")) == {"Unit-1", "U2"}
    assert out.column("hiv").missing.sum() == 2  # rows 0 and 3


def test_unknown_column_in_plan():
    with pytest.raises(UnknownColumn):
        clean(registry(), CleaningPlan(impute_rules=[ImputeRule("nope", "mean")]))


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 40), st.floats(0, 0.15), st.integers(0, 2**16))
def test_clean_is_idempotent(n, frac, seed):
    # keep Weight under the sparse threshold so the plan stays valid on re-run
    rng = np.random.default_rng(seed)
    ds = registry(n=n, weight_missing=set(rng.choice(n, int(frac * n), replace=False).tolist()))
    plan = CleaningPlan(
        impute_rules=[ImputeRule("Weight", "copy_from_column", source="Age"), ImputeRule("hiv", "mode")],
        target_positive_values={"LFU"},
    )
    once, _ = clean(ds, plan)
    twice, _ = clean(once, plan)
    assert twice.equals(once)


def test_cross_verify_fills_only_consistent():
    schema = make_schema(("facility", "categorical"), ("unit", "categorical"), ("y", "target"))
    ds = Dataset.from_values(
        schema,
        {
            "facility": ["f1", "f1", "f2", "f2", "f1", "f2"],
            "unit": ["u1", "u1", "u2", "u3", None, None],
            "y": [0, 1, 0, 1, 0, 1],
        },
    )
    plan = CleaningPlan(
        impute_rules=[ImputeRule("unit", "cross_verify", source_columns=("facility",))], sparse_threshold=0.5
    )
    out, _ = clean(ds, plan)
    assert out.strings("unit") == ["u1", "u1", "u2", "u3", "u1", None]


# --- temporal split ---------------------------------------------------------


def dated(days, labels=None):
    schema = make_schema(("d", "date"), ("x", "numeric"), ("y", "target"))
    labels = labels if labels is not None else [i % 2 for i in range(len(days))]
    return Dataset.from_values(schema, {"d": list(days), "x": [float(i) for i in range(len(days))], "y": labels})


def test_hundred_consecutive_days():
    start = date_to_days(dt.date(2021, 1, 1))
    sp = temporal_split(dated(range(start, start + 100)), "d", passive_window_days=10)
    assert sp.passive.n_rows == 11
    assert sorted(sp.passive.column("d").values.tolist()) == list(range(start + 89, start + 100))
    assert sp.sizes() == {"train": 62, "validation": 13, "test": 14, "passive": 11}


def test_all_same_date_raises():
    with pytest.raises(EmptyPartition):
        temporal_split(dated([100] * 20), "d")


def test_ratios_one_zero_zero():
    with pytest.raises(EmptyPartition):
        temporal_split(dated(range(100)), "d", passive_window_days=0, ratios=(1, 0, 0))


def test_missing_dates_and_bad_ratios():
    schema = make_schema(("d", "date"), ("y", "target"))
    ds = Dataset.from_values(schema, {"d": [1, None, 3], "y": [0, 1, 0]})
    with pytest.raises(MissingDates):
        temporal_split(ds, "d")
    with pytest.raises(ConfigError):
        temporal_split(dated(range(50)), "d", ratios=(0.5, 0.5, 0.5))


def test_split_size_formula():
    for m in range(1, 400):
        a, b, c = split_sizes(m)
        assert a == (70 * m) // 100
        assert a + b == (85 * m) // 100
        assert a + b + c == m


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.integers(0, 400), min_size=12, max_size=80), st.integers(0, 60))
def test_no_leakage_fuzzed(days, window):
    try:
        sp = temporal_split(dated(days), "d", passive_window_days=window)
    except EmptyPartition:
        return
    d = {k: getattr(sp, k).column("d").values for k in ("train", "validation", "test", "passive")}
    assert d["train"].max() <= d["validation"].min()
    assert d["validation"].max() <= d["test"].min()
    assert d["test"].max() < d["passive"].min()
    m = len(days) - len(d["passive"])
    assert (len(d["train"]), len(d["validation"]), len(d["test"])) == split_sizes(m)
