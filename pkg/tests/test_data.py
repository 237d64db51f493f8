import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbrisk.data import (
    ColumnSpec,
    Dataset,
    Schema,
    column_stats,
    date_to_days,
    load_csv,
    parse_date,
)
from tbrisk.errors import DuplicateColumn, MissingColumn, ParseError, SchemaMismatch

from conftest import make_schema

SCHEMA = make_schema(
    ("id", "identifier"),
    ("gender", "categorical"),
    ("Weight", "numeric"),
    ("notified", "date"),
    ("outcome", "target"),
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_weight_cell_is_missing(tmp_path):
    p = write(
        tmp_path,
        "id,gender,Weight,notified,outcome\n"
        "1,M,50,2021-01-01,Cured\n"
        "2,F,,2021-01-02,LFU\n"
        "3,M,61.5,2021-01-03,Cured\n",
    )
    ds = load_csv(p, SCHEMA)
    assert ds.column("Weight").missing.tolist() == [False, True, False]
    assert ds.n_rows == 3


def test_header_order_does_not_matter(tmp_path):
    p = write(tmp_path, "outcome,notified,Weight,gender,id\nLFU,2021-02-03,NA,F,7\n")
    ds = load_csv(p, SCHEMA)
    assert ds.strings("gender") == ["F"]
    assert ds.column("Weight").missing.tolist() == [True]
    assert ds.column("notified").values[0] == date_to_days(__import__("datetime").date(2021, 2, 3))


def test_missing_target_header(tmp_path):
    p = write(tmp_path, "id,gender,Weight,notified\n1,M,50,2021-01-01\n")
    with pytest.raises(MissingColumn):
        load_csv(p, SCHEMA)


def test_duplicate_header(tmp_path):
    p = write(tmp_path, "id,id,gender,Weight,notified,outcome\n1,1,M,50,2021-01-01,LFU\n")
    with pytest.raises(DuplicateColumn):
        load_csv(p, SCHEMA)


def test_month_13_rejected_at_cell(tmp_path):
    p = write(
        tmp_path,
        "id,gender,Weight,notified,outcome\n1,M,50,2021-01-01,LFU\n2,M,50,2021-13-01,LFU\n",
    )
    with pytest.raises(ParseError) as info:
        load_csv(p, SCHEMA)
    assert info.value.row == 3
    assert info.value.column == "notified"


def _calendar_ok(text):
    # independent oracle: explicit month lengths with the Gregorian leap rule
    y, m, d = (int(x) for x in text.split("-"))
    if not 1 <= m <= 12:
        return False
    leap = y % 4 == 0 and (y % 100 != 0 or y % 400 == 0)
    days = [31, 29 if leap else 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31][m - 1]
    return 1 <= d <= days


@settings(max_examples=300, deadline=None)
@given(st.integers(1900, 2100), st.integers(0, 14), st.integers(0, 33))
def test_parse_date_matches_calendar_oracle(y, m, d):
    text = f"{y:04d}-{m:02d}-{d:02d}"
    if _calendar_ok(text):
        parse_date(text)
    else:
        with pytest.raises(ValueError):
            parse_date(text)


def test_bad_numeric_cell(tmp_path):
    p = write(tmp_path, "id,gender,Weight,notified,outcome\n1,M,heavy,2021-01-01,LFU\n")
    with pytest.raises(ParseError) as info:
        load_csv(p, SCHEMA)
    assert info.value.column == "Weight"


def test_non_nullable_missing_is_parse_error(tmp_path):
    schema = Schema((ColumnSpec("a", "numeric", nullable=False), ColumnSpec("y", "target")))
    p = write(tmp_path, "a,y\n,1\n")
    with pytest.raises(ParseError):
        load_csv(p, schema)


def test_binary_target_loads_binarized(tmp_path):
    p = write(tmp_path, "id,gender,Weight,notified,outcome\n1,M,1,2021-01-01,1\n2,F,2,2021-01-01,0\n")
    ds = load_csv(p, SCHEMA)
    assert ds.target_binarized
    assert ds.labels.tolist() == [1, 0]


def test_raw_target_has_no_labels(tiny, tmp_path):
    p = write(tmp_path, "id,gender,Weight,notified,outcome\n1,M,1,2021-01-01,LFU\n")
    with pytest.raises(SchemaMismatch):
        load_csv(p, SCHEMA).labels


def test_stats_population_std():
    ds = Dataset.from_values(make_schema(("x", "numeric"), ("y", "target")), {"x": [1, 2, 3], "y": [0, 1, 0]})
    s = column_stats(ds, "x")
    assert s.mean == 2.0
    assert s.std == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert s.missing_fraction == 0.0


def test_stats_all_missing():
    ds = Dataset.from_values(make_schema(("x", "numeric"), ("y", "target")), {"x": [None, None], "y": [0, 1]})
    s = column_stats(ds, "x")
    assert s.missing_fraction == 1.0
    assert s.cardinality == 0


def test_stats_value_counts():
    ds = Dataset.from_values(make_schema(("c", "categorical"), ("y", "target")), {"c": ["a", "a", "b"], "y": [0, 1, 0]})
    assert column_stats(ds, "c").value_counts == {"a": 2, "b": 1}


def test_schema_needs_one_target():
    with pytest.raises(ValueError):
        make_schema(("a", "numeric"))
    with pytest.raises(DuplicateColumn):
        make_schema(("a", "numeric"), ("a", "target"))


def test_schema_yaml_round_trip(tmp_path):
    SCHEMA.dump(tmp_path / "s.yaml")
    assert Schema.load(tmp_path / "s.yaml") == SCHEMA


cells = st.one_of(st.none(), st.sampled_from(["x", "y", "z z", "NA-ish", "é"]))
nums = st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(cells, nums, st.integers(0, 3000), st.booleans()), min_size=1, max_size=30))
def test_csv_round_trip(tmp_path_factory, rows):
    schema = make_schema(("c", "categorical"), ("v", "numeric"), ("d", "date"), ("y", "target"))
    ds = Dataset.from_values(
        schema,
        {
            "c": [r[0] for r in rows],
            "v": [r[1] for r in rows],
            "d": [r[2] for r in rows],
            "y": [int(r[3]) for r in rows],
        },
    )
    p = tmp_path_factory.mktemp("rt") / "rt.csv"
    ds.to_csv(p)
    back = load_csv(p, schema)
    assert back.equals(ds)


@settings(max_examples=100, deadline=None)
@given(st.lists(nums, min_size=1, max_size=50))
def test_missing_fraction_matches_count(values):
    ds = Dataset.from_values(make_schema(("v", "numeric"), ("y", "target")), {"v": values, "y": [0] * len(values)})
    expected = sum(v is None for v in values) / len(values)
    frac = column_stats(ds, "v").missing_fraction
    assert 0.0 <= frac <= 1.0
    assert frac == expected


def test_concat_recodes_categories(tiny):
    both = Dataset.concat([tiny, tiny.take(np.array([4, 0]))])
    assert both.strings("unit") == tiny.strings("unit") + ["c", "a"]
    assert both.labels.tolist() == tiny.labels.tolist() + [0, 1]
