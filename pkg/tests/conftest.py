import numpy as np
import pytest

from tbrisk.data import ColumnSpec, Dataset, Schema
from tbrisk.preprocess import CleaningPlan, clean, temporal_split
from tbrisk.synthgen import GenConfig, generate, headline_config


def make_schema(*cols):
    return Schema(tuple(ColumnSpec(n, r) for n, r in cols))


@pytest.fixture
def tiny():
    """Six rows, two categoricals, one numeric, binarized target."""
    schema = make_schema(
        ("unit", "categorical"), ("hiv", "categorical"), ("age", "numeric"), ("outcome", "target")
    )
    return Dataset.from_values(
        schema,
        {
            "unit": ["a", "a", "b", "b", "c", "a"],
            "hiv": ["pos", "neg", "neg", "neg", None, "pos"],
            "age": [30.0, 40.0, None, 25.0, 60.0, 35.0],
            "outcome": [1, 0, 0, 1, 0, 1],
        },
    )


@pytest.fixture(scope="session")
def small_splits():
    """A cleaned and split synthetic registry (a few thousand rows)."""
    ds, _ = generate(headline_config(n_rows=4000, seed=3))
    ds, _ = clean(ds, CleaningPlan(target_positive_values={"LFU"}))
    return temporal_split(ds, "notification_date")


@pytest.fixture(scope="session")
def small_generated():
    return generate(GenConfig(n_rows=3000, seed=5, signal={"tb_unit": 1.0, "age": 0.8}))


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
