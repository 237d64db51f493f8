import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbrisk.errors import ConfigError, SingleClass, TooFewMinority
from tbrisk.resample import ResamplePlan, nearest_neighbors, resample


def imbalanced(n_maj=40, n_min=8, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_maj + n_min, d))
    y = np.r_[np.zeros(n_maj, dtype=np.int8), np.ones(n_min, dtype=np.int8)]
    return X, y


def test_identical_minority_points():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0], [5.0, 5.0]])
    y = np.array([0, 0, 0, 1, 1])
    Xr, yr = resample(X, y, ResamplePlan("smote", k_neighbors=1, seed=4))
    assert (Xr[5:] == 5.0).all() and (yr[5:] == 1).all()


def test_smote_one_dimensional_interval():
    X = np.r_[np.zeros(1000), [0.0, 10.0]][:, None]
    y = np.r_[np.zeros(1000, dtype=int), [1, 1]]
    Xr, _ = resample(X, y, ResamplePlan("smote", k_neighbors=1, seed=0))
    synth = Xr[len(X) :, 0]
    assert len(synth) == 998
    assert synth.min() >= 0.0 and synth.max() <= 10.0
    assert 0 < synth.mean() < 10


def test_none_is_identity():
    X, y = imbalanced()
    Xr, yr = resample(X, y, ResamplePlan("none"))
    assert np.array_equal(Xr, X) and np.array_equal(yr, y)


def test_errors():
    X, y = imbalanced(n_min=3)
    with pytest.raises(TooFewMinority):
        resample(X, y, ResamplePlan("smote", k_neighbors=5))
    with pytest.raises(SingleClass):
        resample(X, np.zeros(len(y)), ResamplePlan("random_oversample"))
    with pytest.raises(ConfigError):
        ResamplePlan("smote", target_ratio=1.5)
    with pytest.raises(ConfigError):
        ResamplePlan("adasyn")


def test_neighbor_ties_by_index():
    pts = np.array([[0.0], [1.0], [-1.0], [1.0]])
    assert nearest_neighbors(pts, 2)[0].tolist() == [1, 2]


def _on_some_segment(row, pool, tol=1e-9):
    for a in pool:
        for b in pool:
            diff = b - a
            nz = np.abs(diff) > tol
            if not nz.any():
                if np.allclose(row, a, atol=tol):
                    return True
                continue
            u = (row[nz] - a[nz]) / diff[nz]
            if np.ptp(u) <= 1e-7 and -tol <= u[0] <= 1 + tol and np.allclose(a + u[0] * diff, row, atol=tol):
                return True
    return False


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(6, 12), st.floats(0.3, 1.0), st.integers(1, 4))
def test_smote_convexity_and_count(seed, n_min, ratio, k):
    X, y = imbalanced(n_maj=30, n_min=n_min, seed=seed % 1000)
    Xr, yr = resample(X, y, ResamplePlan("smote", target_ratio=ratio, k_neighbors=k, seed=seed))
    assert np.array_equal(Xr[: len(X)], X)
    n_min_after = int((yr == 1).sum())
    assert abs(n_min_after / 30 - ratio) <= 1 / 30 + 1e-12 or n_min_after == n_min
    pool = X[y == 1]
    for row in Xr[len(X) :]:
        assert _on_some_segment(row, pool)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["smote", "random_oversample"]))
def test_determinism_and_ros_copies(seed, method):
    X, y = imbalanced(seed=3)
    plan = ResamplePlan(method, seed=seed)
    a = resample(X, y, plan)
    b = resample(X, y, plan)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert (a[1] == 1).sum() == 40
    if method == "random_oversample":
        pool = {tuple(r) for r in X[y == 1]}
        assert all(tuple(r) in pool for r in a[0][len(X) :])
