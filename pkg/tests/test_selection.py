import csv
import dataclasses
import json

import numpy as np
import pytest

from tbrisk.data import Dataset
from tbrisk.encoders import EncoderKind
from tbrisk.errors import AllCandidatesFailed
from tbrisk.models import ModelSpec
from tbrisk.preprocess import CleaningPlan, clean, temporal_split
from tbrisk.selection import SearchSpace, encode_splits, final_fit_predict, select_encoder, select_model
from tbrisk.synthgen import generate, headline_config

from conftest import make_schema

SPACE = SearchSpace(grids={"gbdt": {"rounds": [20], "max_depth": [2, 3], "lambda_l2": [1.0, 5.0]}})
FAMILIES = [
    ModelSpec("gbdt", {"rounds": 20}),
    ModelSpec("naive_bayes"),
    ModelSpec("linear_risk", {"epochs": 100}),
    ModelSpec("cart", {"max_depth": 4}),
]


def rare_wards(n=3000, seed=0):
    # level names carry the signal but nearly every level is rare, so
    # string-based encodings generalize where count-based ones cannot
    rng = np.random.default_rng(seed)
    risky = rng.random(n) < 0.5
    ids = rng.integers(0, 100_000, n)
    names = [("riskyward" if r else "calmclinic") + f"-{i}" for r, i in zip(risky, ids)]
    y = (rng.random(n) < np.where(risky, 0.45, 0.05)).astype(int)
    schema = make_schema(("ward", "categorical"), ("d", "date"), ("y", "target"))
    ds = Dataset.from_values(schema, {"ward": names, "d": np.sort(rng.integers(0, 700, n)).tolist(), "y": y.tolist()})
    return temporal_split(ds, "d", passive_window_days=100)


def test_search_space_candidates():
    space = SearchSpace(grids={"gbdt": {"max_depth": [2, 3], "rounds": [5, 10]}}, budget=3)
    assert space.candidates("gbdt") == [
        {"max_depth": 2, "rounds": 5},
        {"max_depth": 2, "rounds": 10},
        {"max_depth": 3, "rounds": 5},
    ]
    rnd = SearchSpace(ranges={"gbdt": {"learning_rate": (0.01, 0.3, "log"), "max_depth": (2, 6, "int")}},
                      method="random", budget=5, seed=9)
    a, b = rnd.candidates("gbdt"), rnd.candidates("gbdt")
    assert a == b and len(a) == 5
    assert all(0.01 <= p["learning_rate"] <= 0.3 and 2 <= p["max_depth"] <= 6 for p in a)
    assert SearchSpace.from_dict(rnd.to_dict()) == rnd


def test_single_encoder_wins(small_splits):
    r = select_encoder([EncoderKind("woe")], small_splits, SPACE)
    assert r.best_encoder.name == "woe"


def test_dominant_encoder_wins(small_splits):
    r = select_encoder(["target", "normalized_count"], small_splits, SPACE)
    by = {}
    for e in r.leaderboard:
        by.setdefault(json.dumps(e.params, sort_keys=True), {})[e.encoder] = e.val_av_recall
    # precondition of the example: target is better at every lambda tried
    assert all(v["target"] > v["normalized_count"] for v in by.values())
    assert r.best_encoder.name == "target"
    assert r.best_spec.params == r.leaderboard[0].params


def test_dimension_penalty_crossover():
    splits = rare_wards()
    kinds = [EncoderKind("target"), EncoderKind("minhash", signature_length=8)]
    space = SearchSpace(grids={"gbdt": {"rounds": [20], "max_depth": [2]}})
    free = select_encoder(kinds, splits, space, beta=0.0)
    assert free.best_encoder.name == "minhash"
    ar = {e.encoder: e.val_av_recall for e in free.leaderboard}
    width = {e.encoder: e.complexity for e in free.leaderboard}
    crossover = (ar["minhash"] - ar["target"]) / (width["minhash"] - width["target"])
    assert select_encoder(kinds, splits, space, beta=0.9 * crossover).best_encoder.name == "minhash"
    assert select_encoder(kinds, splits, space, beta=1.1 * crossover).best_encoder.name == "target"


@pytest.fixture(scope="module")
def encoded(small_splits):
    return encode_splits(EncoderKind("target"), small_splits)


def test_objective_bookkeeping_and_order(encoded):
    r = select_model(FAMILIES, encoded, SearchSpace(), alpha=1e-4)
    objs = [e.val_objective for e in r.leaderboard]
    assert objs == sorted(objs)
    for e in r.leaderboard:
        assert abs(e.val_objective - ((1 - e.val_av_recall) + e.penalty * e.complexity)) <= 1e-12
    assert r.best_spec.family == r.leaderboard[0].family
    assert any(e.family == "average_ensemble" for e in r.leaderboard)


def test_alpha_zero_picks_best_metric(encoded):
    r = select_model(FAMILIES, encoded, SearchSpace(), alpha=0.0, ensemble_top=0)
    assert r.leaderboard[0].val_av_recall == max(e.val_av_recall for e in r.leaderboard)


def test_huge_alpha_picks_simplest(encoded):
    r = select_model(FAMILIES, encoded, SearchSpace(), alpha=1e6)
    assert r.leaderboard[0].complexity == min(e.complexity for e in r.leaderboard)


def test_equal_objective_tie_goes_to_earlier_candidate(encoded):
    same = [ModelSpec("naive_bayes"), ModelSpec("naive_bayes")]
    runs = [select_model(same, encoded, SearchSpace(), ensemble_top=0) for _ in range(2)]
    for r in runs:
        a, b = r.leaderboard
        assert a.val_objective == b.val_objective
        assert (a.candidate, b.candidate) == (0, 1)
    assert [e.to_dict() for e in runs[0].leaderboard] == [e.to_dict() for e in runs[1].leaderboard]


def test_failures_are_recorded(encoded):
    space = SearchSpace(grids={"knn": {"k": [0, 5]}})
    r = select_model([ModelSpec("knn")], encoded, space, ensemble_top=0)
    assert [f.params["k"] for f in r.failures] == [0]
    assert r.best_spec.params["k"] == 5
    with pytest.raises(AllCandidatesFailed):
        select_model([ModelSpec("knn")], encoded, SearchSpace(grids={"knn": {"k": [0]}}))


def test_passive_deletion_changes_nothing(small_splits):
    no_passive = dataclasses.replace(small_splits, passive=small_splits.passive.take(np.zeros(0, dtype=np.int64)))
    a = select_encoder(["target", "woe"], small_splits, SPACE)
    b = select_encoder(["target", "woe"], no_passive, SPACE)
    assert a.to_dict() == b.to_dict()
    ma = select_model(FAMILIES[:2], encode_splits(a.best_encoder, small_splits), SPACE)
    mb = select_model(FAMILIES[:2], encode_splits(b.best_encoder, no_passive), SPACE)
    assert ma.to_dict() == mb.to_dict()


def test_leaderboard_csv(encoded, tmp_path):
    r = select_model(FAMILIES[:2], encoded, SearchSpace(), ensemble_top=0)
    path = tmp_path / "board.csv"
    r.write_leaderboard(path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0])[:5] == ["candidate", "params", "val_objective", "test_recall_at_20", "test_av_recall"]
    assert [int(row["candidate"]) for row in rows] == [e.candidate for e in r.leaderboard]


def test_final_fit_passive_without_positives(small_splits, encoded):
    r = select_model([ModelSpec("naive_bayes")], encoded, SearchSpace(), ensemble_top=0)
    negatives = small_splits.passive.take(np.flatnonzero(small_splits.passive.labels == 0))
    out = final_fit_predict(r, small_splits.modeling, negatives)
    assert out.report.av_recall_10_40 is None
    assert any("NoPositives" in note for note in out.report.notes)


def test_refit_uses_whole_modeling_split(small_splits, encoded):
    r = select_model([ModelSpec("gbdt", {"rounds": 20, "max_depth": 3})], encoded, SearchSpace(), ensemble_top=0)
    out = final_fit_predict(r, small_splits.modeling, small_splits.passive)
    from tbrisk.encoders import transform
    from tbrisk.models import fit

    pre = fit(r.best_spec, encoded.X_train, encoded.y_train, feature_names=encoded.names)
    pre_scores = pre.predict_proba(transform(encoded.encoder, small_splits.passive).X)
    assert not np.array_equal(pre_scores, out.scores)


@pytest.mark.slow
def test_passive_tracks_test_when_stationary():
    ds, _ = generate(headline_config(n_rows=40_000, seed=11))
    ds, _ = clean(ds, CleaningPlan(target_positive_values={"LFU"}))
    splits = temporal_split(ds, "notification_date")
    space = SearchSpace(grids={"gbdt": {"rounds": [60], "max_depth": [3]}})
    enc = select_encoder(["target"], splits, space)
    res = select_model([ModelSpec("gbdt")], encode_splits(enc.best_encoder, splits), space, ensemble_top=0)
    out = final_fit_predict(res, splits.modeling, splits.passive)
    assert abs(out.report.av_recall_10_40 - res.leaderboard[0].test_av_recall) < 0.05
