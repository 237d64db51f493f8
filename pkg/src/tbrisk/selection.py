"""Sequential encoder and model selection on the chronological validation split.

The loss is ``1 - AvRecall(10, 40)`` on validation plus a complexity penalty:
``beta * d`` for encoders (``d`` = encoded width) and ``alpha * R(f)`` for
models (``R`` = :meth:`Model.complexity`). The test subset is scored for
reporting only and the passive split is never touched until
:func:`final_fit_predict`.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from joblib import Parallel, delayed

from . import encoders as enc_mod
from .data import Dataset
from .encoders import EncoderKind, FittedEncoder
from .errors import AllCandidatesFailed, ConfigError, TBRiskError
from .metrics import EvalReport, av_recall, classification_report, recall_at_k
from .models import DEFAULTS, ModelSpec, build_average_ensemble, fit
from .preprocess import SplitBundle
from .resample import ResamplePlan, resample
from .seeding import derive_seed


@dataclass(frozen=True)
class SearchSpace:
    """Per-family hyperparameter grids and/or sampling ranges.

    ``grids[family][param]`` is a list of values. ``ranges[family][param]`` is
    ``(low, high)`` or ``(low, high, "int" | "log")`` and is only used by
    random search. Grid search enumerates the product of the grids in sorted
    parameter order and keeps the first ``budget`` points.
    """

    grids: dict = field(default_factory=dict)
    ranges: dict = field(default_factory=dict)
    method: str = "grid"
    budget: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("search budget must be >= 1")
        if self.method not in ("grid", "random"):
            raise ConfigError(f"unknown search method {self.method!r}")
        for family, grid in self.grids.items():
            for name, values in grid.items():
                if len(values) == 0:
                    raise ConfigError(f"empty grid for {family}.{name}")
        for family, rng in self.ranges.items():
            for name, spec in rng.items():
                if len(spec) < 2 or spec[0] > spec[1]:
                    raise ConfigError(f"bad range for {family}.{name}: {spec}")

    @classmethod
    def from_dict(cls, data: dict) -> "SearchSpace":
        ranges = {f: {k: tuple(v) for k, v in r.items()} for f, r in data.get("ranges", {}).items()}
        return cls(
            grids=dict(data.get("grids", {})),
            ranges=ranges,
            method=data.get("method", "grid"),
            budget=int(data.get("budget", 20)),
            seed=int(data.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "grids": self.grids,
            "ranges": {f: {k: list(v) for k, v in r.items()} for f, r in self.ranges.items()},
            "method": self.method,
            "budget": self.budget,
            "seed": self.seed,
        }

    def candidates(self, family: str, base: dict | None = None) -> list[dict]:
        """Hyperparameter dicts to try for ``family`` (``base`` fills the rest)."""
        base = dict(base or {})
        grid = self.grids.get(family, {})
        ranges = self.ranges.get(family, {})
        if self.method == "grid" or not ranges:
            keys = sorted(grid)
            points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
            return [{**base, **p} for p in points[: self.budget]]
        rng = np.random.default_rng(derive_seed(self.seed, "search", family))
        out = []
        for _ in range(self.budget):
            point = {}
            for name in sorted(grid):
                point[name] = grid[name][int(rng.integers(len(grid[name])))]
            for name in sorted(ranges):
                lo, hi, *kind = ranges[name]
                kind = kind[0] if kind else "float"
                if kind == "int":
                    point[name] = int(rng.integers(int(lo), int(hi) + 1))
                elif kind == "log":
                    point[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
                else:
                    point[name] = float(rng.uniform(lo, hi))
            out.append({**base, **point})
        return out


@dataclass
class LeaderboardEntry:
    candidate: int
    encoder: str
    family: str
    params: dict
    complexity: float
    penalty: float  # alpha or beta
    val_av_recall: float
    val_objective: float
    test_recall_at_20: float | None
    test_av_recall: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Failure:
    candidate: int
    encoder: str
    family: str
    params: dict
    error: str


@dataclass
class SelectionResult:
    best_encoder: EncoderKind
    best_spec: ModelSpec
    leaderboard: list[LeaderboardEntry]
    alpha: float = 0.0
    beta: float = 0.0
    failures: list[Failure] = field(default_factory=list)
    ensemble_members: list[ModelSpec] = field(default_factory=list)

    @property
    def best(self) -> LeaderboardEntry:
        return self.leaderboard[0]

    def to_dict(self) -> dict:
        return {
            "best_encoder": self.best_encoder.__dict__,
            "best_spec": self.best_spec.to_dict(),
            "ensemble_members": [s.to_dict() for s in self.ensemble_members],
            "alpha": self.alpha,
            "beta": self.beta,
            "leaderboard": [e.to_dict() for e in self.leaderboard],
            "failures": [f.__dict__ for f in self.failures],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)

    def write_leaderboard(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["candidate", "params", "val_objective", "test_recall_at_20", "test_av_recall",
                 "encoder", "family", "complexity", "val_av_recall"]
            )
            for e in self.leaderboard:
                w.writerow([
                    e.candidate,
                    json.dumps(e.params, sort_keys=True),
                    repr(e.val_objective),
                    "" if e.test_recall_at_20 is None else repr(e.test_recall_at_20),
                    "" if e.test_av_recall is None else repr(e.test_av_recall),
                    e.encoder,
                    e.family,
                    repr(e.complexity),
                    repr(e.val_av_recall),
                ])


class EncodedSplits(NamedTuple):
    encoder: FittedEncoder
    names: list
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def encode_splits(kind: EncoderKind, splits: SplitBundle) -> EncodedSplits:
    """Fit ``kind`` on train and encode train, validation and test."""
    encoder, tr = enc_mod.fit_transform(kind, splits.train)
    va = enc_mod.transform(encoder, splits.validation)
    te = enc_mod.transform(encoder, splits.test)
    return EncodedSplits(
        encoder, tr.names, tr.X, splits.train.labels, va.X, splits.validation.labels, te.X, splits.test.labels
    )


def _objective(val_av_recall: float, weight: float, complexity: float) -> float:
    return (1.0 - val_av_recall) + weight * complexity


def _test_metrics(scores, labels):
    try:
        return recall_at_k(scores, labels, 20), av_recall(scores, labels)
    except TBRiskError:
        return None, None


def _train_matrix(data: EncodedSplits, plan: ResamplePlan | None):
    if plan is None or plan.method == "none":
        return data.X_train, data.y_train
    return resample(data.X_train, data.y_train, plan)


def _evaluate(index, encoder_name, spec, data, plan, seed, weight, complexity_fn, n_jobs):
    try:
        X, y = _train_matrix(data, plan)
        model = fit(spec, X, y, seed=seed, feature_names=data.names, n_jobs=n_jobs)
        val = model.predict_proba(data.X_val)
        val_ar = av_recall(val, data.y_val)
        test_r20, test_ar = _test_metrics(model.predict_proba(data.X_test), data.y_test)
    except (TBRiskError, ValueError, FloatingPointError) as exc:
        return Failure(index, encoder_name, spec.family, spec.params, f"{type(exc).__name__}: {exc}"), None
    complexity = float(complexity_fn(model))
    entry = LeaderboardEntry(
        candidate=index,
        encoder=encoder_name,
        family=spec.family,
        params=dict(spec.params),
        complexity=complexity,
        penalty=weight,
        val_av_recall=val_ar,
        val_objective=_objective(val_ar, weight, complexity),
        test_recall_at_20=test_r20,
        test_av_recall=test_ar,
    )
    return entry, model


def _rank(entries: list[LeaderboardEntry]) -> list[LeaderboardEntry]:
    return sorted(entries, key=lambda e: (e.val_objective, e.candidate))


def select_encoder(
    candidates: list,
    splits: SplitBundle,
    space: SearchSpace,
    beta: float = 0.0,
    resample_plan: ResamplePlan | None = None,
    n_jobs: int = 1,
) -> SelectionResult:
    """Pick the encoder minimizing validation loss of a tuned gbdt plus ``beta * d``."""
    if not candidates:
        raise ConfigError("no encoder candidates given")
    kinds = [c if isinstance(c, EncoderKind) else EncoderKind.from_dict(c) for c in candidates]
    gbdt_points = space.candidates("gbdt")
    entries, failures = [], []
    index = 0
    for kind in kinds:
        try:
            data = encode_splits(kind, splits)
        except TBRiskError as exc:
            for params in gbdt_points:
                failures.append(Failure(index, kind.name, "gbdt", params, f"{type(exc).__name__}: {exc}"))
                index += 1
            continue
        width = data.X_train.shape[1]
        jobs = []
        for params in gbdt_points:
            spec = ModelSpec("gbdt", params)
            seed = derive_seed(space.seed, "fit", index)
            jobs.append(delayed(_evaluate)(index, kind.name, spec, data, resample_plan, seed, beta,
                                           lambda m, w=width: w, 1))
            index += 1
        for entry, _ in Parallel(n_jobs=n_jobs, prefer="threads")(jobs):
            (failures if isinstance(entry, Failure) else entries).append(entry)
    if not entries:
        raise AllCandidatesFailed(f"all {index} encoder candidates failed")
    board = _rank(entries)
    head = board[0]
    best_kind = next(k for k in kinds if k.name == head.encoder)
    return SelectionResult(best_kind, ModelSpec("gbdt", {k: v for k, v in head.params.items()}), board,
                           beta=beta, failures=failures)


def select_model(
    families: list,
    data: EncodedSplits,
    space: SearchSpace,
    alpha: float = 0.0,
    resample_plan: ResamplePlan | None = None,
    ensemble_top: int = 5,
    encoder_kind: EncoderKind | None = None,
    n_jobs: int = 1,
) -> SelectionResult:
    """Tune each family on validation and pick the minimum of ``L + alpha * R(f)``.

    ``families`` holds :class:`ModelSpec` templates (or family names); the
    template's params are the base the search space overrides. When
    ``ensemble_top`` >= 2, an equal-weight ensemble of that many best
    candidates is scored as one more candidate.
    """
    if not families:
        raise ConfigError("no model families given")
    templates = [f if isinstance(f, ModelSpec) else ModelSpec(f) for f in families]
    encoder_name = encoder_kind.name if encoder_kind else data.encoder.kind.name
    jobs, specs = [], []
    index = 0
    for tpl in templates:
        overrides = {k: v for k, v in tpl.params.items() if v != DEFAULTS[tpl.family].get(k)}
        for params in space.candidates(tpl.family, overrides):
            try:
                spec = ModelSpec(tpl.family, params)
            except ConfigError as exc:
                specs.append(Failure(index, encoder_name, tpl.family, params, f"ConfigError: {exc}"))
                index += 1
                continue
            seed = derive_seed(space.seed, "fit", tpl.family, index)
            specs.append((spec, seed))
            jobs.append(delayed(_evaluate)(index, encoder_name, spec, data, resample_plan, seed, alpha,
                                           lambda m: m.complexity(), 1))
            index += 1
    results = Parallel(n_jobs=n_jobs, prefer="threads")(jobs)
    failures = [s for s in specs if isinstance(s, Failure)]
    entries, models = [], {}
    for entry, model in results:
        if isinstance(entry, Failure):
            failures.append(entry)
        else:
            entries.append(entry)
            models[entry.candidate] = model
    if not entries:
        raise AllCandidatesFailed(f"all {index} model candidates failed")
    spec_of = {i: s for i, s in enumerate(specs) if not isinstance(s, Failure)}

    members = []
    if ensemble_top >= 2 and len(entries) >= 2:
        top = _rank(entries)[:ensemble_top]
        members = [spec_of[e.candidate][0] for e in top]
        ensemble = build_average_ensemble([models[e.candidate] for e in top])
        val_ar = av_recall(ensemble.predict_proba(data.X_val), data.y_val)
        test_r20, test_ar = _test_metrics(ensemble.predict_proba(data.X_test), data.y_test)
        complexity = ensemble.complexity()
        entries.append(
            LeaderboardEntry(
                candidate=index,
                encoder=encoder_name,
                family="average_ensemble",
                params={"members": [e.candidate for e in top]},
                complexity=complexity,
                penalty=alpha,
                val_av_recall=val_ar,
                val_objective=_objective(val_ar, alpha, complexity),
                test_recall_at_20=test_r20,
                test_av_recall=test_ar,
            )
        )
        spec_of[index] = (ModelSpec("average_ensemble"), None)

    board = _rank(entries)
    head = board[0]
    best_spec = spec_of[head.candidate][0]
    result = SelectionResult(
        best_encoder=encoder_kind or data.encoder.kind,
        best_spec=best_spec,
        leaderboard=board,
        alpha=alpha,
        failures=sorted(failures, key=lambda f: f.candidate),
        ensemble_members=members if best_spec.family == "average_ensemble" else [],
    )
    return result


class FinalFit(NamedTuple):
    model: object
    encoder: FittedEncoder
    scores: np.ndarray
    report: EvalReport


def final_fit_predict(
    best: SelectionResult,
    modeling: Dataset,
    passive: Dataset,
    seed: int = 0,
    resample_plan: ResamplePlan | None = None,
    threshold: float = 0.5,
    n_jobs: int = 1,
) -> FinalFit:
    """Refit encoder and model on the whole modeling split and score the passive split."""
    if passive.n_rows == 0:
        raise ConfigError("passive split is empty")
    encoder, tr = enc_mod.fit_transform(best.best_encoder, modeling)
    X, y = tr.X, modeling.labels
    if resample_plan is not None and resample_plan.method != "none":
        X, y = resample(X, y, resample_plan)
    fit_seed = derive_seed(seed, "final")
    if best.best_spec.family == "average_ensemble":
        members = [
            fit(spec, X, y, seed=derive_seed(seed, "final", i), feature_names=tr.names, n_jobs=n_jobs)
            for i, spec in enumerate(best.ensemble_members)
        ]
        model = build_average_ensemble(members)
    else:
        model = fit(best.best_spec, X, y, seed=fit_seed, feature_names=tr.names, n_jobs=n_jobs)
    scores = model.predict_proba(enc_mod.transform(encoder, passive).X)
    report = classification_report(scores, passive.labels, threshold)
    return FinalFit(model, encoder, scores, report)
