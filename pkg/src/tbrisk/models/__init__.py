"""Model specifications, fitting, prediction, ensembling and persistence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import AllZeroPerformance, ConfigError
from .learners import (
    FORMAT_VERSION,
    LEARNERS,
    GBDTModel,
    LinearRiskModel,
    Model,
    logistic_grad_hess,
    logistic_loss,
    margin_loss,
)

DEFAULTS = {
    "gbdt": {
        "rounds": 200,
        "learning_rate": 0.1,
        "max_depth": 6,
        "lambda_l2": 1.0,
        "gamma": 0.0,
        "min_child_hessian": 1.0,
        "base_score": 0.0,
    },
    "cart": {"max_depth": 12, "min_samples_leaf": 1},
    "random_forest": {"n_trees": 300, "max_depth": 12, "max_features": "sqrt", "min_samples_leaf": 1},
    "balanced_random_forest": {"n_trees": 300, "max_depth": 12, "max_features": "sqrt", "min_samples_leaf": 1},
    "knn": {"k": 15},
    "naive_bayes": {"var_smoothing": 1e-9},
    "linear_risk": {"activation": "sigmoid", "epochs": 500, "learning_rate": 0.5, "l2": 0.0},
    "weighted_ensemble": {},
    "average_ensemble": {},
}
FAMILIES = tuple(DEFAULTS)

_POSITIVE = {"rounds", "learning_rate", "n_trees", "k", "min_samples_leaf", "epochs", "var_smoothing"}
_NON_NEGATIVE = {"max_depth", "lambda_l2", "gamma", "min_child_hessian", "l2"}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in DEFAULTS:
            raise ConfigError(f"unknown model family {self.family!r}")
        unknown = set(self.params) - set(DEFAULTS[self.family])
        if unknown:
            raise ConfigError(f"unknown {self.family} hyperparameters {sorted(unknown)}")
        merged = {**DEFAULTS[self.family], **self.params}
        for key, value in merged.items():
            if key in _POSITIVE and not value > 0:
                raise ConfigError(f"{self.family}.{key} must be > 0, got {value}")
            if key in _NON_NEGATIVE and not value >= 0:
                raise ConfigError(f"{self.family}.{key} must be >= 0, got {value}")
        if merged.get("activation", "sigmoid") not in ("sigmoid", "relu_clamped"):
            raise ConfigError(f"unknown activation {merged['activation']!r}")
        object.__setattr__(self, "params", merged)

    def __hash__(self):
        return hash((self.family, json.dumps(self.params, sort_keys=True, default=str)))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(data["family"], dict(data.get("params", {})))


@dataclass
class EnsembleWeights:
    members: list
    weights: list[float]

    def __post_init__(self):
        if len(self.members) != len(self.weights):
            raise ConfigError("one weight per ensemble member is required")
        if any(w < 0 for w in self.weights):
            raise ConfigError("ensemble weights must be non-negative")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ConfigError(f"ensemble weights must sum to 1, got {math.fsum(self.weights)}")


class EnsembleModel(Model):
    """Weighted average of member scores (equal weights for ``average_ensemble``)."""

    def __init__(self, spec, weights: EnsembleWeights, metadata=None):
        names = weights.members[0].feature_names if weights.members else []
        super().__init__(spec, names, metadata)
        self.family = spec.family
        self.ensemble = weights

    def _predict(self, X):
        return ensemble_predict(self.ensemble, X)

    def complexity(self):
        return float(sum(m.complexity() for m in self.ensemble.members))

    def state(self):
        return {
            "weights": list(self.ensemble.weights),
            "members": [model_to_dict(m) for m in self.ensemble.members],
        }


def fit(spec: ModelSpec, X, y, seed: int = 0, feature_names=None, n_jobs: int = 1) -> Model:
    """Train a single-family model on an encoded matrix."""
    if spec.family in ("weighted_ensemble", "average_ensemble"):
        raise ConfigError("ensembles are built from fitted members, see build_average_ensemble")
    X = np.asarray(X, dtype=np.float64)
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(X.shape[1])]
    model = LEARNERS[spec.family](spec, names)
    if spec.family in ("random_forest", "balanced_random_forest"):
        return model.fit(X, y, seed=seed, n_jobs=n_jobs)
    return model.fit(X, y, seed=seed)


def predict_proba(model: Model, X) -> np.ndarray:
    return model.predict_proba(X)


def ensemble_predict(w: EnsembleWeights, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros(len(X))
    for member, weight in zip(w.members, w.weights):
        if weight:
            out += weight * member.predict_proba(X)
    if len(X):
        np.clip(out, 0.0, 1.0, out=out)
    return out


def ensemble_loss(w: EnsembleWeights, X, y) -> float:
    """Weighted sum of the members' logistic losses."""
    return math.fsum(
        weight * logistic_loss(np.asarray(y, float), m.predict_proba(X)) for m, weight in zip(w.members, w.weights)
    )


def derive_weights(members: list, performances) -> EnsembleWeights:
    """Weights proportional to each member's validation performance."""
    perf = [float(p) for p in performances]
    if len(perf) != len(members):
        raise ConfigError("one performance value per member is required")
    if any(p < 0 for p in perf):
        raise ConfigError("performances must be non-negative")
    total = math.fsum(perf)
    if total <= 0:
        raise AllZeroPerformance("all member performances are zero")
    weights = [p / total for p in perf]
    # push rounding residue onto the largest weight so the sum is exactly 1
    residue = 1.0 - math.fsum(weights)
    weights[int(np.argmax(weights))] += residue
    return EnsembleWeights(list(members), weights)


def build_weighted_ensemble(members: list, performances) -> EnsembleModel:
    return EnsembleModel(ModelSpec("weighted_ensemble"), derive_weights(members, performances))


def build_average_ensemble(members: list) -> EnsembleModel:
    n = len(members)
    weights = [1.0 / n] * n
    weights[0] += 1.0 - math.fsum(weights)
    return EnsembleModel(ModelSpec("average_ensemble"), EnsembleWeights(list(members), weights))


# --------------------------------------------------------------------------
# persistence


def model_to_dict(model: Model) -> dict:
    return {
        "format": "tbrisk-model",
        "version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "feature_names": model.feature_names,
        "metadata": model.metadata,
        "state": model.state(),
    }


def model_from_dict(data: dict) -> Model:
    if data.get("format") != "tbrisk-model":
        raise ConfigError("not a model artifact")
    if int(data.get("version", 0)) > FORMAT_VERSION:
        raise ConfigError(f"model artifact version {data['version']} is newer than supported")
    spec = ModelSpec.from_dict(data["spec"])
    if spec.family in ("weighted_ensemble", "average_ensemble"):
        members = [model_from_dict(m) for m in data["state"]["members"]]
        return EnsembleModel(spec, EnsembleWeights(members, data["state"]["weights"]), data["metadata"])
    model = LEARNERS[spec.family](spec, data["feature_names"], data["metadata"])
    model.load_state(data["state"])
    return model


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


__all__ = [
    "DEFAULTS",
    "FAMILIES",
    "EnsembleModel",
    "EnsembleWeights",
    "GBDTModel",
    "LinearRiskModel",
    "Model",
    "ModelSpec",
    "build_average_ensemble",
    "build_weighted_ensemble",
    "derive_weights",
    "ensemble_loss",
    "ensemble_predict",
    "fit",
    "load_model",
    "logistic_grad_hess",
    "logistic_loss",
    "margin_loss",
    "model_from_dict",
    "model_to_dict",
    "predict_proba",
    "save_model",
]
