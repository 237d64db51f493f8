"""Native learners. Every model maps an encoded matrix to risk scores in [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from ..errors import NonFiniteFeature, SingleClass, WidthMismatch
from .tree import FeatureBins, GiniCriterion, NewtonCriterion, Tree, grow_tree

FORMAT_VERSION = 1


def logistic_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def logistic_grad_hess(y: np.ndarray, margin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative of the logistic loss w.r.t. the raw margin."""
    p = expit(margin)
    return p - y, p * (1.0 - p)


def margin_loss(y: np.ndarray, margin: np.ndarray) -> np.ndarray:
    """Per-row logistic loss written in terms of the margin (numerically stable)."""
    return np.logaddexp(0.0, margin) - y * margin


class Model:
    family = ""

    def __init__(self, spec, feature_names=None, metadata=None):
        self.spec = spec
        self.feature_names = list(feature_names or [])
        self.metadata = dict(metadata or {})
        self.n_features = len(self.feature_names)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            width = X.shape[1] if X.ndim == 2 else None
            raise WidthMismatch(f"model expects {self.n_features} features, got {width}")
        if len(X) == 0:
            return np.zeros(0)
        return self._predict(X)

    def complexity(self) -> float:
        raise NotImplementedError

    # serialization hooks
    def state(self) -> dict:
        raise NotImplementedError

    def load_state(self, state: dict) -> None:
        raise NotImplementedError


def _check_fit_inputs(X, y, need_both: bool):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise WidthMismatch(f"X shape {X.shape} does not match {len(y)} labels")
    if not np.isfinite(X).all():
        raise NonFiniteFeature("feature matrix contains NaN or infinite values")
    if len(X) < 2:
        raise SingleClass("need at least two rows to fit")
    if need_both and (y.min() == y.max()):
        raise SingleClass("both classes must be present in the training labels")
    return X, y


# --------------------------------------------------------------------------
# second-order boosted trees


class GBDTModel(Model):
    family = "gbdt"

    def fit(self, X, y, seed=0):
        X, y = _check_fit_inputs(X, y, need_both=True)
        p = self.spec.params
        crit = NewtonCriterion(p["lambda_l2"], p["gamma"], p["min_child_hessian"], p["learning_rate"])
        bins = FeatureBins(X)
        margin = np.full(len(y), float(p["base_score"]))
        ones = np.ones(len(y))
        self.base_score = float(p["base_score"])
        self.trees = []
        losses = [float(margin_loss(y, margin).mean())]
        for _ in range(int(p["rounds"])):
            g, h = logistic_grad_hess(y, margin)
            tree, leaf_of = grow_tree(bins, np.column_stack([ones, g, h]), crit, int(p["max_depth"]))
            margin = margin + tree.value[leaf_of]
            self.trees.append(tree)
            losses.append(float(margin_loss(y, margin).mean()))
        self.metadata.update(seed=seed, rounds_completed=len(self.trees), train_loss=losses)
        return self

    def raw_margin(self, X):
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def _predict(self, X):
        return expit(self.raw_margin(X))

    def complexity(self):
        return float(sum(t.n_leaves for t in self.trees))

    def state(self):
        return {
            "base_score": self.base_score,
            "trees": [t.to_nested(self.feature_names) for t in self.trees],
        }

    def load_state(self, state):
        self.base_score = float(state["base_score"])
        self.trees = [Tree.from_nested(t) for t in state["trees"]]


# --------------------------------------------------------------------------
# CART and forests


class CARTModel(Model):
    family = "cart"

    def fit(self, X, y, seed=0):
        X, y = _check_fit_inputs(X, y, need_both=False)
        p = self.spec.params
        stats = np.column_stack([np.ones(len(y)), y])
        self.tree, _ = grow_tree(
            FeatureBins(X), stats, GiniCriterion(p["min_samples_leaf"]), int(p["max_depth"])
        )
        self.metadata.update(seed=seed)
        return self

    def _predict(self, X):
        return self.tree.predict(X)

    def complexity(self):
        return float(self.tree.n_leaves)

    def state(self):
        return {"tree": self.tree.to_nested(self.feature_names)}

    def load_state(self, state):
        self.tree = Tree.from_nested(state["tree"])


def _resolve_max_features(setting, d: int) -> int:
    if setting in (None, "all"):
        return d
    if setting == "sqrt":
        return max(1, math.isqrt(d))
    if isinstance(setting, float) and 0 < setting <= 1:
        return max(1, int(round(setting * d)))
    return max(1, min(d, int(setting)))


def _grow_forest_tree(bins, y, weights, crit, max_depth, max_features, seed):
    rng = np.random.default_rng(seed)
    w = weights(rng)
    stats = np.column_stack([w, w * y])
    tree, _ = grow_tree(bins, stats, crit, max_depth, max_features=max_features, rng=rng)
    return tree


class RandomForestModel(Model):
    family = "random_forest"
    balanced = False

    def _bootstrap(self, y):
        n = len(y)
        if not self.balanced:
            return lambda rng: np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        pos = np.flatnonzero(y == 1)
        neg = np.flatnonzero(y == 0)
        size = min(len(pos), len(neg))

        def draw(rng):
            picks = np.concatenate([rng.choice(pos, size), rng.choice(neg, size)])
            return np.bincount(picks, minlength=n).astype(np.float64)

        return draw

    def fit(self, X, y, seed=0, n_jobs=1):
        X, y = _check_fit_inputs(X, y, need_both=True)
        p = self.spec.params
        bins = FeatureBins(X)
        crit = GiniCriterion(p["min_samples_leaf"])
        mf = _resolve_max_features(p["max_features"], X.shape[1])
        draw = self._bootstrap(y)
        # per-tree seeds make the result independent of worker scheduling
        jobs = (
            delayed(_grow_forest_tree)(bins, y, draw, crit, int(p["max_depth"]), mf, seed + t)
            for t in range(int(p["n_trees"]))
        )
        self.trees = Parallel(n_jobs=n_jobs, prefer="threads")(jobs)
        self.metadata.update(seed=seed, max_features=mf)
        return self

    def _predict(self, X):
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def complexity(self):
        return float(sum(t.n_leaves for t in self.trees))

    def state(self):
        return {"trees": [t.to_nested(self.feature_names) for t in self.trees]}

    def load_state(self, state):
        self.trees = [Tree.from_nested(t) for t in state["trees"]]


class BalancedRandomForestModel(RandomForestModel):
    family = "balanced_random_forest"
    balanced = True


# --------------------------------------------------------------------------
# neighbours, naive Bayes, linear risk scorer


class KNNModel(Model):
    """k nearest neighbours on train-standardized features; score = neighbour positive rate."""

    family = "knn"

    def fit(self, X, y, seed=0):
        X, y = _check_fit_inputs(X, y, need_both=False)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        self.points = (X - self.mean) / self.std
        self.labels = y.astype(np.float64)
        self.metadata.update(seed=seed)
        return self

    def _predict(self, X, chunk=512):
        k = min(int(self.spec.params["k"]), len(self.points))
        Z = (X - self.mean) / self.std
        out = np.empty(len(Z))
        for start in range(0, len(Z), chunk):
            block = Z[start : start + chunk]
            d2 = np.zeros((len(block), len(self.points)))
            for j in range(Z.shape[1]):
                d2 += (block[:, j, None] - self.points[None, :, j]) ** 2
            idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
            out[start : start + len(block)] = self.labels[idx].mean(axis=1)
        return out

    def complexity(self):
        return float(self.spec.params["k"])

    def state(self):
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "points": self.points.tolist(),
            "labels": self.labels.tolist(),
        }

    def load_state(self, state):
        self.mean = np.array(state["mean"])
        self.std = np.array(state["std"])
        self.points = np.array(state["points"]).reshape(-1, self.n_features)
        self.labels = np.array(state["labels"])


class NaiveBayesModel(Model):
    """Gaussian naive Bayes."""

    family = "naive_bayes"

    def fit(self, X, y, seed=0):
        X, y = _check_fit_inputs(X, y, need_both=True)
        eps = float(self.spec.params["var_smoothing"]) * max(float(X.var(axis=0).max()), 1e-12)
        self.prior = np.array([np.mean(y == 0), np.mean(y == 1)])
        self.means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
        self.vars = np.stack([X[y == c].var(axis=0) + eps for c in (0, 1)])
        self.metadata.update(seed=seed)
        return self

    def _predict(self, X):
        ll = []
        for c in (0, 1):
            ll.append(
                math.log(self.prior[c])
                - 0.5 * np.sum(np.log(2 * np.pi * self.vars[c]) + (X - self.means[c]) ** 2 / self.vars[c], axis=1)
            )
        return expit(ll[1] - ll[0])

    def complexity(self):
        return float(4 * self.n_features + 1)

    def state(self):
        return {"prior": self.prior.tolist(), "means": self.means.tolist(), "vars": self.vars.tolist()}

    def load_state(self, state):
        self.prior = np.array(state["prior"])
        self.means = np.array(state["means"])
        self.vars = np.array(state["vars"])


class LinearRiskModel(Model):
    """Risk = activation(w . x + b) with w fit by gradient descent on logistic loss.

    Training runs on standardized features; the stored weights are mapped
    back so that they apply to the raw encoded features directly.
    """

    family = "linear_risk"

    def fit(self, X, y, seed=0):
        X, y = _check_fit_inputs(X, y, need_both=True)
        p = self.spec.params
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        Z = (X - mean) / std
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 0.01, Z.shape[1])
        b = 0.0
        lr, l2 = float(p["learning_rate"]), float(p["l2"])
        for _ in range(int(p["epochs"])):
            r = expit(Z @ w + b) - y
            w -= lr * (Z.T @ r / len(y) + l2 * w)
            b -= lr * float(r.mean())
        self.weights = w / std
        self.bias = float(b - np.sum(w * mean / std))
        self.metadata.update(seed=seed, epochs=int(p["epochs"]))
        return self

    def linear_score(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def _predict(self, X):
        z = self.linear_score(X)
        if self.spec.params["activation"] == "relu_clamped":
            return np.clip(z, 0.0, 1.0)
        return expit(z)

    def complexity(self):
        return float(self.n_features + 1)

    def state(self):
        return {"weights": self.weights.tolist(), "bias": self.bias}

    def load_state(self, state):
        self.weights = np.array(state["weights"], dtype=np.float64)
        self.bias = float(state["bias"])


LEARNERS = {
    cls.family: cls
    for cls in (
        GBDTModel,
        CARTModel,
        RandomForestModel,
        BalancedRandomForestModel,
        KNNModel,
        NaiveBayesModel,
        LinearRiskModel,
    )
}
