"""Minority-class oversampling on an encoded training matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingleClass, TooFewMinority

METHODS = ("smote", "random_oversample", "none")


@dataclass(frozen=True)
class ResamplePlan:
    method: str = "none"
    target_ratio: float = 1.0
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown resampling method {self.method!r}")
        if not 0 < self.target_ratio <= 1:
            raise ConfigError("target_ratio must lie in (0, 1]")
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")


def nearest_neighbors(points: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``points`` (Euclidean).

    Equal distances are broken by the lower row index.
    """
    n = len(points)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        # per-feature accumulation keeps distances exact, so ties stay ties
        d2 = np.zeros((len(block), n))
        for j in range(points.shape[1]):
            d2 += (block[:, j, None] - points[None, :, j]) ** 2
        rows = np.arange(len(block))
        d2[rows, start + rows] = np.inf
        out[start : start + len(block)] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def resample(X: np.ndarray, y: np.ndarray, plan: ResamplePlan) -> tuple[np.ndarray, np.ndarray]:
    """Append minority rows until minority/majority reaches ``plan.target_ratio``.

    Original rows are kept in their original order ahead of the new ones.
    SMOTE rows are ``x + u * (x' - x)`` for a uniformly drawn minority row
    ``x``, one of its ``k_neighbors`` nearest minority neighbours ``x'`` and
    ``u ~ U(0, 1)``. Random oversampling copies minority rows with
    replacement.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if plan.method == "none":
        return X, y
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SingleClass("resampling needs both classes present")
    minority = classes[np.argmin(counts)]
    n_min, n_maj = counts.min(), counts.max()
    n_new = int(round(plan.target_ratio * n_maj)) - int(n_min)
    if plan.method == "smote" and n_min <= plan.k_neighbors:
        raise TooFewMinority(
            f"SMOTE with k_neighbors={plan.k_neighbors} needs more than {plan.k_neighbors} minority rows, got {n_min}"
        )
    if n_new <= 0:
        return X, y
    rng = np.random.default_rng(plan.seed)
    pool = X[y == minority]
    base = rng.integers(0, len(pool), size=n_new)
    if plan.method == "random_oversample":
        synthetic = pool[base]
    else:
        neighbors = nearest_neighbors(pool, plan.k_neighbors)
        partner = neighbors[base, rng.integers(0, plan.k_neighbors, size=n_new)]
        u = rng.random(n_new)[:, None]
        synthetic = pool[base] + u * (pool[partner] - pool[base])
    return (
        np.vstack([X, synthetic]),
        np.concatenate([y, np.full(n_new, minority, dtype=y.dtype)]),
    )
