"""Model-agnostic attributions: permutation-sampled Shapley values and a
locally weighted linear surrogate."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegeneratePerturbation, WidthMismatch


def _scorer(model):
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    if callable(model):
        return lambda X: np.asarray(model(X), dtype=np.float64)
    raise ConfigError("model must expose predict_proba or be callable")


def _names(model, d):
    names = getattr(model, "feature_names", None)
    return list(names) if names and len(names) == d else [f"x{i}" for i in range(d)]


@dataclass
class Attribution:
    features: list[str]
    contributions: np.ndarray
    base_value: float
    instance_score: float
    std_errors: np.ndarray | None = None
    efficiency_se: float = 0.0  # standard error of base + sum(contributions)
    extra: dict = field(default_factory=dict)

    @property
    def efficiency_gap(self) -> float:
        return self.base_value + math.fsum(self.contributions) - self.instance_score

    def ranked(self, top_k: int | None = None) -> list[tuple[str, float]]:
        order = sorted(range(len(self.features)), key=lambda j: (-abs(self.contributions[j]), j))
        if top_k is not None:
            order = order[:top_k]
        return [(self.features[j], float(self.contributions[j])) for j in order]

    def to_dict(self) -> dict:
        d = {
            "features": self.features,
            "contributions": [float(v) for v in self.contributions],
            "base_value": self.base_value,
            "instance_score": self.instance_score,
            "efficiency_se": self.efficiency_se,
        }
        if self.std_errors is not None:
            d["std_errors"] = [float(v) for v in self.std_errors]
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "value"])
            for name, value in zip(self.features, self.contributions):
                w.writerow([name, repr(float(value))])


def _check_width(x, background, d_model):
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ConfigError("background must have at least one row")
    if background.shape[1] != len(x) or (d_model is not None and len(x) != d_model):
        raise WidthMismatch(f"instance width {len(x)}, background width {background.shape[1]}, model {d_model}")
    return x, background


def shapley_sample(model, x, background, n_permutations: int = 200, seed: int = 0) -> Attribution:
    """Monte-Carlo Shapley values of ``model`` at ``x``.

    Each sample draws a feature permutation and a background row ``b``, then
    walks from ``b`` to ``x`` switching one feature at a time; the score change
    at each switch is that feature's marginal contribution. All walks are
    scored in one batched call, so the result depends only on ``seed``.
    """
    if n_permutations < 1:
        raise ConfigError("n_permutations must be >= 1")
    f = _scorer(model)
    x, background = _check_width(x, background, getattr(model, "n_features", None))
    d = len(x)
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((n_permutations, d)), axis=1, kind="stable")
    rows = rng.integers(0, len(background), n_permutations)

    # walk[p, s] has the first s features of perms[p] taken from x
    pos = np.argsort(perms, axis=1)  # position of each feature in its permutation
    from_x = pos[:, None, :] < np.arange(d + 1)[None, :, None]
    walk = np.where(from_x, x[None, None, :], background[rows][:, None, :])
    scores = f(walk.reshape(-1, d)).reshape(n_permutations, d + 1)
    steps = np.diff(scores, axis=1)
    phi = np.zeros((n_permutations, d))
    np.put_along_axis(phi, perms, steps, axis=1)

    base = float(np.mean(f(background)))
    fx = float(f(x[None, :])[0])
    contributions = phi.mean(axis=0)
    se = phi.std(axis=0, ddof=1) / math.sqrt(n_permutations) if n_permutations > 1 else np.zeros(d)
    # base + sum(phi) - f(x) = base - mean f(b_p): its noise is that of the sampled background scores
    start = scores[:, 0]
    eff_se = float(start.std(ddof=1) / math.sqrt(n_permutations)) if n_permutations > 1 else 0.0
    return Attribution(_names(model, d), contributions, base, fx, se, eff_se)


def shapley_exact(model, x, background_row) -> Attribution:
    """Exact Shapley values against a single background row by enumerating
    all 2^d coalitions. Only practical for small ``d``."""
    f = _scorer(model)
    x, bg = _check_width(x, background_row, getattr(model, "n_features", None))
    b = bg[0]
    d = len(x)
    if d > 16:
        raise ConfigError("exact enumeration is limited to d <= 16")
    masks = np.array(list(itertools.product((0, 1), repeat=d)), dtype=bool)
    points = np.where(masks, x, b)
    value = dict(zip(map(tuple, masks.astype(int)), f(points)))
    phi = np.zeros(d)
    for mask in value:
        size = sum(mask)
        for j in range(d):
            if mask[j]:
                continue
            with_j = mask[:j] + (1,) + mask[j + 1 :]
            weight = math.factorial(size) * math.factorial(d - size - 1) / math.factorial(d)
            phi[j] += weight * (value[with_j] - value[mask])
    base = float(f(b[None, :])[0])
    return Attribution(_names(model, d), phi, base, float(f(x[None, :])[0]))


def mean_abs_shapley(model, X, background, n_permutations: int = 50, seed: int = 0) -> list[tuple[str, float]]:
    """Mean |contribution| per feature over the rows of ``X``, largest first."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    total = np.zeros(X.shape[1])
    names = None
    for i, row in enumerate(X):
        att = shapley_sample(model, row, background, n_permutations, seed + i)
        total += np.abs(att.contributions)
        names = att.features
    mean = total / len(X)
    order = sorted(range(len(mean)), key=lambda j: (-mean[j], j))
    return [(names[j], float(mean[j])) for j in order]


# --------------------------------------------------------------------------
# local surrogate


@dataclass(frozen=True)
class SurrogateConfig:
    n_samples: int = 5000
    kernel_width: float | None = None  # defaults to 0.75 * sqrt(d)
    ridge: float = 1.0
    top_k: int = 10
    seed: int = 0

    def width(self, d: int) -> float:
        sigma = self.kernel_width if self.kernel_width is not None else 0.75 * math.sqrt(d)
        if sigma <= 0:
            raise ConfigError("kernel width must be > 0")
        return sigma


@dataclass
class TrainStats:
    """Per-feature mean/std plus, for categorical feature groups, the observed
    joint values and their frequencies (so a perturbation draws a real encoding)."""

    mean: np.ndarray
    std: np.ndarray
    groups: list = field(default_factory=list)  # [(feature indices, values (m, w), probs (m,))]

    @classmethod
    def fit(cls, X, categorical_groups=()) -> "TrainStats":
        X = np.asarray(X, dtype=np.float64)
        groups = []
        for idx in categorical_groups:
            idx = list(idx)
            values, counts = np.unique(X[:, idx], axis=0, return_counts=True)
            groups.append((idx, values, counts / counts.sum()))
        return cls(X.mean(axis=0), X.std(axis=0), groups)


def encoder_groups(names: list[str], categorical: list[str]) -> list[list[int]]:
    """Feature indices belonging to each categorical column, by encoded name."""
    out = []
    for col in categorical:
        idx = [i for i, n in enumerate(names) if n == col or (n.startswith(col + "_") and n[len(col) + 1 :].isdigit())]
        if idx:
            out.append(idx)
    return out


@dataclass
class SurrogateResult:
    attribution: Attribution
    coefficients: np.ndarray
    intercept: float
    r2: float
    top: list

    def to_dict(self) -> dict:
        d = self.attribution.to_dict()
        d.update(
            coefficients=[float(c) for c in self.coefficients],
            intercept=self.intercept,
            r2=self.r2,
            top=[[n, c] for n, c in self.top],
        )
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def local_surrogate(model, x, cfg: SurrogateConfig, stats: TrainStats) -> SurrogateResult:
    """Fit a kernel-weighted ridge regression to the model around ``x``.

    Numeric features are perturbed by Gaussian noise with their train std;
    categorical groups are resampled from their train marginal. Samples are
    weighted by ``exp(-dist^2 / sigma^2)`` with distances taken on
    train-standardized coordinates. Contributions are
    ``coef_j * (x_j - mean_j)``.
    """
    f = _scorer(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    d = len(x)
    n_model = getattr(model, "n_features", None)
    if n_model is not None and n_model != d or len(stats.mean) != d:
        raise WidthMismatch(f"instance width {d} does not match model/stats")
    if cfg.n_samples < d + 2:
        raise ConfigError(f"n_samples must be >= d + 2 = {d + 2}")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples
    Z = np.repeat(x[None, :], n, axis=0)
    in_group = np.zeros(d, dtype=bool)
    for idx, values, probs in stats.groups:
        in_group[idx] = True
        Z[:, idx] = values[rng.choice(len(values), size=n, p=probs)]
    numeric = np.flatnonzero(~in_group)
    Z[:, numeric] += rng.standard_normal((n, len(numeric))) * stats.std[numeric]
    Z[0] = x  # keep the instance itself in the sample

    scale = np.where(stats.std > 0, stats.std, 1.0)
    dist2 = (((Z - x) / scale) ** 2).sum(axis=1)
    w = np.exp(-dist2 / cfg.width(d) ** 2)
    y = f(Z)

    A = (Z - stats.mean) / scale
    varies = A.std(axis=0) > 0
    if not varies.any():
        raise DegeneratePerturbation("no feature varies across the perturbation sample")
    sw = w.sum()
    a_mean = (w[:, None] * A).sum(axis=0) / sw
    y_mean = float(w @ y / sw)
    Ac = (A - a_mean)[:, varies]
    if np.ptp(y) == 0:
        y_mean = float(y[0])  # constant model: the fit is exactly flat
    yc = y - y_mean
    gram = Ac.T @ (w[:, None] * Ac) + cfg.ridge * np.eye(Ac.shape[1])
    beta_v = np.linalg.solve(gram, Ac.T @ (w * yc))
    beta = np.zeros(d)
    beta[varies] = beta_v
    coef = beta / scale
    intercept = y_mean - float(a_mean @ beta)

    ss_tot = float(w @ yc**2)
    if ss_tot <= 0:
        r2 = 0.0  # constant model: nothing to explain
    else:
        resid = yc - Ac @ beta_v
        r2 = 1.0 - float(w @ resid**2) / ss_tot
    contributions = coef * (x - stats.mean)
    names = _names(model, d)
    order = sorted(range(d), key=lambda j: (-abs(coef[j]), j))[: cfg.top_k]
    att = Attribution(
        names,
        contributions,
        base_value=y_mean,
        instance_score=float(f(x[None, :])[0]),
    )
    return SurrogateResult(att, coef, float(intercept), r2, [(names[j], float(coef[j])) for j in order])
