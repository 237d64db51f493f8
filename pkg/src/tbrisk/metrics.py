"""Classification and ranking metrics.

``k`` is always a percentage of the ranked list. Rows are ranked by score
descending with ties broken by original row index, so every metric is
deterministic.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, NoPositives


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ConfigError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if not np.isin(y, (0, 1)).all():
        raise ConfigError("labels must be 0/1")
    return s, y.astype(np.int64)


def ranking(scores) -> np.ndarray:
    """Row order by descending score, stable in row index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def selected_count(k, n: int) -> int:
    """ceil(k/100 * n) computed exactly for integer or decimal ``k``."""
    frac = Fraction(str(k)) if not isinstance(k, Fraction) else k
    return math.ceil(frac * n / 100)


def recall_at_k(scores, labels, k) -> float:
    """Share of all positives found in the top ``k`` percent of the ranking."""
    if not 0 < k <= 100:
        raise ConfigError(f"k must be a percentage in (0, 100], got {k}")
    s, y = _as_arrays(scores, labels)
    total = int(y.sum())
    if total == 0:
        raise NoPositives("recall@k is undefined without positives")
    top = ranking(s)[: selected_count(k, len(s))]
    return int(y[top].sum()) / total


def recall_curve(scores, labels, ks=range(1, 101)) -> dict[int, float]:
    """Recall@k for many k at once (one sort)."""
    s, y = _as_arrays(scores, labels)
    total = int(y.sum())
    if total == 0:
        raise NoPositives("recall@k is undefined without positives")
    hits = np.concatenate([[0], np.cumsum(y[ranking(s)])])
    return {k: int(hits[selected_count(k, len(s))]) / total for k in ks}


def av_recall(scores, labels, a=10, b=40) -> float:
    """Mean of recall@k over the integer percentages a..b inclusive."""
    if a > b:
        raise ConfigError(f"need a <= b, got {a} > {b}")
    curve = recall_curve(scores, labels, range(int(a), int(b) + 1))
    return math.fsum(curve.values()) / len(curve)


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic; tied pairs count one half."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise NoPositives("AUC needs both positive and negative rows")
    ranks = rankdata(s)  # mid-ranks, exact halves
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) at every distinct threshold, starting from (0, 0)."""
    return _roc_pr(*_as_arrays(scores, labels))[0]


def pr_points(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) at every distinct threshold, highest threshold first."""
    return _roc_pr(*_as_arrays(scores, labels))[1]


def _roc_pr(s, y):
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("ROC and PR curves need at least one positive")
    n_neg = len(y) - n_pos
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    tp = np.cumsum(yy)
    fp = np.arange(1, len(yy) + 1) - tp
    last = np.r_[np.flatnonzero(np.diff(ss) != 0), len(ss) - 1]
    roc = [(0.0, 0.0)] + [
        (float(fp[i] / n_neg) if n_neg else 0.0, float(tp[i] / n_pos)) for i in last
    ]
    pr = [(float(tp[i] / n_pos), float(tp[i] / (i + 1))) for i in last]
    return roc, pr


@dataclass
class EvalReport:
    n: int
    positives: int
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    threshold: float = 0.5
    auc_roc: float | None = None
    recall_at: dict = field(default_factory=dict)
    av_recall_10_40: float | None = None
    roc_points: list = field(default_factory=list)
    pr_points: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        d["roc_points"] = [list(p) for p in self.roc_points]
        d["pr_points"] = [list(p) for p in self.pr_points]
        return d

    def summary(self) -> dict:
        """Scalar metrics only (no curves)."""
        d = self.to_dict()
        for key in ("roc_points", "pr_points", "recall_at"):
            d.pop(key)
        d["recall_at_20"] = self.recall_at.get(20)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_curves(self, prefix) -> list[str]:
        """Two-column CSVs for the ROC, PR and recall@k curves."""
        written = []
        for name, header, rows in (
            ("roc", ("fpr", "tpr"), self.roc_points),
            ("pr", ("recall", "precision"), self.pr_points),
            ("recall_at_k", ("k", "recall"), sorted(self.recall_at.items())),
        ):
            path = f"{prefix}_{name}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for a, b in rows:
                    w.writerow([repr(a) if isinstance(a, float) else a, repr(float(b))])
            written.append(path)
        return written


def classification_report(scores, labels, threshold: float = 0.5) -> EvalReport:
    """Confusion metrics at ``threshold`` plus ranking metrics and curves.

    Ranking metrics, AUC and curves are left absent (``None`` / empty) when
    they are undefined, and the reason is recorded in ``notes``.
    """
    s, y = _as_arrays(scores, labels)
    if len(s) == 0:
        raise ConfigError("cannot evaluate an empty score vector")
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    tn = int((~pred & (y == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    report = EvalReport(
        n=len(s),
        positives=int(y.sum()),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=(tp + tn) / len(s),
        precision=precision,
        recall=recall,
        f1=f1,
        threshold=threshold,
    )
    n_pos = report.positives
    if n_pos == 0:
        report.notes.append("NoPositives: ranking metrics, AUC and curves are undefined")
        return report
    report.recall_at = recall_curve(s, y)
    report.av_recall_10_40 = math.fsum(report.recall_at[k] for k in range(10, 41)) / 31
    if n_pos == len(y):
        report.notes.append("NoNegatives: AUC and ROC are undefined")
    else:
        report.auc_roc = auc_roc(s, y)
    report.roc_points, report.pr_points = _roc_pr(s, y)
    return report
