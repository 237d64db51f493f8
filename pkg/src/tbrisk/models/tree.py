"""Level-wise binary tree growth shared by CART, forests and the booster.

Split search is exact greedy: every feature is bucketed by its sorted
distinct training values, per-node sufficient statistics are accumulated
with ``np.bincount`` and every boundary between two values present in a node
is scored. The stored threshold is the midpoint between those two values and
rows with ``x <= threshold`` go left. Equal gains resolve to the lower
feature index, then the lower threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# above this many histogram cells per row the sparse (sort-based) path is cheaper
_DENSE_CELLS_PER_ROW = 8


class FeatureBins:
    """Distinct-value buckets of a training matrix."""

    def __init__(self, X: np.ndarray):
        self.uniques = []
        # feature-major so that per-feature row gathers are contiguous
        codes = np.empty((X.shape[1], X.shape[0]), dtype=np.int64)
        for j in range(X.shape[1]):
            u, inv = np.unique(X[:, j], return_inverse=True)
            self.uniques.append(u)
            codes[j] = inv.ravel()
        self.codes = codes

    @property
    def n_features(self) -> int:
        return len(self.uniques)

    def threshold(self, feature: int, lo_bin: int, hi_bin: int) -> float:
        lo, hi = self.uniques[feature][lo_bin], self.uniques[feature][hi_bin]
        mid = lo + (hi - lo) / 2.0
        return float(lo if mid >= hi else mid)


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r, n = rows[inner], node[inner]
            go_left = X[r, f[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_nested(self, names: list[str] | None = None, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf": float(self.value[node]), "cover": float(self.cover[node])}
        f = int(self.feature[node])
        return {
            "feature": f,
            "feature_name": names[f] if names else None,
            "threshold": float(self.threshold[node]),
            "cover": float(self.cover[node]),
            "left": self.to_nested(names, int(self.left[node])),
            "right": self.to_nested(names, int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, data: dict) -> "Tree":
        feature, threshold, left, right, value, cover = [], [], [], [], [], []

        def visit(d) -> int:
            idx = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            cover.append(d.get("cover", 0.0))
            if "leaf" in d:
                value[idx] = d["leaf"]
                return idx
            feature[idx] = d["feature"]
            threshold[idx] = d["threshold"]
            left[idx] = visit(d["left"])
            right[idx] = visit(d["right"])
            return idx

        visit(data)
        return cls(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=np.float64),
            np.array(cover, dtype=np.float64),
        )


class GiniCriterion:
    """Weighted Gini impurity decrease; statistics are (weight, weighted positives)."""

    def __init__(self, min_samples_leaf: float = 1.0):
        self.min_samples_leaf = min_samples_leaf

    @staticmethod
    def _impurity_mass(w, pos):
        # w * gini = w * 2p(1-p) = 2 * pos * (w - pos) / w
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(w > 0, 2.0 * pos * (w - pos) / w, 0.0)

    def gain(self, left, right, total):
        g = (
            self._impurity_mass(total[..., 0], total[..., 1])
            - self._impurity_mass(left[..., 0], left[..., 1])
            - self._impurity_mass(right[..., 0], right[..., 1])
        )
        ok = (left[..., 0] >= self.min_samples_leaf) & (right[..., 0] >= self.min_samples_leaf)
        return np.where(ok, g, -np.inf)

    def leaf(self, total):
        return total[..., 1] / np.maximum(total[..., 0], 1e-300)

    def cover(self, total):
        return total[..., 0]


class NewtonCriterion:
    """Second-order boosting split gain; statistics are (weight, gradient, hessian).

    gain = 1/2 [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] - gamma,
    leaf weight = -learning_rate * G / (H + lam).
    """

    def __init__(self, lam: float = 1.0, gamma: float = 0.0, min_child_hessian: float = 1.0,
                 learning_rate: float = 0.1):
        self.lam = lam
        self.gamma = gamma
        self.min_child_hessian = min_child_hessian
        self.learning_rate = learning_rate

    def _score(self, G, H):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(H + self.lam > 0, G * G / (H + self.lam), 0.0)

    def gain(self, left, right, total):
        g = 0.5 * (
            self._score(left[..., 1], left[..., 2])
            + self._score(right[..., 1], right[..., 2])
            - self._score(total[..., 1], total[..., 2])
        ) - self.gamma
        ok = (left[..., 2] >= self.min_child_hessian) & (right[..., 2] >= self.min_child_hessian)
        return np.where(ok, g, -np.inf)

    def leaf(self, total):
        G, H = total[..., 1], total[..., 2]
        denom = H + self.lam
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(denom > 0, -G / denom, 0.0)
        return self.learning_rate * w

    def cover(self, total):
        return total[..., 2]


def _best_dense(codes, n_bins, local, stats, m, criterion):
    """Best split per node for one feature using dense node x bin histograms."""
    key = local * n_bins + codes
    hist = np.stack(
        [np.bincount(key, weights=stats[:, s], minlength=m * n_bins) for s in range(stats.shape[1])],
        axis=-1,
    ).reshape(m, n_bins, -1)
    cum = np.cumsum(hist, axis=1)
    total = cum[:, -1:, :]
    left = cum[:, :-1, :]
    gain = criterion.gain(left, total - left, np.broadcast_to(total, left.shape))
    # a boundary is real only if the node has rows on both sides; the
    # criterion's minimum-child checks already reject empty sides, but with a
    # zero minimum we still need a present value to the left.
    present = hist[:, :, 0] > 0
    gain = np.where(present[:, :-1], gain, -np.inf)
    if gain.shape[1] == 0:
        return np.full(m, -np.inf), np.zeros(m, int), np.zeros(m, int)
    best = np.argmax(gain, axis=1)
    best_gain = gain[np.arange(m), best]
    # next bin present in the node, i.e. the upper side of the chosen boundary
    after = present & (np.arange(n_bins)[None, :] > best[:, None])
    hi = np.argmax(after, axis=1)
    return best_gain, best, hi


def _best_sparse(codes, n_bins, local, stats, m, criterion):
    """Same result as :func:`_best_dense` via sorting the occupied cells only."""
    key = local * n_bins + codes
    order = np.argsort(key, kind="stable")
    skey = key[order]
    starts = np.r_[0, np.flatnonzero(np.diff(skey)) + 1]
    ukey = skey[starts]
    sums = np.add.reduceat(stats[order], starts, axis=0)
    node = ukey // n_bins
    bins = ukey % n_bins
    group_start = np.r_[0, np.flatnonzero(np.diff(node)) + 1]
    group_len = np.diff(np.r_[group_start, len(node)])
    gs = np.repeat(group_start, group_len)
    cum = np.cumsum(sums, axis=0)
    offset = np.where(gs[:, None] > 0, cum[np.maximum(gs - 1, 0)], 0.0)
    left = cum - offset
    last = np.repeat(group_start + group_len - 1, group_len)
    total = left[last]
    gain = criterion.gain(left, total - left, total)
    gain = np.where(np.arange(len(node)) < last, gain, -np.inf)
    # first maximum within each node group keeps the lower-threshold tie rule
    gmax = np.maximum.reduceat(gain, group_start)
    pos = np.arange(len(node))
    first = np.minimum.reduceat(np.where(gain == np.repeat(gmax, group_len), pos, len(node)), group_start)
    best_gain = np.full(m, -np.inf)
    best = np.zeros(m, dtype=np.int64)
    hi = np.zeros(m, dtype=np.int64)
    owner = node[group_start]
    best_gain[owner] = gmax
    best[owner] = bins[first]
    hi[owner] = bins[np.minimum(first + 1, len(node) - 1)]
    return best_gain, best, hi


def grow_tree(
    bins: FeatureBins,
    stats: np.ndarray,
    criterion,
    max_depth: int,
    rows: np.ndarray | None = None,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[Tree, np.ndarray]:
    """Grow one tree depth-wise.

    ``stats`` holds per-row sufficient statistics with a non-negative weight
    in column 0; only ``rows`` (default: rows with positive weight)
    participate. Returns the tree and, for every training row, the index of
    the leaf it lands in (``-1`` for non-participating rows).
    """
    d, n = bins.codes.shape
    if rows is None:
        rows = np.flatnonzero(stats[:, 0] > 0)
    feature, threshold, left_c, right_c = [-1], [0.0], [-1], [-1]
    row_node = np.full(n, -1, dtype=np.int64)
    row_node[rows] = 0
    totals = [stats[rows].sum(axis=0)]
    frontier = [0]
    active = rows

    for _ in range(max_depth):
        if not frontier or len(active) == 0:
            break
        m = len(frontier)
        lut = np.full(len(feature), -1, dtype=np.int64)
        lut[np.asarray(frontier)] = np.arange(m)
        full = len(active) == n
        local = lut[row_node[active]]
        st = stats if full else stats[active]
        best_gain = np.full(m, -np.inf)
        best_feat = np.full(m, -1, dtype=np.int64)
        best_lo = np.zeros(m, dtype=np.int64)
        best_hi = np.zeros(m, dtype=np.int64)
        allowed = None
        if max_features is not None and max_features < d:
            allowed = np.zeros((m, d), dtype=bool)
            picks = np.argsort(rng.random((m, d)), axis=1)[:, :max_features]
            np.put_along_axis(allowed, picks, True, axis=1)
        for j in range(d):
            n_bins = len(bins.uniques[j])
            if n_bins < 2:
                continue
            codes = bins.codes[j] if full else bins.codes[j][active]
            if m * n_bins <= _DENSE_CELLS_PER_ROW * len(active) + 1024:
                g, lo, hi = _best_dense(codes, n_bins, local, st, m, criterion)
            else:
                g, lo, hi = _best_sparse(codes, n_bins, local, st, m, criterion)
            if allowed is not None:
                g = np.where(allowed[:, j], g, -np.inf)
            better = g > best_gain
            best_gain[better] = g[better]
            best_feat[better] = j
            best_lo[better] = lo[better]
            best_hi[better] = hi[better]

        new_frontier = []
        split_feat = np.full(m, -1, dtype=np.int64)
        lut_l = np.full(m, -1, dtype=np.int64)
        lut_r = np.full(m, -1, dtype=np.int64)
        for i, node in enumerate(frontier):
            if not (best_gain[i] > 0):
                continue
            j = int(best_feat[i])
            l_id, r_id = len(feature), len(feature) + 1
            feature[node] = j
            threshold[node] = bins.threshold(j, int(best_lo[i]), int(best_hi[i]))
            left_c[node], right_c[node] = l_id, r_id
            feature.extend([-1, -1])
            threshold.extend([0.0, 0.0])
            left_c.extend([-1, -1])
            right_c.extend([-1, -1])
            totals.extend([None, None])
            split_feat[i] = j
            lut_l[i], lut_r[i] = l_id, r_id
            new_frontier.extend([l_id, r_id])
        if not new_frontier:
            break
        split_rows = split_feat[local] >= 0
        moved = active[split_rows]
        parent_local = local[split_rows]
        go_right = bins.codes[split_feat[parent_local], moved] > best_lo[parent_local]
        row_node[moved] = np.where(go_right, lut_r[parent_local], lut_l[parent_local])
        child_totals = _node_totals(row_node[moved], stats[moved], len(feature))
        for node in new_frontier:
            totals[node] = child_totals[node]
        frontier = new_frontier
        active = moved

    totals_arr = np.array(totals)
    tree = Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left_c, dtype=np.int64),
        np.array(right_c, dtype=np.int64),
        np.asarray(criterion.leaf(totals_arr), dtype=np.float64),
        np.asarray(criterion.cover(totals_arr), dtype=np.float64),
    )
    return tree, row_node


def _node_totals(node_ids: np.ndarray, stats: np.ndarray, n_nodes: int) -> np.ndarray:
    return np.stack(
        [np.bincount(node_ids, weights=stats[:, s], minlength=n_nodes) for s in range(stats.shape[1])],
        axis=-1,
    )
