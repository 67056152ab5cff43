"""Gradient-boosted regression trees with exact greedy splits.

Squared-error objective, second-order leaf weights with L2 shrinkage
(``reg_lambda``), level-wise growth to ``max_depth``. Trees are stored in heap
layout (children of node ``k`` at ``2k+1``/``2k+2``) so a whole ensemble can be
evaluated with a few vectorised gathers.
"""

import logging

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import validate_X, validate_y
from .exceptions import ParameterError

logger = logging.getLogger(__name__)

MIN_ROWS = 100


class GradientBoostedTrees(RegressorMixin, BaseEstimator):
    """Gradient-boosted tree ensemble.

    Parameters
    ----------
    n_estimators : int, default=200
    max_depth : int, default=4
    learning_rate : float, default=0.1
    subsample : float, default=1.0
        Row fraction drawn (without replacement, seeded) for each tree.
    reg_lambda : float, default=1.0
        L2 penalty on leaf weights.
    min_child_weight : float, default=1.0
        Minimum number of (sampled) rows in a child.
    random_state : int, default=0

    Attributes
    ----------
    base_score_ : float
    feature_, threshold_, value_ : ndarray of shape (n_trees, 2**(max_depth+1) - 1)
        Split feature (-1 for leaves), split threshold (``x <= t`` goes left) and
        leaf weight per heap node.
    degenerate_ : bool
        True when the labels were constant and the model is a constant predictor.
    """

    _state_attrs = ("base_score_", "degenerate_", "feature_", "threshold_", "value_", "train_rmse_")

    def __init__(self, n_estimators=200, max_depth=4, learning_rate=0.1, subsample=1.0,
                 reg_lambda=1.0, min_child_weight=1.0, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.subsample = subsample
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.random_state = random_state

    def fit(self, X, y):
        X = validate_X(self, X, reset=True)
        y = validate_y(y, len(X), n_outputs=1)
        if len(X) < MIN_ROWS:
            raise ParameterError(f"GBT training needs at least {MIN_ROWS} rows, got {len(X)}")
        if not (0 < self.subsample <= 1):
            raise ParameterError("subsample must be in (0, 1]")
        if self.max_depth < 1 or self.max_depth > 12:
            raise ParameterError("max_depth must be in [1, 12]")
        n, d = X.shape
        n_nodes = 2 ** (self.max_depth + 1) - 1
        self.degenerate_ = bool(np.ptp(y) == 0)
        self.base_score_ = float(y[0]) if self.degenerate_ else float(y.mean())
        n_trees = 0 if self.degenerate_ else self.n_estimators
        if self.degenerate_:
            logger.warning("constant labels: GBT reduces to a constant predictor")
        self.feature_ = np.full((n_trees, n_nodes), -1, dtype=np.int64)
        self.threshold_ = np.zeros((n_trees, n_nodes))
        self.value_ = np.zeros((n_trees, n_nodes))

        order = np.argsort(X, axis=0, kind="stable")
        cols = np.arange(d)
        rng = np.random.default_rng(self.random_state)
        pred = np.full(n, self.base_score_)
        lam, mcw = float(self.reg_lambda), float(self.min_child_weight)
        key_dtype = np.int16

        for t in range(n_trees):
            h = np.ones(n)
            if self.subsample < 1:
                h[:] = 0.0
                h[rng.choice(n, size=max(1, int(round(self.subsample * n))), replace=False)] = 1.0
            g = (y - pred) * h
            node = np.zeros(n, dtype=key_dtype)
            perm = order
            open_nodes = [0]
            for level in range(self.max_depth):
                if not open_nodes:
                    break
                if level > 0:
                    regroup = np.argsort(node[perm], axis=0, kind="stable")
                    perm = np.take_along_axis(perm, regroup, axis=0)
                node_sorted = node[perm[:, 0]]
                starts = np.searchsorted(node_sorted, open_nodes, side="left")
                ends = np.searchsorted(node_sorted, open_nodes, side="right")
                gs = np.cumsum(g[perm], axis=0)
                hs = np.cumsum(h[perm], axis=0)
                xs = X[perm, cols]
                next_open = []
                for k, s, e in zip(open_nodes, starts, ends):
                    if e - s < 2:
                        continue
                    g0 = gs[s - 1, 0] if s > 0 else 0.0
                    h0 = hs[s - 1, 0] if s > 0 else 0.0
                    g_tot, h_tot = gs[e - 1, 0] - g0, hs[e - 1, 0] - h0
                    gl = gs[s:e - 1] - (gs[s - 1] if s > 0 else 0.0)
                    hl = hs[s:e - 1] - (hs[s - 1] if s > 0 else 0.0)
                    gr, hr = g_tot - gl, h_tot - hl
                    gain = gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - g_tot ** 2 / (h_tot + lam)
                    valid = (xs[s:e - 1] < xs[s + 1:e]) & (hl >= mcw) & (hr >= mcw)
                    gain = np.where(valid, gain, -np.inf)
                    best = int(np.argmax(gain))
                    p, j = divmod(best, d)
                    if not np.isfinite(gain[p, j]) or gain[p, j] <= 1e-12 * (g_tot ** 2 / (h_tot + lam) + 1e-300):
                        continue
                    lo, hi = xs[s + p, j], xs[s + p + 1, j]
                    thr = lo + (hi - lo) / 2
                    if not (lo <= thr < hi):
                        thr = lo
                    self.feature_[t, k] = j
                    self.threshold_[t, k] = thr
                    rows = perm[s:e, j]
                    node[rows[:p + 1]] = 2 * k + 1
                    node[rows[p + 1:]] = 2 * k + 2
                    next_open += [2 * k + 1, 2 * k + 2]
                open_nodes = next_open
            g_leaf = np.bincount(node, weights=g, minlength=n_nodes)
            h_leaf = np.bincount(node, weights=h, minlength=n_nodes)
            denom = h_leaf + lam
            leaf_value = np.divide(g_leaf, denom, out=np.zeros(n_nodes), where=denom > 0)
            self.value_[t] = np.where(self.feature_[t] < 0, leaf_value, 0.0)
            pred = pred + self.learning_rate * self.value_[t, node]
        self.train_rmse_ = float(np.sqrt(np.mean((y - pred) ** 2)))
        return self

    def apply(self, X, trees=None):
        """Leaf index of every row in every tree (or in the given subset of trees)."""
        check_is_fitted(self, "value_")
        X = validate_X(self, X, reset=False)
        return self._apply(X, trees)

    def _apply(self, X, trees=None):
        tidx = np.arange(len(self.feature_)) if trees is None else np.asarray(trees)
        feat, thr = self.feature_[tidx], self.threshold_[tidx]
        node = np.zeros((len(tidx), len(X)), dtype=np.int64)
        t_col = np.arange(len(tidx))[:, None]
        rows = np.arange(len(X))[None, :]
        for _ in range(self.max_depth):
            f = feat[t_col, node]
            internal = f >= 0
            xv = X[rows, np.maximum(f, 0)]
            right = xv > thr[t_col, node]
            node = np.where(internal, 2 * node + 1 + right, node)
        return node

    def _contributions(self, X, trees=None):
        tidx = np.arange(len(self.feature_)) if trees is None else np.asarray(trees)
        leaves = self._apply(X, tidx)
        return self.value_[tidx[:, None], leaves]

    def predict(self, X):
        check_is_fitted(self, "value_")
        X = validate_X(self, X, reset=False)
        if len(self.value_) == 0:
            return np.full(len(X), self.base_score_)
        return self.base_score_ + self.learning_rate * self._contributions(X).sum(axis=0)

    def predict_with_column(self, X, j, values, trees=None):
        """Raw tree sum (no base score / shrinkage) over ``trees`` with column ``j`` swapped.

        ``X`` must already be a validated float array.
        """
        trees = self.trees_using(j) if trees is None else np.asarray(trees, dtype=np.int64)
        return _routed_sum(self.feature_, self.threshold_, self.value_, X, trees.astype(np.int64),
                           int(j), np.ascontiguousarray(values, dtype=float))

    def trees_using(self, j):
        """Indices of the trees that split on feature ``j``."""
        return np.flatnonzero((self.feature_ == j).any(axis=1))


@njit(cache=True)
def _routed_sum(feature, threshold, value, X, trees, col, col_values):
    """Sum of leaf weights over ``trees`` with column ``col`` of X replaced by ``col_values``."""
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in trees:
            k = 0
            f = feature[t, k]
            while f >= 0:
                x = col_values[i] if f == col else X[i, f]
                k = 2 * k + 2 if x > threshold[t, k] else 2 * k + 1
                f = feature[t, k]
            acc += value[t, k]
        out[i] = acc
    return out


def train_gbt(X, y, n_estimators=200, max_depth=4, learning_rate=0.1, subsample=1.0,
              reg_lambda=1.0, random_state=0):
    return GradientBoostedTrees(n_estimators=n_estimators, max_depth=max_depth,
                                learning_rate=learning_rate, subsample=subsample,
                                reg_lambda=reg_lambda, random_state=random_state).fit(X, y)
