"""Three-stage critical-feature filter.

1. absolute mean deviation screen on min-max normalised features (keep the top share);
2. permutation importance of each survivor in a per-DM gradient-boosted tree model;
3. mutual information between each survivor and each DM.

A survivor is critical for a DM if its PI *or* MI score is above the mean score over
survivors for that DM; the unified set is the union over DMs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import validate_X
from .dataset import DM_NAMES
from .exceptions import ParameterError
from .features import FEATURE_IDS, MinMaxNormalizer
from .gbt import GradientBoostedTrees

DEFAULT_KEEP_RATIO = 63 / 91
MI_MIN_SAMPLES = 100


# --------------------------------------------------------------------------
# stage 1
# --------------------------------------------------------------------------

def amd_scores(X):
    """Absolute mean deviation ``mean(|x - mean(x)|)`` of every column."""
    arr = np.asarray(X, dtype=float)
    return np.mean(np.abs(arr - arr.mean(axis=0)), axis=0)


def keep_count(n_features, keep_ratio):
    if not (0 < keep_ratio <= 1):
        raise ParameterError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    # rounding guards against 63/91*91 = 63.00000000000001
    return int(math.ceil(round(keep_ratio * n_features, 9)))


def amd_filter(X_norm, keep_ratio=DEFAULT_KEEP_RATIO):
    """Names (or indices) of the top ``ceil(keep_ratio * n_features)`` columns by AMD.

    Columns with zero AMD (constant) are never kept, except that ``keep_ratio=1``
    switches the screen off and passes every column. Ties are broken by column order.
    """
    names = list(X_norm.columns) if isinstance(X_norm, pd.DataFrame) else None
    scores = amd_scores(X_norm)
    k = keep_count(len(scores), keep_ratio)
    ranked = np.argsort(-scores, kind="stable")
    chosen = [i for i in ranked[:k] if scores[i] > 0 or keep_ratio >= 1]
    chosen.sort()
    return [names[i] for i in chosen] if names is not None else chosen


class AMDSelector(TransformerMixin, BaseEstimator):
    """Dispersion screen; expects min-max normalised input."""

    def __init__(self, keep_ratio=DEFAULT_KEEP_RATIO):
        self.keep_ratio = keep_ratio

    def fit(self, X, y=None):
        arr = validate_X(self, X, reset=True)
        self.scores_ = amd_scores(arr)
        keep = amd_filter(arr, self.keep_ratio)
        self.support_ = np.zeros(arr.shape[1], dtype=bool)
        self.support_[keep] = True
        return self

    def get_support(self, indices=False):
        check_is_fitted(self, "support_")
        return np.flatnonzero(self.support_) if indices else self.support_

    def transform(self, X):
        check_is_fitted(self, "support_")
        if isinstance(X, pd.DataFrame):
            return X[[c for c, keep in zip(self.feature_names_in_, self.support_) if keep]]
        return np.asarray(X)[:, self.support_]

    def get_feature_names_out(self, input_features=None):
        names = getattr(self, "feature_names_in_", input_features)
        return np.asarray([n for n, keep in zip(names, self.support_) if keep], dtype=object)


# --------------------------------------------------------------------------
# stage 2
# --------------------------------------------------------------------------

@dataclass
class PermutationResult:
    scores: np.ndarray  # (n_features,) mean RMSE increase
    raw: np.ndarray  # (n_features, repeats)
    baseline_rmse: float


def permutation_importance(model: GradientBoostedTrees, X, y, repeats=100, random_state=0,
                           repeat_offset=0) -> PermutationResult:
    """Mean RMSE increase when one column is shuffled; the model is never refit.

    Repeat ``r`` of feature ``j`` uses the permutation drawn from
    ``default_rng([random_state, j, r])``, so any single repeat can be reproduced
    on its own with ``repeats=1, repeat_offset=r``.
    """
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    X = validate_X(model, X, reset=False)
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    base_pred = model.predict(X)
    base_rmse = float(np.sqrt(np.mean((y - base_pred) ** 2)))
    raw = np.zeros((d, repeats))
    for j in range(d):
        trees = model.trees_using(j)
        if trees.size == 0:
            continue  # column never split on: predictions cannot change
        base_part = model.predict_with_column(X, j, X[:, j], trees)
        for r in range(repeats):
            rng = np.random.default_rng([random_state, j, repeat_offset + r])
            shuffled = X[rng.permutation(n), j]
            part = model.predict_with_column(X, j, shuffled, trees)
            pred = base_pred + model.learning_rate * (part - base_part)
            raw[j, r] = np.sqrt(np.mean((y - pred) ** 2)) - base_rmse
    return PermutationResult(raw.mean(axis=1), raw, base_rmse)


# --------------------------------------------------------------------------
# stage 3
# --------------------------------------------------------------------------

def equal_frequency_bins(x, bins):
    """Bin index in [0, bins) from average ranks; tied values share a bin."""
    ranks = rankdata(x, method="average")
    return np.minimum(((ranks - 1) * bins / len(x)).astype(np.int64), bins - 1)


def mutual_information(x, y, bins=16):
    """Plug-in MI estimate (nats) from an equal-frequency joint histogram."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise ParameterError(f"length mismatch: {len(x)} vs {len(y)}")
    if bins < 2:
        raise ParameterError("bins must be >= 2")
    n = len(x)
    if n < MI_MIN_SAMPLES:
        raise ParameterError(f"MI needs at least {MI_MIN_SAMPLES} samples, got {n}")
    bx, by = equal_frequency_bins(x, bins), equal_frequency_bins(y, bins)
    # integer counts throughout, so swapping x and y permutes identical terms
    joint = np.bincount(bx * bins + by, minlength=bins * bins).reshape(bins, bins)
    cx, cy = np.bincount(bx, minlength=bins), np.bincount(by, minlength=bins)
    i, j = np.nonzero(joint)
    c = joint[i, j].astype(float)
    terms = c / n * np.log(c * n / (cx[i].astype(float) * cy[j]))
    return max(float(np.sort(terms).sum()), 0.0)


# --------------------------------------------------------------------------
# union rule
# --------------------------------------------------------------------------

@dataclass
class FilterScores:
    amd: pd.Series  # index: all features
    pi: pd.DataFrame  # index: survivors, columns: DMs
    mi: pd.DataFrame  # index: survivors, columns: DMs


@dataclass
class CriticalFeatureSet:
    per_dm: dict
    unified: tuple
    provenance: dict = field(default_factory=dict)  # fid -> {dm: [filters]}
    thresholds: dict = field(default_factory=dict)  # dm -> {"pi": t, "mi": t}

    def to_json(self):
        return json.dumps({"per_dm": {k: list(v) for k, v in self.per_dm.items()},
                           "unified": list(self.unified),
                           "provenance": self.provenance,
                           "thresholds": self.thresholds}, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls({k: tuple(v) for k, v in obj["per_dm"].items()}, tuple(obj["unified"]),
                   obj.get("provenance", {}), obj.get("thresholds", {}))


def _library_order(names):
    pos = {f: i for i, f in enumerate(FEATURE_IDS)}
    return tuple(sorted(names, key=lambda f: (pos.get(f, len(pos)), f)))


def assemble_critical_set(scores: FilterScores, amd_survivors, thresholds=None) -> CriticalFeatureSet:
    """Union of PI-pass and MI-pass survivors per DM, then union over DMs.

    ``thresholds`` maps DM -> {"pi": value, "mi": value}; missing entries default to
    the mean score across survivors for that DM.
    """
    survivors = list(amd_survivors)
    thresholds = dict(thresholds or {})
    per_dm, provenance, used = {}, {}, {}
    for dm in scores.pi.columns:
        pi = scores.pi.loc[survivors, dm]
        mi = scores.mi.loc[survivors, dm]
        t = dict(thresholds.get(dm, {}))
        t.setdefault("pi", float(pi.mean()))
        t.setdefault("mi", float(mi.mean()))
        used[dm] = t
        chosen = []
        for fid in survivors:
            passed = [name for name, s in (("pi", pi[fid]), ("mi", mi[fid])) if s > t[name]]
            if passed:
                chosen.append(fid)
                provenance.setdefault(fid, {})[dm] = passed
        per_dm[dm] = _library_order(chosen)
    unified = _library_order(set().union(*per_dm.values()) if per_dm else set())
    return CriticalFeatureSet(per_dm, unified, provenance, used)


# --------------------------------------------------------------------------
# pipeline estimator
# --------------------------------------------------------------------------

def _derive_seed(seed, *keys):
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _score_dm(Xs, y, k, params, repeats, mi_bins, seed):
    model = GradientBoostedTrees(random_state=_derive_seed(seed, k), **params).fit(Xs, y)
    pi = permutation_importance(model, Xs, y, repeats=repeats, random_state=_derive_seed(seed, k, 1))
    mi = np.array([mutual_information(Xs[:, j], y, mi_bins) for j in range(Xs.shape[1])])
    return pi.scores, mi, model.degenerate_


class CriticalFeatureSelector(TransformerMixin, BaseEstimator):
    """AMD -> (PI | MI) feature filter over the three degradation modes.

    Parameters
    ----------
    keep_ratio : float, default=63/91
        Share of library features kept by the dispersion screen.
    n_estimators, max_depth, learning_rate, subsample : GBT settings for the PI stage.
    repeats : int, default=100
        Shuffles per feature in permutation importance.
    mi_bins : int, default=16
        Equal-frequency bins per variable for the MI estimate.
    random_state : int, default=0
    n_jobs : int, default=1
        DMs scored in parallel when > 1.
    """

    def __init__(self, keep_ratio=DEFAULT_KEEP_RATIO, n_estimators=200, max_depth=4,
                 learning_rate=0.1, subsample=1.0, repeats=100, mi_bins=16, random_state=0,
                 n_jobs=1):
        self.keep_ratio = keep_ratio
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.subsample = subsample
        self.repeats = repeats
        self.mi_bins = mi_bins
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, Y):
        """
        Parameters
        ----------
        X : DataFrame of raw (unnormalised) features
        Y : DataFrame with one column per DM
        """
        if not isinstance(X, pd.DataFrame):
            X = pd.DataFrame(X, columns=[f"x{i}" for i in range(np.shape(X)[1])])
        if not isinstance(Y, pd.DataFrame):
            Y = pd.DataFrame(np.asarray(Y).reshape(len(X), -1),
                             columns=list(DM_NAMES[:np.asarray(Y).reshape(len(X), -1).shape[1]]))
        self.feature_names_in_ = np.asarray(list(X.columns), dtype=object)
        self.normalizer_ = MinMaxNormalizer().fit(X)
        Xn = self.normalizer_.transform(X)
        self.amd_survivors_ = amd_filter(Xn, self.keep_ratio)
        Xs = Xn[self.amd_survivors_].to_numpy()
        params = dict(n_estimators=self.n_estimators, max_depth=self.max_depth,
                      learning_rate=self.learning_rate, subsample=self.subsample)
        dms = list(Y.columns)
        results = Parallel(n_jobs=self.n_jobs)(
            delayed(_score_dm)(Xs, Y[dm].to_numpy(dtype=float), k, params, self.repeats,
                               self.mi_bins, self.random_state)
            for k, dm in enumerate(dms))
        self.degenerate_labels_ = [dm for dm, r in zip(dms, results) if r[2]]
        self.scores_ = FilterScores(
            amd=pd.Series(amd_scores(Xn), index=list(X.columns)),
            pi=pd.DataFrame({dm: r[0] for dm, r in zip(dms, results)}, index=self.amd_survivors_),
            mi=pd.DataFrame({dm: r[1] for dm, r in zip(dms, results)}, index=self.amd_survivors_),
        )
        self.critical_set_ = assemble_critical_set(self.scores_, self.amd_survivors_)
        return self

    def transform(self, X):
        check_is_fitted(self, "critical_set_")
        return X[list(self.critical_set_.unified)]

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "critical_set_")
        return np.asarray(self.critical_set_.unified, dtype=object)

    def report_frame(self):
        """One row per library feature: scores, pass flags and provenance."""
        check_is_fitted(self, "critical_set_")
        return scores_frame(self.scores_, self.amd_survivors_, self.critical_set_)


def scores_frame(scores: FilterScores, amd_survivors, critical: CriticalFeatureSet):
    survivors = set(amd_survivors)
    rows = []
    for fid in scores.amd.index:
        row = {"feature": fid, "amd": scores.amd[fid], "amd_pass": fid in survivors}
        for dm in scores.pi.columns:
            s = fid in survivors
            pi = scores.pi.at[fid, dm] if s else np.nan
            mi = scores.mi.at[fid, dm] if s else np.nan
            row[f"pi_{dm}"] = pi
            row[f"mi_{dm}"] = mi
            row[f"pass_pi_{dm}"] = bool(s and pi > critical.thresholds[dm]["pi"])
            row[f"pass_mi_{dm}"] = bool(s and mi > critical.thresholds[dm]["mi"])
        row["critical"] = fid in critical.unified
        prov = critical.provenance.get(fid, {})
        row["provenance"] = ";".join(f"{dm}:{'+'.join(v)}" for dm, v in sorted(prov.items()))
        rows.append(row)
    return pd.DataFrame(rows)
