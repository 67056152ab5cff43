"""The 91-feature statistical library and min-max normalisation.

Feature ids are ``source.family.statistic``. The IC set (64) draws on the IC
curve and its transforms; the temperature set (27) on the cycle's temperature
series.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import DM_NAMES, cumulative_throughput
from .exceptions import ContractError, DataError, ParameterError
from .ic import DEFAULT_BIN_WIDTH_V, DEFAULT_ENTROPY_BINS, build_transforms, compute_ic, normalized_histogram

logger = logging.getLogger(__name__)

M16 = ("max", "min", "mean", "median", "std_dev", "var", "skewness", "kurtosis", "range",
       "p10", "p30", "p40", "p60", "p70", "p80", "p90")

FAMILIES = ("basic", "pos_neg_split", "cumulative", "entropy", "differences", "hybrid")

_ENUMERATION = {
    "ic": {
        "basic": M16,
        "cumulative": M16,
        "differences": M16,
        "pos_neg_split": ("pos_mean", "pos_max", "pos_area", "pos_count_frac",
                          "neg_mean", "neg_min", "neg_area", "neg_count_frac"),
        "entropy": ("shannon_entropy", "normalized_entropy", "entropy_of_cumulative_histogram"),
        "hybrid": ("thp", "thp_x_basic_mean", "thp_x_basic_std_dev", "thp_x_pos_mean",
                   "thp_x_neg_mean"),
    },
    "temperature": {
        "basic": M16,
        "differences": ("max", "min", "mean", "std_dev", "range"),
        "cumulative": ("mean", "max", "range"),
        "entropy": ("shannon_entropy",),
        "pos_neg_split": ("rise_fraction",),
        "hybrid": ("thp_x_basic_mean",),
    },
}

FEATURE_IDS = tuple(f"{src}.{fam}.{stat}"
                    for src, fams in _ENUMERATION.items()
                    for fam, menu in fams.items()
                    for stat in menu)

# the critical IC features reported for the original laboratory dataset
REFERENCE_CRITICAL_FEATURES = (
    "ic.basic.p30", "ic.basic.p40", "ic.basic.median", "ic.basic.p70", "ic.basic.p80",
    "ic.basic.p90", "ic.basic.std_dev", "ic.basic.var",
    "ic.cumulative.p70", "ic.cumulative.p80", "ic.cumulative.p90", "ic.cumulative.mean",
    "ic.cumulative.median", "ic.cumulative.std_dev", "ic.cumulative.var",
    "ic.cumulative.kurtosis", "ic.cumulative.max", "ic.cumulative.range",
    "ic.differences.p90", "ic.hybrid.thp", "ic.hybrid.thp_x_pos_mean",
)

META_COLUMNS = ("cell_id", "cycle_index", "efc")
LABEL_COLUMNS = DM_NAMES


def parse_feature_id(fid):
    source, family, statistic = fid.split(".")
    return source, family, statistic


def feature_columns(frame):
    """The feature columns of a feature matrix, in library order."""
    present = set(frame.columns)
    return [f for f in FEATURE_IDS if f in present]


@dataclass
class FeatureVector:
    cell_id: str
    cycle_index: int
    values: dict
    flags: set = field(default_factory=set)


class _Collector:
    """Accumulates named values and records non-finite substitutions."""

    def __init__(self):
        self.values = {}
        self.flags = set()

    def put(self, fid, value):
        value = float(value)
        if not np.isfinite(value):
            self.flags.add(fid)
            value = 0.0
        self.values[fid] = value


def _stat(x, name):
    if x.size == 0:
        return np.nan
    if name == "max":
        return x.max()
    if name == "min":
        return x.min()
    if name == "mean":
        return x.mean()
    if name == "median":
        # the 50th percentile under the same convention as the p-statistics
        return np.percentile(x, 50.0, method="linear")
    if name in ("std_dev", "var"):
        if x.max() == x.min():
            return 0.0  # avoids rounding residue from the mean
        return x.std() if name == "std_dev" else x.var()
    if name == "range":
        return x.max() - x.min()
    if name in ("skewness", "kurtosis"):
        if x.size < 3 or x.std() <= 1e-12 * max(1.0, abs(x.mean())):
            return np.nan
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return stats.skew(x) if name == "skewness" else stats.kurtosis(x)
    if name[0] == "p":
        return np.percentile(x, float(name[1:]), method="linear")
    raise KeyError(name)


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def extract_features(bundle, temp_series, cell_id="", cycle_index=0,
                     entropy_bins=DEFAULT_ENTROPY_BINS) -> FeatureVector:
    """Compute the 91 library features for one cycle.

    Non-finite intermediates (moments of constant data, statistics of an empty
    sign part) are replaced by 0 and listed in ``FeatureVector.flags``.
    """
    temp = np.asarray(temp_series, dtype=float)
    if temp.size < 16:
        raise ParameterError(f"temperature series has {temp.size} samples, need >= 16")
    out = _Collector()
    dq = np.asarray(bundle.basic.dq_dv, dtype=float)
    w = bundle.basic.bin_width_v
    thp = bundle.throughput_ah

    for fam, series in (("basic", dq), ("cumulative", bundle.cumulative),
                        ("differences", bundle.differences)):
        for s in M16:
            out.put(f"ic.{fam}.{s}", _stat(series, s))

    pos, neg = bundle.pos_part, bundle.neg_part
    n = max(dq.size, 1)
    out.put("ic.pos_neg_split.pos_mean", _stat(pos, "mean"))
    out.put("ic.pos_neg_split.pos_max", _stat(pos, "max"))
    out.put("ic.pos_neg_split.pos_area", pos.sum() * w)
    out.put("ic.pos_neg_split.pos_count_frac", pos.size / n)
    out.put("ic.pos_neg_split.neg_mean", _stat(neg, "mean"))
    out.put("ic.pos_neg_split.neg_min", _stat(neg, "min"))
    out.put("ic.pos_neg_split.neg_area", neg.sum() * w)
    out.put("ic.pos_neg_split.neg_count_frac", neg.size / n)

    h = _entropy(bundle.entropy_inputs)
    out.put("ic.entropy.shannon_entropy", h)
    out.put("ic.entropy.normalized_entropy", h / np.log(len(bundle.entropy_inputs)))
    out.put("ic.entropy.entropy_of_cumulative_histogram",
            _entropy(normalized_histogram(bundle.cumulative, entropy_bins)))

    out.put("ic.hybrid.thp", thp)
    out.put("ic.hybrid.thp_x_basic_mean", thp * out.values["ic.basic.mean"])
    out.put("ic.hybrid.thp_x_basic_std_dev", thp * out.values["ic.basic.std_dev"])
    out.put("ic.hybrid.thp_x_pos_mean", thp * out.values["ic.pos_neg_split.pos_mean"])
    out.put("ic.hybrid.thp_x_neg_mean", thp * out.values["ic.pos_neg_split.neg_mean"])

    for s in M16:
        out.put(f"temperature.basic.{s}", _stat(temp, s))
    dtemp = np.diff(temp)
    for s in _ENUMERATION["temperature"]["differences"]:
        out.put(f"temperature.differences.{s}", _stat(dtemp, s))
    # running integral over samples, scaled so its end point is the series mean
    ctemp = np.cumsum(temp) / temp.size
    for s in _ENUMERATION["temperature"]["cumulative"]:
        out.put(f"temperature.cumulative.{s}", _stat(ctemp, s))
    out.put("temperature.entropy.shannon_entropy", _entropy(normalized_histogram(temp, entropy_bins)))
    out.put("temperature.pos_neg_split.rise_fraction", float((dtemp > 0).mean()))
    out.put("temperature.hybrid.thp_x_basic_mean", thp * out.values["temperature.basic.mean"])

    values = {fid: out.values[fid] for fid in FEATURE_IDS}
    return FeatureVector(cell_id, int(cycle_index), values, out.flags)


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Turn labelled cells into a feature matrix (one row per cycle).

    Stateless; ``fit`` only exists for pipeline compatibility.

    Parameters
    ----------
    bin_width_v : float, default=0.01
    entropy_bins : int, default=32
    nominal_current_a : float or None, default=None
        CC charge current used to validate the segment; None uses each cycle's median.
    """

    def __init__(self, bin_width_v=DEFAULT_BIN_WIDTH_V, entropy_bins=DEFAULT_ENTROPY_BINS,
                 nominal_current_a=None):
        self.bin_width_v = bin_width_v
        self.entropy_bins = entropy_bins
        self.nominal_current_a = nominal_current_a

    def fit(self, cells=None, y=None):
        return self

    def transform_cell(self, cell):
        rows, skipped = [], []
        labels = cell.label_matrix() if cell.labels is not None else None
        thp = cumulative_throughput(cell.cycles)
        for k, cyc in enumerate(cell.cycles):
            try:
                curve = compute_ic(cyc, self.bin_width_v, self.nominal_current_a)
            except DataError as exc:
                logger.warning("%s cycle %d skipped: %s", cell.cell_id, cyc.cycle_index, exc)
                skipped.append((cyc.cycle_index, str(exc)))
                continue
            bundle = build_transforms(curve, thp[k], self.entropy_bins)
            fv = extract_features(bundle, cyc.temperature_c, cell.cell_id, cyc.cycle_index,
                                  self.entropy_bins)
            row = {"cell_id": cell.cell_id, "cycle_index": cyc.cycle_index, "efc": cyc.efc}
            row.update(fv.values)
            if labels is not None:
                row.update(zip(LABEL_COLUMNS, labels[k]))
            rows.append(row)
        return rows, skipped

    def transform(self, cells):
        rows = []
        self.skipped_ = {}
        for cell in cells:
            cell_rows, skipped = self.transform_cell(cell)
            rows.extend(cell_rows)
            if skipped:
                self.skipped_[cell.cell_id] = skipped
        columns = list(META_COLUMNS) + list(FEATURE_IDS)
        if rows and LABEL_COLUMNS[0] in rows[0]:
            columns += list(LABEL_COLUMNS)
        return pd.DataFrame(rows, columns=columns)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature min-max scaling with training-set bounds.

    Constant features map to 0 and are marked in ``degenerate_``. Unseen data may
    fall outside [0, 1].
    """

    _state_attrs = ("data_min_", "data_max_", "degenerate_")

    def fit(self, X, y=None):
        frame = X if isinstance(X, pd.DataFrame) else None
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ParameterError("cannot normalise an empty matrix")
        if arr.shape[0] < 2:
            raise ParameterError("normalisation needs at least 2 rows")
        if frame is not None:
            self.feature_names_in_ = np.asarray([str(c) for c in frame.columns], dtype=object)
        self.n_features_in_ = arr.shape[1]
        self.data_min_ = arr.min(axis=0)
        self.data_max_ = arr.max(axis=0)
        self.degenerate_ = self.data_max_ <= self.data_min_
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        if isinstance(X, pd.DataFrame) and hasattr(self, "feature_names_in_"):
            cols = list(self.feature_names_in_)
            missing = sorted(set(cols) - set(map(str, X.columns)))
            if missing:
                raise ContractError(f"feature schema mismatch: missing={missing}")
            arr = X[cols].to_numpy(dtype=float)
        else:
            arr = np.asarray(X, dtype=float)
        span = np.where(self.degenerate_, 1.0, self.data_max_ - self.data_min_)
        out = (arr - self.data_min_) / span
        out[:, self.degenerate_] = 0.0
        if isinstance(X, pd.DataFrame):
            return pd.DataFrame(out, columns=X[cols].columns if hasattr(self, "feature_names_in_")
                                else X.columns, index=X.index)
        return out

    def get_feature_names_out(self, input_features=None):
        return getattr(self, "feature_names_in_", input_features)


def normalize(matrix):
    """Fit a :class:`MinMaxNormalizer` on ``matrix`` and return ``(normalised, normalizer)``."""
    if matrix is None or len(matrix) == 0:
        raise ParameterError("cannot normalise an empty matrix")
    scaler = MinMaxNormalizer().fit(matrix)
    return scaler.transform(matrix), scaler


def write_feature_matrix(frame, path):
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_feature_matrix(path):
    frame = pd.read_csv(path, dtype={"cell_id": str}, float_precision="round_trip")
    missing = [f for f in FEATURE_IDS if f not in frame.columns]
    if missing:
        raise DataError(f"{path}: feature matrix lacks {len(missing)} library columns")
    return frame
