"""Error metrics, cross-test aggregation and the two-sample t statistic."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..exceptions import ParameterError, UndefinedMetricError

logger = logging.getLogger(__name__)

DEFAULT_MAPE_FLOOR = 0.005
DEFAULT_T_THRESHOLD = 2.145


def _pair(y_true, y_pred):
    y_true = np.asarray(y_true, float).ravel()
    y_pred = np.asarray(y_pred, float).ravel()
    if y_true.shape != y_pred.shape:
        raise ParameterError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) == 0:
        raise ParameterError("metrics need at least one sample")
    return y_true, y_pred


def mape(y_true, y_pred, floor=DEFAULT_MAPE_FLOOR, return_excluded=False):
    """Mean absolute percentage error in percent.

    Samples with ``|y_true| < floor`` are left out of the mean; with
    ``return_excluded`` the count of those samples is returned as well.
    """
    y_true, y_pred = _pair(y_true, y_pred)
    keep = np.abs(y_true) >= floor
    excluded = int((~keep).sum())
    if not keep.any():
        raise UndefinedMetricError(f"MAPE undefined: all {len(y_true)} labels below floor {floor}")
    if excluded:
        logger.debug("MAPE: %d samples below floor %g excluded", excluded, floor)
    value = float(np.mean(np.abs(y_true[keep] - y_pred[keep]) / np.abs(y_true[keep])) * 100)
    return (value, excluded) if return_excluded else value


def rmse(y_true, y_pred):
    """Root-mean-square error in percentage points (inputs are fractions)."""
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)) * 100)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    threshold: float
    infinite: bool = False

    @property
    def significant(self):
        """True when the benchmark is significantly better (one-sided)."""
        return self.t > self.threshold

    @property
    def verdict(self):
        if self.significant:
            return "benchmark better"
        return "comparable"


def t_test(mean_a, std_a, mean_b, std_b, n=6, threshold=DEFAULT_T_THRESHOLD):
    """``t = (mean_a - mean_b) / sqrt(std_a**2/n + std_b**2/n)`` with ``df = 2n - 2``.

    ``b`` is the benchmark. Zero spread with equal means gives ``t = 0``; zero
    spread with different means gives a signed infinity and ``infinite=True``.
    """
    if std_a < 0 or std_b < 0:
        raise ParameterError("standard deviations must be >= 0")
    if n < 2:
        raise ParameterError("t-test needs n >= 2")
    diff = mean_a - mean_b
    se = math.sqrt(std_a ** 2 / n + std_b ** 2 / n)
    if se == 0:
        if diff == 0:
            return TTestResult(0.0, 2 * n - 2, threshold)
        return TTestResult(math.copysign(math.inf, diff), 2 * n - 2, threshold, infinite=True)
    return TTestResult(diff / se, 2 * n - 2, threshold)


def aggregate(per_test):
    """Aggregate a long table of per-test metrics.

    ``per_test`` has columns ``model, dm, test, mape, rmse``; returns one row per
    (model, dm) with ``amape, std_mape, armse, std_rmse, n_tests`` (sample std,
    ``ddof=1``).
    """
    grouped = per_test.groupby(["model", "dm"], sort=False)
    out = grouped.agg(amape=("mape", "mean"), std_mape=("mape", lambda v: np.std(v, ddof=1)),
                      armse=("rmse", "mean"), std_rmse=("rmse", lambda v: np.std(v, ddof=1)),
                      n_tests=("mape", "size"))
    return out.reset_index()


def t_matrix(aggregates, models, dms, benchmark="svr", metric="mape", n=6,
             threshold=DEFAULT_T_THRESHOLD):
    """Model-by-DM table of t values against ``benchmark`` plus a ``total`` column (mean of the DMs)."""
    mean_col, std_col = {"mape": ("amape", "std_mape"), "rmse": ("armse", "std_rmse")}[metric]
    table = aggregates.set_index(["model", "dm"])
    rows = {}
    for model in models:
        row = {}
        for dm in dms:
            a, b = table.loc[(model, dm)], table.loc[(benchmark, dm)]
            row[dm] = t_test(a[mean_col], a[std_col], b[mean_col], b[std_col], n, threshold).t
        row["total"] = float(np.mean([row[dm] for dm in dms]))
        rows[model] = row
    return pd.DataFrame.from_dict(rows, orient="index", columns=[*dms, "total"])


def quantile_boxes(errors, n_boxes=15):
    """Split an error sample into ``n_boxes`` equal-probability boxes.

    Box ``k`` spans the ``k/n`` to ``(k+1)/n`` quantiles of ``errors``; ``count``
    is the number of samples falling in it.
    """
    errors = np.sort(np.asarray(errors, float).ravel())
    if len(errors) == 0:
        raise ParameterError("no errors to box")
    levels = np.linspace(0, 1, n_boxes + 1)
    edges = np.quantile(errors, levels)
    idx = np.clip(np.searchsorted(edges, errors, side="right") - 1, 0, n_boxes - 1)
    counts = np.bincount(idx, minlength=n_boxes)
    return pd.DataFrame({"box": np.arange(n_boxes), "q_low": levels[:-1], "q_high": levels[1:],
                         "lower": edges[:-1], "upper": edges[1:], "count": counts})
