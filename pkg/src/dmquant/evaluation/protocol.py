"""Six-test hold-out protocol over the sixteen cells."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.exceptions import ConvergenceWarning
from sklearn.model_selection import GridSearchCV, GroupKFold
from sklearn.pipeline import Pipeline

from ..dataset import DM_NAMES
from ..exceptions import DmquantError, PlanValidationError
from ..features import FEATURE_IDS, LABEL_COLUMNS, MinMaxNormalizer
from ..models import (ElasticNetRegression, EpsilonSVR, MultipleLinearRegression,
                      SparseGPRegressor, WeightedFNNRegressor)
from .metrics import (DEFAULT_MAPE_FLOOR, DEFAULT_T_THRESHOLD, aggregate, mape, rmse,
                      t_test)

logger = logging.getLogger(__name__)

BASELINES = ("svr", "sgpr", "mlr", "enr")
FNN_VARIANTS = ("cf_fnn", "af_fnn")
MODEL_ORDER = BASELINES + FNN_VARIANTS

DEFAULT_TESTS = (
    ("CCD_1", "DCD_4", "CCD_6"),
    ("DCD_2", "CCD_5", "DCD_7"),
    ("CCD_3", "DCD_5", "CCD_8"),
    ("DCD_1", "CCD_4", "DCD_6"),
    ("CCD_2", "CCD_7", "DCD_8"),
    ("DCD_3", "CCD_5", "DCD_6"),
)

DEFAULT_GRIDS = {
    "mlr": {},
    "enr": {"l1_weight": [1e-5, 1e-4], "l2_weight": [1e-4, 1e-3]},
    "svr": {"C": [1.0, 10.0], "gamma": [0.05, 0.2], "epsilon": [0.002]},
    "sgpr": {"n_inducing": [100], "lengthscale": [1.0, 2.0], "noise_var": [1e-4]},
}

DEFAULT_FNN = {"hidden_layer_sizes": [64] * 10, "loss_weights": [1.0, 4.0, 2.0],
               "learning_rate": 1e-3, "batch_size": 64, "max_epochs": 500, "patience": 25,
               "validation_fraction": 0.1}

_ESTIMATORS = {"mlr": MultipleLinearRegression, "enr": ElasticNetRegression,
               "svr": EpsilonSVR, "sgpr": SparseGPRegressor}


@dataclass(frozen=True)
class TestPlan:
    """Held-out cell triples; each test trains on every other cell of ``cells``."""

    __test__ = False  # not a pytest class despite the name

    tests: tuple
    cells: tuple
    train: tuple = None  # optional explicit train lists, one per test

    def train_cells(self, k):
        if self.train is not None:
            return tuple(self.train[k])
        held = set(self.tests[k])
        return tuple(c for c in self.cells if c not in held)

    def coverage(self, cell_info):
        held = set().union(*map(set, self.tests))
        return {"protocols": sorted({cell_info[c][0] for c in held}),
                "temperature_classes": sorted({cell_info[c][1] for c in held}),
                "cells_tested": len(held)}


def validate_plan(plan: TestPlan, cell_info, n_tests=6, per_test=3):
    """Raise :class:`PlanValidationError` unless the plan is well formed.

    ``cell_info`` maps cell_id -> (protocol, temperature_class) for every cell.
    """
    cells = set(plan.cells)
    if len(cells) != len(plan.cells):
        raise PlanValidationError("duplicate cells in the plan's cell list")
    unknown = cells - set(cell_info)
    if unknown:
        raise PlanValidationError(f"plan references unknown cells {sorted(unknown)}")
    if len(plan.tests) != n_tests:
        raise PlanValidationError(f"plan must have {n_tests} tests, got {len(plan.tests)}")
    if plan.train is not None and len(plan.train) != len(plan.tests):
        raise PlanValidationError("explicit train lists must match the number of tests")
    for k, test in enumerate(plan.tests):
        if len(test) != per_test or len(set(test)) != per_test:
            raise PlanValidationError(f"test {k + 1} must hold {per_test} distinct cells: {test}")
        missing = set(test) - cells
        if missing:
            raise PlanValidationError(f"test {k + 1} uses cells outside the plan: {sorted(missing)}")
        train = set(plan.train_cells(k))
        overlap = train & set(test)
        if overlap:
            raise PlanValidationError(f"test {k + 1}: cells {sorted(overlap)} in both train and test")
        if train | set(test) != cells:
            raise PlanValidationError(f"test {k + 1}: train and test do not cover all cells")
    cov = plan.coverage(cell_info)
    if cov["protocols"] != ["CCD", "DCD"]:
        raise PlanValidationError(f"test cells must span both protocols, got {cov['protocols']}")
    if len(cov["temperature_classes"]) != 3:
        raise PlanValidationError("test cells must span all three temperature classes")
    return plan


def default_plan(cells=None):
    cells = tuple(sorted({c for t in DEFAULT_TESTS for c in t} | {f"{p}_{i}" for p in ("CCD", "DCD")
                                                                 for i in range(1, 9)})
                  if cells is None else cells)
    return TestPlan(DEFAULT_TESTS, cells)


@dataclass
class ProtocolSettings:
    grids: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_GRIDS.items()})
    fnn: dict = field(default_factory=lambda: dict(DEFAULT_FNN))
    grid_folds: int = 3
    mape_floor: float = DEFAULT_MAPE_FLOOR
    t_threshold: float = DEFAULT_T_THRESHOLD
    benchmark: str = "svr"


@dataclass
class EvaluationReport:
    per_test: pd.DataFrame  # model, dm, test, mape, rmse, n_samples, n_excluded
    aggregates: pd.DataFrame
    ttest: pd.DataFrame  # long form: model, dm, t, df, threshold, verdict
    predictions: pd.DataFrame
    failures: pd.DataFrame  # model, test, error, message, exit_code
    best_params: dict
    plan: TestPlan
    models: tuple
    features: dict  # model -> feature list
    settings: ProtocolSettings

    @property
    def exit_code(self):
        return int(self.failures["exit_code"].max()) if len(self.failures) else 0


def _seed(seed, *keys):
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _fit_baseline(kind, X, y, groups, grid, folds, seed):
    est = _ESTIMATORS[kind]()
    if "random_state" in est.get_params():
        est.set_params(random_state=seed)
    pipe = Pipeline([("scale", MinMaxNormalizer()), ("model", est)])
    grid = {f"model__{k}": list(v) for k, v in grid.items()}
    n_groups = len(set(groups))
    if any(len(v) > 1 for v in grid.values()) and n_groups >= 2:
        search = GridSearchCV(pipe, grid, cv=GroupKFold(n_splits=min(folds, n_groups)),
                              scoring="neg_root_mean_squared_error", error_score="raise", n_jobs=1)
        search.fit(X, y, groups=groups)
        return search.best_estimator_, {k[7:]: v for k, v in search.best_params_.items()}
    params = {k: v[0] for k, v in grid.items()}
    pipe.set_params(**params)
    return pipe.fit(X, y), {k[7:]: v for k, v in params.items()}


def _run_test(k, frame, plan, model_features, settings, seed):
    test_cells = plan.tests[k]
    tr = frame["cell_id"].isin(plan.train_cells(k)).to_numpy()
    te = frame["cell_id"].isin(test_cells).to_numpy()
    Y = frame[list(LABEL_COLUMNS)].to_numpy(dtype=float)
    groups = frame.loc[tr, "cell_id"].to_numpy()
    meta = frame.loc[te, ["cell_id", "cycle_index", "efc"]].reset_index(drop=True)
    preds, failures, params = [], [], {}

    for model, cols in model_features.items():
        m_idx = MODEL_ORDER.index(model)
        Xtr, Xte = frame.loc[tr, cols], frame.loc[te, cols]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                if model in FNN_VARIANTS:
                    est = WeightedFNNRegressor(random_state=_seed(seed, k, m_idx), **_fnn_kwargs(settings.fnn))
                    pipe = Pipeline([("scale", MinMaxNormalizer()), ("model", est)]).fit(Xtr, Y[tr])
                    P = np.clip(pipe.predict(Xte), 0.0, 1.0)
                    params[model] = {"n_epochs": pipe[-1].n_epochs_, "best_epoch": pipe[-1].best_epoch_}
                else:
                    P = np.empty((te.sum(), 3))
                    params[model] = {}
                    for d, dm in enumerate(DM_NAMES):
                        fitted, best = _fit_baseline(model, Xtr, Y[tr, d], groups,
                                                     settings.grids.get(model, {}),
                                                     settings.grid_folds, _seed(seed, k, m_idx, d))
                        P[:, d] = fitted.predict(Xte)
                        params[model][dm] = best
            if not np.all(np.isfinite(P)):
                raise FloatingPointError("non-finite predictions")
        except (DmquantError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            logger.error("test %d model %s failed: %s", k + 1, model, exc)
            failures.append({"model": model, "test": k + 1, "error": type(exc).__name__,
                             "message": str(exc), "exit_code": getattr(exc, "exit_code", 3)})
            continue
        for d, dm in enumerate(DM_NAMES):
            block = meta.copy()
            block.insert(0, "test", k + 1)
            block.insert(1, "model", model)
            block.insert(2, "dm", dm)
            block["y_true"] = Y[te, d]
            block["y_pred"] = P[:, d]
            preds.append(block)
    return preds, failures, params


def _fnn_kwargs(cfg):
    out = dict(cfg)
    if "hidden_layer_sizes" in out:
        out["hidden_layer_sizes"] = tuple(out["hidden_layer_sizes"])
    if "loss_weights" in out:
        out["loss_weights"] = tuple(out["loss_weights"])
    return out


def per_test_metrics(predictions, mape_floor=DEFAULT_MAPE_FLOOR):
    rows = []
    for (test, model, dm), g in predictions.groupby(["test", "model", "dm"], sort=False):
        value, excluded = mape(g["y_true"], g["y_pred"], mape_floor, return_excluded=True)
        rows.append({"model": model, "dm": dm, "test": int(test), "mape": value,
                     "rmse": rmse(g["y_true"], g["y_pred"]), "n_samples": len(g),
                     "n_excluded": excluded})
    return pd.DataFrame(rows, columns=["model", "dm", "test", "mape", "rmse", "n_samples",
                                       "n_excluded"])


def _canonical_order(per_test):
    rank = {**{m: i for i, m in enumerate(MODEL_ORDER)}, **{d: i for i, d in enumerate(DM_NAMES)}}
    key = per_test.assign(_m=per_test["model"].map(rank), _d=per_test["dm"].map(rank))
    key = key.sort_values(["_m", "_d", "test"], kind="stable")
    return key.drop(columns=["_m", "_d"]).reset_index(drop=True)


def ttest_table(aggregates, models, benchmark, n, threshold, metric="mape"):
    """Long-form t-values of every model against ``benchmark``, plus a ``total`` row per model."""
    mean_col, std_col = {"mape": ("amape", "std_mape"), "rmse": ("armse", "std_rmse")}[metric]
    table = aggregates.set_index(["model", "dm"])
    rows = []
    for model in models:
        ts = []
        for dm in DM_NAMES:
            if (model, dm) not in table.index or (benchmark, dm) not in table.index:
                continue
            a, b = table.loc[(model, dm)], table.loc[(benchmark, dm)]
            if a["n_tests"] < n or b["n_tests"] < n:
                res = None
            else:
                res = t_test(a[mean_col], a[std_col], b[mean_col], b[std_col], n, threshold)
            t = np.nan if res is None else res.t
            ts.append(t)
            rows.append({"model": model, "dm": dm, "t": t, "df": 2 * n - 2, "threshold": threshold,
                         "verdict": "incomplete" if res is None else res.verdict})
        if ts:
            total = float(np.mean(ts))
            rows.append({"model": model, "dm": "total", "t": total, "df": 2 * n - 2,
                         "threshold": threshold,
                         "verdict": ("incomplete" if np.isnan(total) else
                                     "benchmark better" if total > threshold else "comparable")})
    return pd.DataFrame(rows, columns=["model", "dm", "t", "df", "threshold", "verdict"])


def run_protocol(frame, critical_features, plan: TestPlan, settings: ProtocolSettings = None,
                 models=MODEL_ORDER, features="critical", seed=0, n_jobs=1,
                 cell_info=None) -> EvaluationReport:
    """Fit every model on each test's training cells and score it on the held-out cells.

    Parameters
    ----------
    frame : DataFrame
        Feature matrix with ``cell_id``, ``cycle_index``, ``efc``, library features and labels.
    critical_features : sequence of str
    features : {"critical", "all"}
        Feature set of the baselines and of ``cf_fnn``; ``af_fnn`` always uses the full library.
    """
    settings = settings or ProtocolSettings()
    if features not in ("critical", "all"):
        raise PlanValidationError(f"features must be 'critical' or 'all', got {features!r}")
    if cell_info is not None:
        validate_plan(plan, cell_info)
    unknown = [m for m in models if m not in MODEL_ORDER]
    if unknown:
        raise PlanValidationError(f"unknown models {unknown}")
    critical = list(critical_features)
    base_cols = critical if features == "critical" else list(FEATURE_IDS)
    model_features = {m: (list(FEATURE_IDS) if m == "af_fnn" else base_cols)
                      for m in MODEL_ORDER if m in models}

    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_test)(k, frame, plan, model_features, settings, seed)
        for k in range(len(plan.tests)))

    preds = [p for r in results for p in r[0]]
    predictions = (pd.concat(preds, ignore_index=True) if preds else
                   pd.DataFrame(columns=["test", "model", "dm", "cell_id", "cycle_index", "efc",
                                         "y_true", "y_pred"]))
    failures = pd.DataFrame([f for r in results for f in r[1]],
                            columns=["model", "test", "error", "message", "exit_code"])
    best_params = {k + 1: r[2] for k, r in enumerate(results)}
    per_test = per_test_metrics(predictions, settings.mape_floor)
    per_test = _canonical_order(per_test)
    aggregates = aggregate(per_test) if len(per_test) else pd.DataFrame(
        columns=["model", "dm", "amape", "std_mape", "armse", "std_rmse", "n_tests"])
    baselines = [m for m in model_features if m in BASELINES]
    if settings.benchmark not in model_features:
        baselines = []
    ttest = ttest_table(aggregates, baselines, settings.benchmark, len(plan.tests),
                        settings.t_threshold)
    return EvaluationReport(per_test, aggregates, ttest, predictions, failures, best_params,
                            plan, tuple(model_features), model_features, settings)
