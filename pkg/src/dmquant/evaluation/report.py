"""Write an :class:`EvaluationReport` as CSV tables, JSON and SVG plots.

Every file is byte-deterministic for a given report: tables are written with a
fixed float format, JSON with sorted keys, and SVGs with a fixed hash salt and
no timestamp.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import pandas as pd

from ..dataset import DM_NAMES
from .metrics import quantile_boxes

FLOAT_FORMAT = "%.12g"
N_QUANTILE_BOXES = 15


def _csv(frame, path, float_format=FLOAT_FORMAT):
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _records(frame):
    return _jsonable(frame.to_dict(orient="records"))


def dump_json(obj, path):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def quantile_box_table(predictions, n_boxes=N_QUANTILE_BOXES):
    """Equal-probability boxes of the signed error (percentage points) per (model, DM, test)."""
    frames = []
    for (test, model, dm), g in predictions.groupby(["test", "model", "dm"], sort=False):
        boxes = quantile_boxes((g["y_pred"] - g["y_true"]).to_numpy() * 100, n_boxes)
        boxes.insert(0, "test", int(test))
        boxes.insert(1, "model", model)
        boxes.insert(2, "dm", dm)
        frames.append(boxes)
    if not frames:
        return pd.DataFrame(columns=["test", "model", "dm", "box", "q_low", "q_high", "lower",
                                     "upper", "count"])
    return pd.concat(frames, ignore_index=True)


def critical_feature_table(critical):
    rows = []
    for fid in critical.unified:
        prov = critical.provenance.get(fid, {})
        rows.append({"feature": fid,
                     "dms": ";".join(dm for dm in DM_NAMES if fid in critical.per_dm.get(dm, ())),
                     "provenance": ";".join(f"{dm}:{'+'.join(prov[dm])}"
                                            for dm in DM_NAMES if dm in prov)})
    return pd.DataFrame(rows, columns=["feature", "dms", "provenance"])


def _plots(report, boxes, plot_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rc = {"svg.hashsalt": "dmquant", "svg.fonttype": "path", "font.family": "DejaVu Sans"}
    with matplotlib.rc_context(rc):
        per_test = report.per_test
        models = [m for m in report.models if m in set(per_test["model"])]
        for dm in DM_NAMES:
            sub = per_test[per_test["dm"] == dm]
            if sub.empty:
                continue
            # per-test MAPE bars
            fig, ax = plt.subplots(figsize=(7, 3.5))
            tests = sorted(sub["test"].unique())
            width = 0.8 / max(len(models), 1)
            for i, m in enumerate(models):
                vals = sub[sub["model"] == m].set_index("test")["mape"].reindex(tests)
                ax.bar(np.arange(len(tests)) + i * width, vals.to_numpy(), width, label=m)
            ax.set_xticks(np.arange(len(tests)) + 0.4 - width / 2)
            ax.set_xticklabels([f"test {t}" for t in tests])
            ax.set_ylabel(f"MAPE {dm} [%]")
            ax.legend(fontsize=7, ncol=3)
            fig.tight_layout()
            path = plot_dir / f"mape_by_test_{dm}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)

            # radar of per-test MAPE for the FNN variants and the benchmark
            radar_models = [m for m in ("svr", "cf_fnn", "af_fnn") if m in models]
            if radar_models and len(tests) >= 3:
                angles = np.linspace(0, 2 * np.pi, len(tests), endpoint=False)
                fig = plt.figure(figsize=(4.5, 4.5))
                ax = fig.add_subplot(projection="polar")
                for m in radar_models:
                    vals = sub[sub["model"] == m].set_index("test")["mape"].reindex(tests).to_numpy()
                    ax.plot(np.append(angles, angles[0]), np.append(vals, vals[0]), label=m)
                ax.set_xticks(angles)
                ax.set_xticklabels([f"T{t}" for t in tests])
                ax.set_title(f"MAPE {dm} [%]")
                ax.legend(fontsize=7, loc="lower right")
                fig.tight_layout()
                path = plot_dir / f"radar_{dm}.svg"
                fig.savefig(path, format="svg", metadata={"Date": None})
                plt.close(fig)
                written.append(path)

            # error quantile boxes for the first test, baselines side by side
            qb = boxes[(boxes["dm"] == dm) & (boxes["test"] == boxes["test"].min())]
            if not qb.empty:
                fig, ax = plt.subplots(figsize=(6, 3.5))
                for i, m in enumerate(models):
                    mb = qb[qb["model"] == m]
                    for row in mb.itertuples(index=False):
                        shade = 1.0 - abs(row.q_low + row.q_high - 1.0)
                        ax.bar(i, row.upper - row.lower, 0.3 + 0.5 * shade, bottom=row.lower,
                               color=plt.cm.viridis(shade), edgecolor="k", linewidth=0.3)
                ax.set_xticks(range(len(models)))
                ax.set_xticklabels(models)
                ax.set_ylabel(f"error {dm} [pp]")
                fig.tight_layout()
                path = plot_dir / f"quantile_boxes_{dm}.svg"
                fig.savefig(path, format="svg", metadata={"Date": None})
                plt.close(fig)
                written.append(path)
    return written


def emit_report(report, out_dir, run_info=None, critical=None, plots=True):
    """Write the report directory and return the list of files written.

    Layout::

        metrics.csv          AMAPE/ARMSE and their std per (model, DM)
        metrics_by_test.csv  per-test MAPE/RMSE
        ttest.csv            t-values against the benchmark, with df and threshold
        critical_features.csv
        quantile_boxes.csv   15 equal-probability error boxes per (model, DM, test)
        predictions.csv
        failures.csv
        evaluation.json      everything above in one structured document
        run.json             config echo, seeds and versions
        plots/*.svg
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    boxes = quantile_box_table(report.predictions)
    files = {
        "metrics.csv": report.aggregates,
        "metrics_by_test.csv": report.per_test,
        "ttest.csv": report.ttest,
        "quantile_boxes.csv": boxes,
        "predictions.csv": report.predictions,
        "failures.csv": report.failures,
    }
    if critical is not None:
        files["critical_features.csv"] = critical_feature_table(critical)
    written = []
    for name, frame in files.items():
        # predictions keep full precision so ``load_report`` recomputes metrics exactly
        _csv(frame, out / name, "%.17g" if name == "predictions.csv" else FLOAT_FORMAT)
        written.append(out / name)

    doc = {
        "aggregates": _records(report.aggregates),
        "per_test": _records(report.per_test),
        "ttest": _records(report.ttest),
        "failures": _records(report.failures),
        "best_params": report.best_params,
        "plan": {"tests": [list(t) for t in report.plan.tests], "cells": list(report.plan.cells)},
        "models": list(report.models),
        "features": report.features,
        "t_test": {"df": 2 * len(report.plan.tests) - 2, "threshold": report.settings.t_threshold,
                   "benchmark": report.settings.benchmark},
        "mape_floor": report.settings.mape_floor,
        "settings": dataclasses.asdict(report.settings),
        "exit_code": report.exit_code,
    }
    dump_json(doc, out / "evaluation.json")
    written.append(out / "evaluation.json")
    if run_info is not None:
        dump_json(run_info, out / "run.json")
        written.append(out / "run.json")
    if plots:
        written += _plots(report, boxes, out / "plots")
    return written


def load_report(directory):
    """Rebuild an :class:`EvaluationReport` from a report directory's predictions.

    Returns ``(report, run_info)``; ``run_info`` is None when ``run.json`` is absent.
    """
    from .metrics import aggregate
    from .protocol import (BASELINES, EvaluationReport, ProtocolSettings, TestPlan,
                           _canonical_order, per_test_metrics, ttest_table)

    directory = Path(directory)
    doc = json.loads((directory / "evaluation.json").read_text(encoding="utf-8"))
    predictions = pd.read_csv(directory / "predictions.csv", dtype={"cell_id": str},
                              float_precision="round_trip")
    failures = pd.read_csv(directory / "failures.csv", dtype={"model": str, "message": str})
    settings = ProtocolSettings(**doc["settings"])
    plan = TestPlan(tuple(tuple(t) for t in doc["plan"]["tests"]), tuple(doc["plan"]["cells"]))
    per_test = _canonical_order(per_test_metrics(predictions, settings.mape_floor))
    aggregates = aggregate(per_test)
    models = tuple(doc["models"])
    baselines = [m for m in models if m in BASELINES] if settings.benchmark in models else []
    ttest = ttest_table(aggregates, baselines, settings.benchmark, len(plan.tests),
                        settings.t_threshold)
    best = {int(k): v for k, v in doc["best_params"].items()}
    report = EvaluationReport(per_test, aggregates, ttest, predictions, failures, best, plan,
                              models, doc["features"], settings)
    run_path = directory / "run.json"
    info = json.loads(run_path.read_text(encoding="utf-8")) if run_path.is_file() else None
    return report, info
