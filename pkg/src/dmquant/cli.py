"""Command-line pipeline: synth -> ingest -> features -> filter -> evaluate -> report.

Each stage reads the previous stage's files under ``paths.out_dir`` and writes
its own; rerunning a stage on unchanged inputs rewrites byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .config import RunConfig, describe, stage_seed
from .dataset import discover_cells, ingest_cell, interpolate_labels, load_cell, save_cell
from .evaluation import ProtocolSettings, TestPlan, emit_report, run_protocol, validate_plan
from .evaluation.report import dump_json, load_report
from .exceptions import DataError, DependencyError, DmquantError, ValidationError
from .features import (FEATURE_IDS, LABEL_COLUMNS, FeatureExtractor, read_feature_matrix,
                       write_feature_matrix)
from .filters import CriticalFeatureSelector, CriticalFeatureSet, scores_frame
from .synth import generate_corpus, write_corpus

logger = logging.getLogger("dmquant")

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------------
# stage paths
# ----------------------------------------------------------------------------

def _out(cfg):
    return Path(cfg.paths.out_dir)


def datasets_dir(cfg):
    return _out(cfg) / "datasets"


def features_path(cfg):
    return _out(cfg) / "features.csv"


def filter_dir(cfg):
    return _out(cfg) / "filter"


def report_dir(cfg):
    return _out(cfg) / "report"


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_synth(cfg, jobs=1):
    cells = generate_corpus(stage_seed(cfg.seed, "synth"), cfg.synth.n_cycles,
                            cfg.synth.efc_per_cycle)
    dirs = write_corpus(cells, cfg.paths.data_dir)
    logger.info("wrote %d synthetic cells to %s", len(dirs), cfg.paths.data_dir)
    return EXIT_OK


def cmd_ingest(cfg, jobs=1):
    out = datasets_dir(cfg)
    log = {}
    for cell_dir in discover_cells(cfg.paths.data_dir, cfg.ingest):
        cell = interpolate_labels(ingest_cell(cell_dir, cfg.ingest))
        save_cell(cell, out)
        reasons = {}
        for d in cell.dropped:
            for r in d.reasons:
                reasons[r] = reasons.get(r, 0) + 1
        log[cell.cell_id] = {"source": str(cell_dir), "kept": len(cell.cycles),
                             "dropped": len(cell.dropped), "drop_reasons": reasons}
    dump_json(log, out / "ingest_log.json")
    logger.info("ingested %d cells into %s", len(log), out)
    return EXIT_OK


def _load_datasets(cfg):
    files = sorted(p for p in datasets_dir(cfg).glob("*.json") if p.name != "ingest_log.json") \
        if datasets_dir(cfg).is_dir() else []
    if not files:
        raise DependencyError(f"no datasets in {datasets_dir(cfg)}; run 'ingest' first")
    return [load_cell(p) for p in files]


def cmd_features(cfg, jobs=1):
    cells = _load_datasets(cfg)
    fx = FeatureExtractor(cfg.ic.bin_width_v, cfg.ic.entropy_bins, cfg.ic.nominal_current_a)
    frame = fx.transform(cells)
    if frame.empty:
        raise DataError("no cycle produced a feature vector")
    write_feature_matrix(frame, features_path(cfg))
    logger.info("feature matrix %d x %d -> %s", len(frame), len(FEATURE_IDS), features_path(cfg))
    return EXIT_OK


def _load_features(cfg):
    if not features_path(cfg).is_file():
        raise DependencyError(f"{features_path(cfg)} missing; run 'features' first")
    return read_feature_matrix(features_path(cfg))


def cmd_filter(cfg, jobs=1):
    frame = _load_features(cfg)
    fc = cfg.filter
    sel = CriticalFeatureSelector(keep_ratio=fc.keep_ratio, n_estimators=fc.n_estimators,
                                  max_depth=fc.max_depth, learning_rate=fc.learning_rate,
                                  subsample=fc.subsample, repeats=fc.repeats, mi_bins=fc.mi_bins,
                                  random_state=stage_seed(cfg.seed, "filter"), n_jobs=jobs)
    sel.fit(frame[list(FEATURE_IDS)], frame[list(LABEL_COLUMNS)])
    out = filter_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    scores = scores_frame(sel.scores_, sel.amd_survivors_, sel.critical_set_)
    scores.to_csv(out / "scores.csv", index=False, float_format="%.12g", lineterminator="\n")
    (out / "critical_set.json").write_text(sel.critical_set_.to_json(), encoding="utf-8")
    logger.info("AMD kept %d of %d; %d critical features", len(sel.amd_survivors_),
                len(FEATURE_IDS), len(sel.critical_set_.unified))
    return EXIT_OK


def _load_critical(cfg):
    path = filter_dir(cfg) / "critical_set.json"
    if not path.is_file():
        raise DependencyError(f"{path} missing; run 'filter' first (or use --features all)")
    return CriticalFeatureSet.from_json(path.read_text(encoding="utf-8"))


def _cell_info(cfg):
    info = {}
    for p in sorted(datasets_dir(cfg).glob("*.json")):
        if p.name == "ingest_log.json":
            continue
        meta = json.loads(p.read_text(encoding="utf-8"))
        info[meta["cell_id"]] = (meta["protocol"], meta["temperature_class"])
    return info


def _plan(cfg, frame):
    cells = tuple(sorted(frame["cell_id"].unique()))
    return TestPlan(tuple(tuple(t) for t in cfg.evaluation.tests), cells)


def run_info(cfg, features_mode, jobs):
    import matplotlib
    import numba
    import numpy
    import scipy
    import sklearn

    return {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "stage_seeds": {s: stage_seed(cfg.seed, s) for s in ("synth", "filter", "evaluate")},
        "features_mode": features_mode,
        "jobs": jobs,
        "versions": {"dmquant": __version__, "python": platform.python_version(),
                     "numpy": numpy.__version__, "scipy": scipy.__version__,
                     "scikit-learn": sklearn.__version__, "pandas": pd.__version__,
                     "matplotlib": matplotlib.__version__, "numba": numba.__version__},
    }


def cmd_evaluate(cfg, jobs=1, features="critical"):
    frame = _load_features(cfg)
    critical = _load_critical(cfg) if features == "critical" else None
    plan = _plan(cfg, frame)
    info = _cell_info(cfg) if datasets_dir(cfg).is_dir() else {}
    if info:
        validate_plan(plan, info)
    ev = cfg.evaluation
    settings = ProtocolSettings(grids=cfg.models.grids, fnn=cfg.models.fnn,
                                grid_folds=cfg.models.grid_folds, mape_floor=ev.mape_floor,
                                t_threshold=ev.t_threshold, benchmark=ev.benchmark)
    models = list(cfg.models.models)
    if features == "all":
        models = [m for m in models if m != "cf_fnn"]
    report = run_protocol(frame, critical.unified if critical else FEATURE_IDS, plan, settings,
                          models=models, features=features, seed=stage_seed(cfg.seed, "evaluate"),
                          n_jobs=jobs)
    emit_report(report, report_dir(cfg), run_info(cfg, features, jobs), critical,
                plots=cfg.report.plots)
    if report.exit_code:
        logger.error("%d (model, test) fits failed; see %s", len(report.failures),
                     report_dir(cfg) / "failures.csv")
    return report.exit_code


def cmd_report(cfg, jobs=1):
    """Rebuild tables and plots from the persisted predictions of the last evaluation."""
    directory = report_dir(cfg)
    if not (directory / "predictions.csv").is_file():
        raise DependencyError(f"{directory} has no predictions; run 'evaluate' first")
    report, info = load_report(directory)
    path = filter_dir(cfg) / "critical_set.json"
    critical = CriticalFeatureSet.from_json(path.read_text()) if path.is_file() else None
    emit_report(report, directory, info, critical, plots=cfg.report.plots)
    return report.exit_code


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "features": cmd_features,
            "filter": cmd_filter, "evaluate": cmd_evaluate, "report": cmd_report}

HELP = {
    "synth": "generate the synthetic 16-cell corpus into paths.data_dir",
    "ingest": "parse, screen and label every cell under paths.data_dir",
    "features": "extract the 91-feature matrix from the ingested datasets",
    "filter": "run the AMD / permutation-importance / mutual-information filter",
    "evaluate": "run the six-test protocol and write the report directory",
    "report": "rebuild report tables and plots from saved predictions",
}


def build_parser():
    epilog = "config keys (JSON object, nested by section):\n" + "\n".join(describe()) + (
        "\n\nexit codes: 0 success, 1 validation error, 2 data error, 3 numerical failure")
    parser = _Parser(prog="dmquant", description=__doc__.split("\n")[0],
                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (1 = fully serial)")
    common.add_argument("--data-dir", help="override paths.data_dir")
    common.add_argument("--out-dir", help="override paths.out_dir")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name],
                           epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "evaluate":
            p.add_argument("--features", choices=("critical", "all"), default="critical",
                           help="feature set for the baselines and the FNN")
    return parser


def load_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ValidationError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.data_dir:
        cfg.paths.data_dir = args.data_dir
    if args.out_dir:
        cfg.paths.out_dir = args.out_dir
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        cfg = load_config(args)
        kwargs = {"features": args.features} if args.command == "evaluate" else {}
        return COMMANDS[args.command](cfg, jobs=args.jobs, **kwargs)
    except DmquantError as exc:
        print(f"dmquant {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dmquant {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, ValueError) as exc:
        print(f"dmquant {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc, ArithmeticError) else EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
