"""Run configuration: nested dataclasses loaded from JSON, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import IngestConfig
from .evaluation.metrics import DEFAULT_MAPE_FLOOR, DEFAULT_T_THRESHOLD
from .evaluation.protocol import DEFAULT_FNN, DEFAULT_GRIDS, DEFAULT_TESTS, MODEL_ORDER
from .exceptions import ConfigError
from .filters import DEFAULT_KEEP_RATIO

# Per-stage seeds are SeedSequence([seed, STAGE_KEYS[stage]]) -> first 32-bit word.
STAGE_KEYS = {"synth": 1, "filter": 2, "evaluate": 3}


def stage_seed(seed, stage):
    return int(np.random.SeedSequence([int(seed), STAGE_KEYS[stage]]).generate_state(1)[0])


def _f(default, help, factory=False):
    if factory:
        return field(default_factory=default, metadata={"help": help})
    return field(default=default, metadata={"help": help})


@dataclass
class PathsConfig:
    data_dir: str = _f("data", "cell directories in the ingest input format")
    out_dir: str = _f("out", "root for datasets/, features.csv, filter/ and report/")


@dataclass
class IcConfig:
    bin_width_v: float = _f(0.01, "voltage bin width of the IC curve (V)")
    entropy_bins: int = _f(32, "histogram bins for the entropy features")
    nominal_current_a: float | None = _f(None, "CC charge current; null uses each cycle's median")


@dataclass
class FilterConfig:
    keep_ratio: float = _f(DEFAULT_KEEP_RATIO, "share of library features kept by the AMD screen")
    n_estimators: int = _f(200, "GBT trees for permutation importance")
    max_depth: int = _f(4, "GBT tree depth")
    learning_rate: float = _f(0.1, "GBT shrinkage")
    subsample: float = _f(1.0, "GBT row subsampling per tree")
    repeats: int = _f(100, "shuffles per feature in permutation importance")
    mi_bins: int = _f(16, "equal-frequency bins per variable for mutual information")


@dataclass
class ModelsConfig:
    models: list = _f(lambda: list(MODEL_ORDER), "models to evaluate", factory=True)
    grids: dict = _f(lambda: {k: dict(v) for k, v in DEFAULT_GRIDS.items()},
                     "baseline hyperparameter grids (searched with grouped CV by cell)", factory=True)
    grid_folds: int = _f(3, "grouped CV folds for the grid search")
    fnn: dict = _f(lambda: dict(DEFAULT_FNN), "FNN settings (layer widths, loss weights, Adam)",
                   factory=True)


@dataclass
class EvaluationConfig:
    tests: list = _f(lambda: [list(t) for t in DEFAULT_TESTS], "six held-out cell triples",
                     factory=True)
    mape_floor: float = _f(DEFAULT_MAPE_FLOOR, "labels below this fraction are left out of MAPE")
    t_threshold: float = _f(DEFAULT_T_THRESHOLD, "critical t value for the benchmark comparison")
    benchmark: str = _f("svr", "reference model of the t-test")


@dataclass
class SynthConfig:
    n_cycles: int = _f(200, "recorded cycles per synthetic cell")
    efc_per_cycle: float = _f(2.0, "EFC between recorded cycles")


@dataclass
class ReportConfig:
    plots: bool = _f(True, "write SVG plots")


@dataclass
class RunConfig:
    seed: int = _f(0, "global seed; stage seeds derive from it")
    paths: PathsConfig = _f(PathsConfig, "input and output locations", factory=True)
    ingest: IngestConfig = _f(IngestConfig, "cycle screening and file names", factory=True)
    ic: IcConfig = _f(IcConfig, "IC curve construction", factory=True)
    filter: FilterConfig = _f(FilterConfig, "critical-feature filter", factory=True)
    models: ModelsConfig = _f(ModelsConfig, "model roster, grids and FNN settings", factory=True)
    evaluation: EvaluationConfig = _f(EvaluationConfig, "test plan and metrics", factory=True)
    synth: SynthConfig = _f(SynthConfig, "synthetic corpus size", factory=True)
    report: ReportConfig = _f(ReportConfig, "report options", factory=True)

    @classmethod
    def from_dict(cls, values):
        return _build(cls, values, "")

    @classmethod
    def from_file(cls, path):
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(values)

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, values, prefix):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in values.items():
        f = fields[name]
        sub = _section_type(cls, f)
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {prefix or '<root>'}: {exc}") from exc


def _section_type(cls, f):
    default = f.default_factory if f.default_factory is not dataclasses.MISSING else None
    if isinstance(default, type) and dataclasses.is_dataclass(default):
        return default
    return None


def describe(cls=RunConfig, prefix=""):
    """One line per config key: dotted name, default and help text."""
    lines = []
    inst = cls()
    for f in dataclasses.fields(cls):
        sub = _section_type(cls, f)
        if sub is not None:
            lines += describe(sub, f"{prefix}{f.name}.")
            continue
        help_text = f.metadata.get("help", "")
        if not help_text and sub is None and cls is IngestConfig:
            help_text = INGEST_HELP.get(f.name, "")
        lines.append(f"  {prefix}{f.name} = {json.dumps(getattr(inst, f.name))}  {help_text}".rstrip())
    return lines


INGEST_HELP = {
    "v_min": "lowest plausible voltage (V); samples below are trimmed",
    "v_max": "highest plausible voltage (V); samples above are trimmed",
    "temp_band_c": "allowed deviation from the temperature setpoint (C)",
    "temp_excursion_frac": "share of samples outside the band that drops a cycle",
    "capacity_regression_ah": "capacity drop (Ah) treated as a counter regression",
    "min_samples": "cycles with fewer samples are dropped",
    "meta_file": "per-cell metadata file name",
    "anchor_file": "per-cell RPT anchor file name",
    "index_file": "per-cell cycle index file name",
}
