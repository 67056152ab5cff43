"""Per-cell cycling data: ingest, abnormal-cycle screening and DM labelling.

On-disk input layout for one cell (``data_dir/<cell_id>/``)::

    cell.json     {"cell_id": ..., "protocol": "CCD"|"DCD", "temperature_class": "T10"|"T25"|"T40"}
    anchors.csv   efc,lli,lam_pe,lam_ne         (DM values as fractions)
    cycles.csv    cycle_index,efc,file          (index of cycle files)
    cycles/<file> time_s,voltage_v,current_a,capacity_ah,temperature_c
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .exceptions import (ConfigError, InsufficientAnchorsError, MonotonicityError,
                         NoInputError, ParseError)

logger = logging.getLogger(__name__)

DM_NAMES = ("lli", "lam_pe", "lam_ne")
CYCLE_COLUMNS = ("time_s", "voltage_v", "current_a", "capacity_ah", "temperature_c")
ANCHOR_COLUMNS = ("efc",) + DM_NAMES
INDEX_COLUMNS = ("cycle_index", "efc", "file")
PROTOCOLS = ("CCD", "DCD")
TEMPERATURE_CLASSES = {"T10": 10.0, "T25": 25.0, "T40": 40.0}

# flag / drop-reason vocabulary
SENSOR_FAULT = "sensor-fault"
TEMPERATURE_EXCURSION = "temperature-excursion"
CAPACITY_REGRESSION = "capacity-regression"
TIME_NON_MONOTONE = "time-non-monotone"
TOO_FEW_SAMPLES = "too-few-samples"
VOLTAGE_TRIMMED = "voltage-trimmed"
OUTSIDE_ANCHORS = "outside-anchor-range"
ABNORMAL_REASONS = frozenset({SENSOR_FAULT, TEMPERATURE_EXCURSION, CAPACITY_REGRESSION,
                              TIME_NON_MONOTONE, TOO_FEW_SAMPLES})


@dataclass(frozen=True)
class IngestConfig:
    """Ingest settings. Every field may be overridden from a JSON key-value file."""

    v_min: float = 2.5
    v_max: float = 4.25
    temp_band_c: float = 5.0
    temp_excursion_frac: float = 0.05
    capacity_regression_ah: float = 1e-3
    min_samples: int = 16
    meta_file: str = "cell.json"
    anchor_file: str = "anchors.csv"
    index_file: str = "cycles.csv"

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown ingest config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class CycleRecord:
    cell_id: str
    cycle_index: int
    efc: float
    time_s: np.ndarray
    voltage_v: np.ndarray
    current_a: np.ndarray
    capacity_ah: np.ndarray
    temperature_c: np.ndarray
    flags: frozenset = frozenset()

    def __len__(self):
        return len(self.time_s)

    @property
    def charge_capacity_ah(self):
        return float(self.capacity_ah[-1] - self.capacity_ah[0])


@dataclass(frozen=True)
class DmLabel:
    lli: float
    lam_pe: float
    lam_ne: float
    source: str = "interpolated"

    def __post_init__(self):
        if self.source not in ("rpt_anchor", "interpolated"):
            raise ValueError(f"unknown label source {self.source!r}")
        for name in DM_NAMES:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_array(self):
        return np.array([self.lli, self.lam_pe, self.lam_ne])


@dataclass(frozen=True)
class Anchor:
    efc: float
    label: DmLabel


@dataclass(frozen=True)
class DroppedCycle:
    cycle_index: int
    efc: float
    reasons: frozenset


@dataclass(frozen=True, eq=False)
class CellDataset:
    cell_id: str
    protocol: str
    temperature_class: str
    cycles: tuple
    anchors: tuple
    labels: tuple | None = None
    dropped: tuple = ()

    @property
    def setpoint_c(self):
        return TEMPERATURE_CLASSES[self.temperature_class]

    @property
    def n_ingested(self):
        return len(self.cycles) + len(self.dropped)

    def label_matrix(self):
        """Labels as an ``(n_cycles, 3)`` array of fractions."""
        if self.labels is None:
            raise ValueError(f"cell {self.cell_id} is not labelled")
        return np.array([lab.as_array() for lab in self.labels]).reshape(-1, 3)

    def efc_array(self):
        return np.array([c.efc for c in self.cycles], dtype=float)


# --------------------------------------------------------------------------
# screening
# --------------------------------------------------------------------------

def abnormal_reasons(time_s, voltage_v, current_a, capacity_ah, temperature_c,
                     setpoint_c, config=IngestConfig()):
    """Return the set of drop reasons for one raw cycle (empty if the cycle is kept)."""
    reasons = set()
    arrays = (time_s, voltage_v, current_a, capacity_ah, temperature_c)
    if len(time_s) < config.min_samples:
        reasons.add(TOO_FEW_SAMPLES)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        reasons.add(SENSOR_FAULT)
        return reasons
    if len(time_s) > 1 and np.any(np.diff(time_s) <= 0):
        reasons.add(TIME_NON_MONOTONE)
    outside = np.abs(temperature_c - setpoint_c) > config.temp_band_c
    if len(temperature_c) and outside.mean() > config.temp_excursion_frac:
        reasons.add(TEMPERATURE_EXCURSION)
    if len(capacity_ah) > 1:
        running_max = np.maximum.accumulate(capacity_ah)
        if np.max(running_max - capacity_ah) > config.capacity_regression_ah:
            reasons.add(CAPACITY_REGRESSION)
    return reasons


def _clean_cycle(cell_id, cycle_index, efc, cols, setpoint_c, config):
    """Apply the screening rules; returns a CycleRecord or a DroppedCycle."""
    reasons = abnormal_reasons(*(cols[c] for c in CYCLE_COLUMNS), setpoint_c, config)
    if reasons:
        return DroppedCycle(cycle_index, efc, frozenset(reasons))

    flags = set()
    keep = (cols["voltage_v"] >= config.v_min) & (cols["voltage_v"] <= config.v_max)
    if not keep.all():
        flags.add(VOLTAGE_TRIMMED)
        cols = {k: v[keep] for k, v in cols.items()}
        if len(cols["time_s"]) < config.min_samples:
            return DroppedCycle(cycle_index, efc, frozenset({TOO_FEW_SAMPLES}))
    # sub-threshold capacity jitter is levelled so the segment is non-decreasing
    capacity = np.maximum.accumulate(cols["capacity_ah"])
    return CycleRecord(cell_id=cell_id, cycle_index=int(cycle_index), efc=float(efc),
                       time_s=cols["time_s"], voltage_v=cols["voltage_v"],
                       current_a=cols["current_a"], capacity_ah=capacity,
                       temperature_c=cols["temperature_c"], flags=frozenset(flags))


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def _locate_bad_line(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                return lineno, f"expected {len(columns)} fields, got {len(row)}"
            for value, name in zip(row, columns):
                try:
                    float(value) if value.strip() else None
                except ValueError:
                    return lineno, f"column {name!r}: cannot parse {value!r}"
    return None, "unparseable content"


def read_table(path, columns, numeric=None):
    """Read a headed, comma-delimited UTF-8 table with a fixed column set.

    Parameters
    ----------
    path : path-like
    columns : sequence of str
        Required column names; extra or missing columns raise ParseError.
    numeric : sequence of str, optional
        Columns parsed as float. Defaults to all columns.

    Returns
    -------
    pandas.DataFrame
        Columns in the order given by ``columns``.
    """
    path = Path(path)
    numeric = list(columns if numeric is None else numeric)
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc), path) from exc
    names = [h.strip() for h in header.split(",")] if header else []
    if sorted(names) != sorted(columns):
        raise ParseError(f"header {names} does not match required columns {list(columns)}",
                         path, 1)
    try:
        frame = pd.read_csv(path, dtype={c: "float64" for c in numeric}, encoding="utf-8")
    except (ValueError, pd.errors.ParserError) as exc:
        line, msg = _locate_bad_line(path, names)
        raise ParseError(msg if line else str(exc), path, line) from exc
    return frame[list(columns)]


def _read_meta(path):
    try:
        with open(path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(str(exc), path) from exc
    for key in ("cell_id", "protocol", "temperature_class"):
        if key not in meta:
            raise ParseError(f"missing key {key!r}", path)
    if meta["protocol"] not in PROTOCOLS:
        raise ParseError(f"unknown protocol {meta['protocol']!r}", path)
    if meta["temperature_class"] not in TEMPERATURE_CLASSES:
        raise ParseError(f"unknown temperature class {meta['temperature_class']!r}", path)
    return meta


def validate_anchors(anchors: Sequence[Anchor]):
    """Raise if there are fewer than two anchors or any DM decreases between anchors."""
    if len(anchors) < 2:
        raise InsufficientAnchorsError(f"need at least 2 RPT anchors, got {len(anchors)}")
    for a, b in zip(anchors, anchors[1:]):
        if b.efc <= a.efc:
            raise MonotonicityError(f"anchor efc not increasing: {a.efc} then {b.efc}")
        for name in DM_NAMES:
            va, vb = getattr(a.label, name), getattr(b.label, name)
            if vb < va:
                raise MonotonicityError(
                    f"{name} decreases between anchors at efc={a.efc} ({va}) "
                    f"and efc={b.efc} ({vb})")


def read_anchors(path):
    frame = read_table(path, ANCHOR_COLUMNS)
    frame = frame.sort_values("efc", kind="stable")
    anchors = []
    for lineno, row in zip(frame.index + 2, frame.itertuples(index=False)):
        try:
            label = DmLabel(row.lli, row.lam_pe, row.lam_ne, source="rpt_anchor")
        except ValueError as exc:
            raise ParseError(str(exc), path, int(lineno)) from exc
        anchors.append(Anchor(float(row.efc), label))
    return tuple(anchors)


def ingest_cell(cell_dir, config: IngestConfig = IngestConfig()) -> CellDataset:
    """Parse one cell directory and screen out abnormal cycles.

    Dropped cycles keep their reasons in ``CellDataset.dropped``; retained cycles are
    sorted by cycle index. Anchors are validated before any cycle file is read.
    """
    cell_dir = Path(cell_dir)
    meta = _read_meta(cell_dir / config.meta_file)
    anchors = read_anchors(cell_dir / config.anchor_file)
    validate_anchors(anchors)

    index_path = cell_dir / config.index_file
    index = read_table(index_path, INDEX_COLUMNS, numeric=("cycle_index", "efc"))
    setpoint = TEMPERATURE_CLASSES[meta["temperature_class"]]

    kept, dropped = [], []
    for row in index.sort_values("cycle_index", kind="stable").itertuples(index=False):
        frame = read_table(cell_dir / row.file, CYCLE_COLUMNS)
        cols = {c: frame[c].to_numpy(dtype=float) for c in CYCLE_COLUMNS}
        out = _clean_cycle(meta["cell_id"], int(row.cycle_index), float(row.efc),
                           cols, setpoint, config)
        (dropped if isinstance(out, DroppedCycle) else kept).append(out)

    if dropped:
        logger.info("%s: dropped %d of %d cycles", meta["cell_id"], len(dropped),
                    len(kept) + len(dropped))
    return CellDataset(cell_id=meta["cell_id"], protocol=meta["protocol"],
                       temperature_class=meta["temperature_class"], cycles=tuple(kept),
                       anchors=anchors, dropped=tuple(dropped))


def discover_cells(data_dir, config: IngestConfig = IngestConfig()):
    """Cell directories under ``data_dir`` (those holding a meta file), sorted by name."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise NoInputError(f"data directory {data_dir} does not exist")
    cells = sorted(p for p in data_dir.iterdir() if (p / config.meta_file).is_file())
    if not cells:
        raise NoInputError(f"no cell directories found in {data_dir}")
    return cells


# --------------------------------------------------------------------------
# labelling
# --------------------------------------------------------------------------

def interpolate_labels(cell: CellDataset) -> CellDataset:
    """Attach piecewise-linear (in EFC) DM labels to every cycle bracketed by anchors.

    Cycles before the first or after the last anchor are moved to ``dropped``.
    """
    validate_anchors(cell.anchors)
    efc_a = np.array([a.efc for a in cell.anchors])
    lo, hi = efc_a[0], efc_a[-1]
    values = np.array([a.label.as_array() for a in cell.anchors])

    kept, dropped = [], list(cell.dropped)
    for cyc in cell.cycles:
        if lo <= cyc.efc <= hi:
            kept.append(cyc)
        else:
            dropped.append(DroppedCycle(cyc.cycle_index, cyc.efc, frozenset({OUTSIDE_ANCHORS})))
    if len(dropped) > len(cell.dropped):
        logger.info("%s: %d cycles outside anchor range [%g, %g] dropped",
                    cell.cell_id, len(dropped) - len(cell.dropped), lo, hi)

    efc = np.array([c.efc for c in kept], dtype=float)
    labels = []
    for e in efc:
        hit = np.flatnonzero(efc_a == e)
        if hit.size:
            labels.append(cell.anchors[hit[0]].label)
            continue
        v = [float(np.interp(e, efc_a, values[:, k])) for k in range(3)]
        labels.append(DmLabel(*v, source="interpolated"))
    return dataclasses.replace(cell, cycles=tuple(kept), labels=tuple(labels),
                               dropped=tuple(dropped))


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _write_csv(path, header, rows_array, fmt="%.12g"):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, rows_array, fmt=fmt, delimiter=",")


def write_cell_files(cell: CellDataset, data_dir, config: IngestConfig = IngestConfig()):
    """Write a cell in the ingest input format (inverse of :func:`ingest_cell`)."""
    cell_dir = Path(data_dir) / cell.cell_id
    (cell_dir / "cycles").mkdir(parents=True, exist_ok=True)
    meta = {"cell_id": cell.cell_id, "protocol": cell.protocol,
            "temperature_class": cell.temperature_class}
    (cell_dir / config.meta_file).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    _write_csv(cell_dir / config.anchor_file, ANCHOR_COLUMNS,
               np.array([[a.efc, *a.label.as_array()] for a in cell.anchors]), fmt="%.17g")
    lines = [",".join(INDEX_COLUMNS)]
    for cyc in cell.cycles:
        name = f"cycles/cycle_{cyc.cycle_index:05d}.csv"
        lines.append(f"{cyc.cycle_index},{cyc.efc!r},{name}")
        _write_csv(cell_dir / name, CYCLE_COLUMNS,
                   np.column_stack([getattr(cyc, c) for c in CYCLE_COLUMNS]))
    (cell_dir / config.index_file).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return cell_dir


def save_cell(cell: CellDataset, out_dir):
    """Persist a (labelled) cell as ``<cell_id>.json`` + ``<cell_id>.npy``.

    The ``.npy`` holds one row per sample: cycle_index followed by the five signals.
    Both files are byte-deterministic for a given cell.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = [np.column_stack([np.full(len(c), c.cycle_index, dtype=float)]
                               + [getattr(c, k) for k in CYCLE_COLUMNS]) for c in cell.cycles]
    np.save(out_dir / f"{cell.cell_id}.npy",
            np.vstack(samples) if samples else np.empty((0, 6)), allow_pickle=False)
    meta = {
        "cell_id": cell.cell_id,
        "protocol": cell.protocol,
        "temperature_class": cell.temperature_class,
        "anchors": [{"efc": a.efc, **dataclasses.asdict(a.label)} for a in cell.anchors],
        "cycles": [{"cycle_index": c.cycle_index, "efc": c.efc, "flags": sorted(c.flags)}
                   for c in cell.cycles],
        "labels": None if cell.labels is None else [dataclasses.asdict(l) for l in cell.labels],
        "dropped": [{"cycle_index": d.cycle_index, "efc": d.efc, "reasons": sorted(d.reasons)}
                    for d in cell.dropped],
    }
    (out_dir / f"{cell.cell_id}.json").write_text(json.dumps(meta, indent=1) + "\n",
                                                  encoding="utf-8")


def load_cell(json_path) -> CellDataset:
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text(encoding="utf-8"))
    samples = np.load(json_path.with_suffix(".npy"), allow_pickle=False)
    idx = samples[:, 0].astype(int) if len(samples) else np.empty(0, dtype=int)
    # rows are stored contiguously per cycle, in cycle order
    bounds = np.flatnonzero(np.diff(idx)) + 1
    chunks = np.split(samples, bounds) if len(samples) else []
    cycles = []
    for info, chunk in zip(meta["cycles"], chunks):
        cycles.append(CycleRecord(meta["cell_id"], info["cycle_index"], info["efc"],
                                  *(chunk[:, k + 1].copy() for k in range(5)),
                                  flags=frozenset(info["flags"])))
    anchors = tuple(Anchor(a["efc"], DmLabel(a["lli"], a["lam_pe"], a["lam_ne"], a["source"]))
                    for a in meta["anchors"])
    labels = None if meta["labels"] is None else tuple(DmLabel(**l) for l in meta["labels"])
    dropped = tuple(DroppedCycle(d["cycle_index"], d["efc"], frozenset(d["reasons"]))
                    for d in meta["dropped"])
    return CellDataset(meta["cell_id"], meta["protocol"], meta["temperature_class"],
                       tuple(cycles), anchors, labels, dropped)


def cumulative_throughput(cycles: Iterable[CycleRecord]):
    """Charge throughput since start of life, up to and including each cycle (Ah)."""
    return np.cumsum([max(c.charge_capacity_ah, 0.0) for c in cycles])
