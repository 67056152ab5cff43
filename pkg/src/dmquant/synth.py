"""Synthetic aging corpora with known degradation-mode trajectories.

Each cycle's IC curve is a sum of Gaussian peaks on a flat background over the
charge window. LLI shifts every peak toward higher voltage and shrinks the
total area; LAMpe attenuates the high-voltage peaks; LAMne the low-voltage ones.
The curve is integrated to Q(V), inverted and sampled as a constant-current
charge with seeded voltage noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dataset import (DM_NAMES, TEMPERATURE_CLASSES, Anchor, CellDataset, CycleRecord, DmLabel,
                      interpolate_labels, write_cell_files)
from .exceptions import ParameterError

ANCHOR_SPACING_EFC = 78.0
V_LOW, V_HIGH = 3.0, 4.2
NOMINAL_CAPACITY_AH = 5.0
C_RATE = 1 / 3
SAMPLE_PERIOD_S = 10.0
MAX_DM = 0.4
SPLIT_VOLTAGE = 3.75  # peaks at or above it belong to the positive electrode

DEFAULT_PEAKS = ((3.45, 0.045, 5.0), (3.58, 0.07, 3.2), (3.70, 0.05, 2.2),
                 (3.93, 0.06, 2.8), (4.08, 0.045, 1.8))
BACKGROUND_AH_PER_V = 0.9
VOLTAGE_NOISE_V = 1e-4
VOLTAGE_RESOLUTION_V = 1e-3  # cycler logging resolution


@dataclass(frozen=True)
class DmTrajectory:
    """Piecewise-linear DM fraction as a function of EFC (evaluated by ``np.interp``)."""

    knots_efc: tuple
    values: tuple

    def __post_init__(self):
        k, v = np.asarray(self.knots_efc, float), np.asarray(self.values, float)
        if len(k) < 2 or k.shape != v.shape or np.any(np.diff(k) <= 0):
            raise ParameterError("trajectory knots must be >= 2 strictly increasing EFC values")
        if np.any(np.diff(v) < 0) or v.min() < 0 or v.max() > MAX_DM:
            raise ParameterError(f"trajectory values must be non-decreasing within [0, {MAX_DM}]")

    def __call__(self, efc):
        return np.interp(efc, self.knots_efc, self.values)


def knee_trajectory(rate, horizon_efc, knee_efc=None, knee_factor=1.0, offset=0.0,
                    spacing=ANCHOR_SPACING_EFC):
    """Linear growth ``offset + rate*efc`` that steepens by ``knee_factor`` after ``knee_efc``.

    Knots sit on the anchor grid (multiples of ``spacing``) up to the first one at
    or beyond ``horizon_efc``; the knee is snapped to that grid.
    """
    n = int(np.ceil(horizon_efc / spacing - 1e-9))
    knots = spacing * np.arange(n + 1)
    extra = 0.0 if knee_efc is None else rate * (knee_factor - 1.0)
    knee = np.inf if knee_efc is None else spacing * round(knee_efc / spacing)
    vals = offset + rate * knots + extra * np.maximum(knots - knee, 0.0)
    return DmTrajectory(tuple(knots), tuple(np.minimum(vals, MAX_DM)))


@dataclass(frozen=True)
class SynthCellSpec:
    cell_id: str
    protocol: str
    temperature_class: str
    trajectories: dict
    peaks: tuple = DEFAULT_PEAKS
    seed: int = 0
    voltage_noise_v: float = VOLTAGE_NOISE_V
    voltage_resolution_v: float = VOLTAGE_RESOLUTION_V  # logger quantisation step, 0 = none
    temperature_noise_c: float = 0.2
    efc_per_cycle: float = 2.0
    lli_shift_v: float = 0.6
    lam_attenuation: float = 2.5
    lli_area_loss: float = 0.5
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in ("CCD", "DCD"):
            raise ParameterError(f"unknown protocol {self.protocol!r}")
        if self.temperature_class not in TEMPERATURE_CLASSES:
            raise ParameterError(f"unknown temperature class {self.temperature_class!r}")
        if set(self.trajectories) != set(DM_NAMES):
            raise ParameterError(f"trajectories must cover exactly {DM_NAMES}")
        if len(self.peaks) < 2:
            raise ParameterError("need at least two peaks")
        for c, w, h in self.peaks:
            if not (V_LOW < c < V_HIGH and w > 0 and h > 0):
                raise ParameterError(f"bad peak ({c}, {w}, {h})")
        if self.voltage_noise_v < 0 or self.voltage_resolution_v < 0 or self.efc_per_cycle <= 0:
            raise ParameterError("noise must be >= 0 and efc_per_cycle > 0")


def ic_model(spec, lli, lam_pe, lam_ne, voltage):
    """Noise-free dQ/dV (Ah/V) of the cell at the given DM state."""
    peaks = np.asarray(spec.peaks, float)
    centers = peaks[:, 0] + spec.lli_shift_v * lli
    heights = peaks[:, 2] * np.where(peaks[:, 0] >= SPLIT_VOLTAGE,
                                     1.0 - spec.lam_attenuation * lam_pe,
                                     1.0 - spec.lam_attenuation * lam_ne)
    heights = np.maximum(heights, 0.0) * (1.0 - spec.lli_area_loss * lli)
    z = (voltage[:, None] - centers) / peaks[:, 1]
    background = BACKGROUND_AH_PER_V * (1.0 - spec.lli_area_loss * lli)
    return background + (heights * np.exp(-0.5 * z ** 2)).sum(axis=1)


def _pristine_scale(spec):
    grid = np.linspace(V_LOW, V_HIGH, 6001)
    area = cumulative_trapezoid(ic_model(spec, 0.0, 0.0, 0.0, grid), grid)[-1]
    return NOMINAL_CAPACITY_AH / area


def charge_record(spec, dm, scale, rng, cycle_index, efc, setpoint, temp_shift):
    """Sampled CC charge for one cycle at DM state ``dm = (lli, lam_pe, lam_ne)``."""
    grid = np.linspace(V_LOW, V_HIGH, 6001)
    q_of_v = np.concatenate([[0.0], cumulative_trapezoid(scale * ic_model(spec, *dm, grid), grid)])
    capacity = q_of_v[-1]
    current = C_RATE * NOMINAL_CAPACITY_AH
    t_end = capacity / current * 3600.0
    t = np.append(np.arange(0.0, t_end, SAMPLE_PERIOD_S), t_end)
    q = current * t / 3600.0
    v = np.interp(q, q_of_v, grid) + rng.normal(0.0, spec.voltage_noise_v, len(t))
    v = np.clip(v, V_LOW - 5 * spec.voltage_noise_v, V_HIGH + 5 * spec.voltage_noise_v)
    if spec.voltage_resolution_v > 0:
        v = np.round(v / spec.voltage_resolution_v) * spec.voltage_resolution_v
    i = current * (1.0 + rng.normal(0.0, 1e-3, len(t)))
    temp = (setpoint + temp_shift + 1.0 * t / t_end
            + rng.normal(0.0, spec.temperature_noise_c, len(t)))
    return CycleRecord(spec.cell_id, cycle_index, float(efc), t, v, i, q, temp), capacity


def generate_cell(spec: SynthCellSpec, n_cycles=200, return_capacity=False):
    """Synthesize a labelled :class:`CellDataset` with ``n_cycles`` charge records.

    Cycle ``k`` (0-based) sits at ``efc = (k + 1) * spec.efc_per_cycle``. Anchors
    are the trajectory knots, so interpolated labels equal the trajectories.
    """
    if n_cycles < 20:
        raise ParameterError("n_cycles must be >= 20")
    traj = spec.trajectories
    knots = np.asarray(traj["lli"].knots_efc)
    if any(tuple(traj[d].knots_efc) != tuple(knots) for d in DM_NAMES):
        raise ParameterError("all trajectories must share the same knots")
    last_efc = n_cycles * spec.efc_per_cycle
    if knots[-1] < last_efc:
        raise ParameterError(f"trajectories end at {knots[-1]} EFC, cycles reach {last_efc}")

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
    setpoint = TEMPERATURE_CLASSES[spec.temperature_class]
    cell_offset = rng.uniform(-1.2, 1.2)
    # chamber drift over life: correlated with aging inside a cell, random across cells
    drift = rng.uniform(-2.2, 2.2) / last_efc
    scale = _pristine_scale(spec)
    cycles, capacities = [], []
    for k in range(n_cycles):
        efc = (k + 1) * spec.efc_per_cycle
        dm = tuple(float(traj[d](efc)) for d in DM_NAMES)
        rec, cap = charge_record(spec, dm, scale, rng, k + 1, efc, setpoint,
                                 cell_offset + drift * efc + rng.normal(0.0, 0.3))
        cycles.append(rec)
        capacities.append(cap)
    anchors = tuple(Anchor(float(e), DmLabel(*(float(traj[d].values[i]) for d in DM_NAMES),
                                             source="rpt_anchor"))
                    for i, e in enumerate(knots))
    cell = interpolate_labels(CellDataset(spec.cell_id, spec.protocol, spec.temperature_class,
                                          tuple(cycles), anchors))
    return (cell, np.asarray(capacities)) if return_capacity else cell


# Mean DM growth per EFC at each temperature class (lli, lam_pe, lam_ne).
_BASE_RATES = {"T10": (3.6e-4, 1.6e-4, 3.0e-4), "T25": (2.6e-4, 1.9e-4, 2.2e-4),
               "T40": (3.0e-4, 2.6e-4, 2.0e-4)}
_PROTOCOL_FACTOR = {"CCD": 1.0, "DCD": 0.85}


def default_specs(seed=0, n_cycles=200, efc_per_cycle=2.0, voltage_noise_v=VOLTAGE_NOISE_V,
                  voltage_resolution_v=VOLTAGE_RESOLUTION_V):
    """Sixteen cell specs mirroring the CCD/DCD x temperature layout of the lab corpus."""
    layout = [("T10", 3), ("T25", 2), ("T40", 3)]
    horizon = n_cycles * efc_per_cycle
    specs = []
    for p_idx, protocol in enumerate(("CCD", "DCD")):
        number = 0
        for tclass, count in layout:
            for _ in range(count):
                number += 1
                cell_seed = int(np.random.SeedSequence([seed, p_idx, number]).generate_state(1)[0])
                rng = np.random.default_rng(cell_seed)
                trajs = {}
                for d, base in zip(DM_NAMES, _BASE_RATES[tclass]):
                    rate = base * _PROTOCOL_FACTOR[protocol] * rng.uniform(0.8, 1.25)
                    rate *= 400.0 / horizon
                    knee = rng.uniform(0.55, 0.8) * horizon if rng.random() < 0.5 else None
                    trajs[d] = knee_trajectory(rate, horizon, knee, rng.uniform(1.3, 1.8),
                                               offset=rng.uniform(0.004, 0.012))
                peaks = tuple((c + rng.normal(0, 0.008), w * rng.uniform(0.9, 1.1),
                               h * rng.uniform(0.88, 1.12)) for c, w, h in DEFAULT_PEAKS)
                specs.append(SynthCellSpec(f"{protocol}_{number}", protocol, tclass, trajs,
                                           peaks=peaks, seed=cell_seed,
                                           voltage_noise_v=voltage_noise_v,
                                           voltage_resolution_v=voltage_resolution_v,
                                           efc_per_cycle=efc_per_cycle))
    return specs


def generate_corpus(seed=0, n_cycles=200, efc_per_cycle=2.0, specs=None,
                    voltage_noise_v=VOLTAGE_NOISE_V, voltage_resolution_v=VOLTAGE_RESOLUTION_V):
    if specs is None:
        specs = default_specs(seed, n_cycles, efc_per_cycle, voltage_noise_v, voltage_resolution_v)
    return [generate_cell(s, n_cycles) for s in specs]


def write_corpus(cells, data_dir):
    """Write cells in the ingest input format; returns the cell directories."""
    return [write_cell_files(c, data_dir) for c in cells]
