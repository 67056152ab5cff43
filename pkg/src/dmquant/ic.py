"""Incremental-capacity (dQ/dV) curves and the transform curves the feature library reads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import uniform_filter1d

from .exceptions import InsufficientDataError, ParameterError, SignalQualityError

DEFAULT_BIN_WIDTH_V = 0.010
DEFAULT_ENTROPY_BINS = 32


@dataclass(frozen=True, eq=False)
class IcCurve:
    voltage_grid: np.ndarray  # bin centres
    dq_dv: np.ndarray  # Ah/V
    capacity_total_ah: float
    bin_width_v: float
    smoothing: str = "original"
    empty_bins: np.ndarray = field(default=None)

    @property
    def n_empty(self):
        return 0 if self.empty_bins is None else int(self.empty_bins.sum())

    def integral(self):
        """Trapezoid over the bin centres, closed with flat half bins at both ends."""
        h = self.bin_width_v / 2
        v = np.concatenate([[self.voltage_grid[0] - h], self.voltage_grid, [self.voltage_grid[-1] + h]])
        y = np.concatenate([self.dq_dv[:1], self.dq_dv, self.dq_dv[-1:]])
        return float(trapezoid(y, v))


@dataclass(frozen=True, eq=False)
class TransformBundle:
    basic: IcCurve
    cumulative: np.ndarray
    differences: np.ndarray
    entropy_inputs: np.ndarray
    pos_part: np.ndarray
    neg_part: np.ndarray
    throughput_ah: float
    segment_throughput_ah: float


def _binned_charge(voltage, capacity, edges):
    """Charge accumulated per voltage bin.

    Each sample increment contributes its ΔQ spread uniformly over the voltage interval
    it spans, so the V-Q path is treated as piecewise linear between samples.
    """
    dq = np.maximum(np.diff(capacity), 0.0)
    lo = np.minimum(voltage[:-1], voltage[1:])
    hi = np.maximum(voltage[:-1], voltage[1:])
    span = hi - lo
    flat = span <= 0
    safe = np.where(flat, 1.0, span)
    e = edges[:, None]
    frac = np.where(flat, (e > lo).astype(float), np.clip((e - lo) / safe, 0.0, 1.0))
    cum = frac @ dq
    cum[0] = 0.0
    cum[-1] = dq.sum()
    return np.diff(cum)


def compute_ic(cycle, bin_width_v=DEFAULT_BIN_WIDTH_V, nominal_current_a=None,
               current_tolerance=0.10, min_cc_fraction=0.90, min_bins=20,
               max_nonmonotone_fraction=0.05) -> IcCurve:
    """Binned dQ/dV of a constant-current charge segment.

    Parameters
    ----------
    cycle : CycleRecord
        Needs ``voltage_v``, ``capacity_ah`` and ``current_a``.
    bin_width_v : float
        Width of the uniform voltage grid.
    nominal_current_a : float, optional
        Expected CC charge current. Defaults to the median recorded current.

    Returns
    -------
    IcCurve
        Computed on the unsmoothed signal. Bins with no sample inside them are
        linearly interpolated from the nearest occupied neighbours and marked in
        ``empty_bins``.
    """
    if bin_width_v <= 0:
        raise ParameterError("bin_width_v must be positive")
    v = np.asarray(cycle.voltage_v, dtype=float)
    q = np.asarray(cycle.capacity_ah, dtype=float)
    i = np.asarray(cycle.current_a, dtype=float)
    if len(v) < 16:
        raise InsufficientDataError(f"charge segment has {len(v)} samples, need >= 16")

    i_nom = float(np.median(i)) if nominal_current_a is None else float(nominal_current_a)
    if i_nom <= 0:
        raise SignalQualityError("no positive charge current in segment")
    cc = np.abs(i - i_nom) <= current_tolerance * abs(i_nom)
    if cc.mean() < min_cc_fraction:
        raise SignalQualityError(
            f"only {cc.mean():.1%} of samples within ±{current_tolerance:.0%} of {i_nom:g} A")

    down = np.diff(v) < 0
    if down.mean() > max_nonmonotone_fraction:
        raise SignalQualityError(f"voltage decreases on {down.mean():.1%} of samples")

    vmin, vmax = float(v.min()), float(v.max())
    n_bins = int(np.ceil((vmax - vmin) / bin_width_v - 1e-9))
    if n_bins < min_bins:
        raise InsufficientDataError(
            f"voltage span {vmax - vmin:.4f} V covers {n_bins} bins, need >= {min_bins}")

    edges = vmin + bin_width_v * np.arange(n_bins + 1)
    dq_dv = _binned_charge(v, q, edges) / bin_width_v

    occupied = np.bincount(np.minimum(((v - vmin) / bin_width_v).astype(int), n_bins - 1),
                           minlength=n_bins) > 0
    empty = ~occupied
    if empty.any():
        idx = np.flatnonzero(occupied)
        inner = empty & (np.arange(n_bins) > idx[0]) & (np.arange(n_bins) < idx[-1])
        if inner.any():
            dq_dv = dq_dv.copy()
            dq_dv[inner] = np.interp(np.flatnonzero(inner), idx, dq_dv[idx])
        empty = inner

    return IcCurve(voltage_grid=edges[:-1] + bin_width_v / 2, dq_dv=dq_dv,
                   capacity_total_ah=float(q[-1] - q[0]), bin_width_v=float(bin_width_v),
                   smoothing="original", empty_bins=empty)


def smooth_ic(curve: IcCurve, window: int = 5) -> IcCurve:
    """Centred moving average of ``dq_dv`` (edges padded with the nearest value).

    For plots and diagnostics only; features are always taken from the original curve.
    """
    n = len(curve.dq_dv)
    if not isinstance(window, (int, np.integer)) or window % 2 == 0 or window < 3 or window > n / 4:
        raise ParameterError(f"window must be an odd integer in [3, {n // 4}], got {window!r}")
    smoothed = uniform_filter1d(curve.dq_dv, size=int(window), mode="nearest")
    return IcCurve(curve.voltage_grid, smoothed, curve.capacity_total_ah, curve.bin_width_v,
                   smoothing="smoothed", empty_bins=curve.empty_bins)


def normalized_histogram(values, bins=DEFAULT_ENTROPY_BINS):
    """``bins``-bin histogram over the min-max range of ``values``, summing to 1."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(bins)
    lo, hi = values.min(), values.max()
    # a span of a few ulps cannot be split into finite bins; treat it as constant
    if hi - lo <= 1024 * np.finfo(float).eps * max(abs(lo), abs(hi), 1.0):
        out = np.zeros(bins)
        out[0] = 1.0
        return out
    counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
    return counts / counts.sum()


def build_transforms(curve: IcCurve, cumulative_throughput_ah: float,
                     entropy_bins: int = DEFAULT_ENTROPY_BINS) -> TransformBundle:
    if curve.smoothing != "original":
        raise ParameterError("transforms must be built from the original (unsmoothed) curve")
    dq = curve.dq_dv
    return TransformBundle(
        basic=curve,
        cumulative=np.cumsum(dq) * curve.bin_width_v,
        differences=np.diff(dq),
        entropy_inputs=normalized_histogram(dq, entropy_bins),
        pos_part=dq[dq >= 0],
        neg_part=dq[dq < 0],
        throughput_ah=float(cumulative_throughput_ah),
        segment_throughput_ah=curve.capacity_total_ah,
    )


def dump_curve(curve: IcCurve, path):
    """Write ``voltage_grid,dq_dv`` rows for plotting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("voltage_grid,dq_dv\n")
        np.savetxt(fh, np.column_stack([curve.voltage_grid, curve.dq_dv]), fmt="%.10g",
                   delimiter=",")
