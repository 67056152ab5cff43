import numpy as np
import pytest

from dmquant.dataset import Anchor, CellDataset, CycleRecord, DmLabel
from dmquant.synth import DmTrajectory, SynthCellSpec, generate_cell


def make_cycle(voltage, capacity, current=1.0, temperature=25.0, cell_id="X", index=0, efc=0.0,
               dt=10.0):
    """CycleRecord from a sampled V(Q) path charged at constant current."""
    v = np.asarray(voltage, dtype=float)
    q = np.asarray(capacity, dtype=float)
    n = len(v)
    t = np.arange(n) * dt
    i = np.full(n, float(current))
    temp = np.broadcast_to(np.asarray(temperature, dtype=float), (n,)).copy()
    return CycleRecord(cell_id, index, efc, t, v, i, q, temp)


def linear_cycle(n=2001, q_max=2.5, slope=10.0, v0=3.0):
    """V = v0 + Q / slope sampled uniformly in Q."""
    q = np.linspace(0.0, q_max, n)
    return make_cycle(v0 + q / slope, q)


def bare_cell(anchor_efc, anchor_values, cycle_efc, cell_id="C"):
    """Cell with placeholder signals, for label-only tests."""
    anchors = tuple(Anchor(float(e), DmLabel(*map(float, v), source="rpt_anchor"))
                    for e, v in zip(anchor_efc, anchor_values))
    z = np.zeros(16)
    cycles = tuple(CycleRecord(cell_id, k, float(e), np.arange(16.0), z + 3.5, z + 1, z, z + 25)
                   for k, e in enumerate(cycle_efc))
    return CellDataset(cell_id, "CCD", "T25", cycles, anchors)


def three_anchor_spec(cell_id="CCD_1", seed=11, efc_per_cycle=2.0, n_cycles=200):
    end = n_cycles * efc_per_cycle
    knots = (0.0, end / 2, end)
    traj = {"lli": DmTrajectory(knots, (0.0, 0.03, 0.07)),
            "lam_pe": DmTrajectory(knots, (0.0, 0.02, 0.05)),
            "lam_ne": DmTrajectory(knots, (0.0, 0.025, 0.06))}
    return SynthCellSpec(cell_id, "CCD", "T25", traj, seed=seed, efc_per_cycle=efc_per_cycle)


@pytest.fixture(scope="session")
def synth_cell():
    return generate_cell(three_anchor_spec(), n_cycles=200)


@pytest.fixture(scope="session")
def small_frame():
    """Feature matrix of a reduced 16-cell corpus (30 cycles per cell)."""
    from dmquant.features import FeatureExtractor
    from dmquant.synth import generate_corpus

    cells = generate_corpus(seed=3, n_cycles=30, efc_per_cycle=13.0)
    return FeatureExtractor().transform(cells), cells
