"""Degradation-mode quantification from incremental-capacity statistics.

Pipeline: ingest cycling data, build IC curves, extract a 91-feature library,
filter it to a critical subset, and evaluate five regressors on a six-test
hold-out protocol.
"""

__version__ = "0.1.0"

from .dataset import DM_NAMES, CellDataset, IngestConfig, ingest_cell, interpolate_labels
from .features import FEATURE_IDS, FeatureExtractor, MinMaxNormalizer
from .filters import AMDSelector, CriticalFeatureSelector
from .gbt import GradientBoostedTrees
from .ic import compute_ic

__all__ = [
    "AMDSelector", "CellDataset", "CriticalFeatureSelector", "DM_NAMES", "FEATURE_IDS",
    "FeatureExtractor", "GradientBoostedTrees", "IngestConfig", "MinMaxNormalizer",
    "compute_ic", "ingest_cell", "interpolate_labels", "__version__",
]
