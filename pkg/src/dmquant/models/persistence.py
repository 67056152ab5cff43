"""JSON model bundles that reload to bit-identical predictions.

Floats are written with ``repr`` precision by :mod:`json`, so every float64
survives the round trip exactly.
"""

import importlib
import json
from pathlib import Path

import numpy as np
from sklearn.pipeline import Pipeline

from ..exceptions import DataError

FORMAT = "dmquant-model"
VERSION = 1
_COMMON_STATE = ("feature_names_in_", "n_features_in_")


def _encode(value):
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.dtype.str if value.dtype != object else "object",
                "shape": list(value.shape), "data": value.ravel().tolist()}
    if isinstance(value, tuple):
        return {"__tuple__": [_encode(v) for v in value]}
    if isinstance(value, list):
        return [_encode(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _encode(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def _decode(value):
    if isinstance(value, dict):
        if "__ndarray__" in value:
            dtype = object if value["__ndarray__"] == "object" else np.dtype(value["__ndarray__"])
            return np.asarray(value["data"], dtype=dtype).reshape(value["shape"])
        if "__tuple__" in value:
            return tuple(_decode(v) for v in value["__tuple__"])
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def _encode_estimator(est):
    if isinstance(est, Pipeline):
        return {"pipeline": [[name, _encode_estimator(step)] for name, step in est.steps]}
    cls = type(est)
    attrs = tuple(getattr(est, "_state_attrs", ())) + _COMMON_STATE
    state = {a: _encode(getattr(est, a)) for a in attrs if hasattr(est, a)}
    return {"class": f"{cls.__module__}:{cls.__qualname__}",
            "params": _encode(est.get_params(deep=False)), "state": state}


def _decode_estimator(blob):
    if "pipeline" in blob:
        return Pipeline([(name, _decode_estimator(step)) for name, step in blob["pipeline"]])
    module, _, qualname = blob["class"].partition(":")
    if module.split(".")[0] != "dmquant":
        raise DataError(f"refusing to load non-package class {blob['class']}")
    cls = getattr(importlib.import_module(module), qualname)
    est = cls(**_decode(blob["params"]))
    for attr, value in blob["state"].items():
        setattr(est, attr, _decode(value))
    return est


def model_to_dict(model, seed=None, metadata=None):
    return {"format": FORMAT, "version": VERSION, "seed": seed,
            "metadata": _encode(metadata or {}), "model": _encode_estimator(model)}


def model_from_dict(bundle):
    if bundle.get("format") != FORMAT or bundle.get("version") != VERSION:
        raise DataError("not a dmquant model bundle (or unsupported version)")
    return _decode_estimator(bundle["model"])


def save_model(model, path, seed=None, metadata=None):
    """Write ``model`` (an estimator or a Pipeline of them) to ``path`` as JSON."""
    text = json.dumps(model_to_dict(model, seed, metadata), sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_model(path):
    try:
        bundle = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid model bundle ({exc})") from exc
    return model_from_dict(bundle)
