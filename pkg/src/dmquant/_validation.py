"""Input validation shared by the estimators."""

import numpy as np
import pandas as pd

from .exceptions import ContractError, ParameterError


def validate_X(estimator, X, reset):
    """Return ``X`` as a float array bound to the estimator's feature schema.

    On ``reset`` the column names of a DataFrame (if any) are recorded as
    ``feature_names_in_``. Afterwards a DataFrame is re-ordered by name, so column
    order does not matter but the name set must match exactly.
    """
    if isinstance(X, pd.DataFrame):
        names = [str(c) for c in X.columns]
        if reset:
            estimator.feature_names_in_ = np.asarray(names, dtype=object)
        elif hasattr(estimator, "feature_names_in_"):
            expected = list(estimator.feature_names_in_)
            missing = sorted(set(expected) - set(names))
            extra = sorted(set(names) - set(expected))
            if missing or extra:
                raise ContractError(f"feature schema mismatch: missing={missing} extra={extra}")
            X = X[expected]
        X = X.to_numpy(dtype=float)
    else:
        # a bare array is accepted positionally
        X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ParameterError(f"expected a 2-D feature array, got shape {X.shape}")
    if reset:
        estimator.n_features_in_ = X.shape[1]
    elif X.shape[1] != estimator.n_features_in_:
        raise ContractError(f"expected {estimator.n_features_in_} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("feature array contains non-finite values")
    return X


def validate_y(y, n_rows, n_outputs=None):
    y = np.asarray(y.to_numpy() if hasattr(y, "to_numpy") else y, dtype=float)
    if len(y) != n_rows:
        raise ParameterError(f"X has {n_rows} rows but y has {len(y)}")
    if n_outputs == 1 and y.ndim == 2 and y.shape[1] == 1:
        y = y.ravel()
    if n_outputs is not None and n_outputs > 1 and (y.ndim != 2 or y.shape[1] != n_outputs):
        raise ParameterError(f"expected y of shape (n, {n_outputs}), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ParameterError("targets contain non-finite values")
    return y


def check_positive(name, value, strict=True):
    ok = value > 0 if strict else value >= 0
    if not ok:
        raise ParameterError(f"{name} must be {'>' if strict else '>='} 0, got {value}")
    return value
