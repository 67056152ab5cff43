"""Three-output feed-forward network trained on a weighted sum of per-output RMSEs."""

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_positive, validate_X, validate_y
from ..exceptions import DivergenceError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_LOSS_WEIGHTS = (1.0, 4.0, 2.0)


def weighted_rmse_loss(Y_true, Y_pred, weights):
    """``sum_k w_k * sqrt(mean_i (Y_pred[i, k] - Y_true[i, k])**2)``."""
    err = np.asarray(Y_pred, float) - np.asarray(Y_true, float)
    return float(np.sqrt(np.mean(err ** 2, axis=0)) @ np.asarray(weights, float))


def forward(coefs, intercepts, X):
    """Return the list of layer activations; the last entry is the linear output."""
    acts = [X]
    for k, (W, b) in enumerate(zip(coefs, intercepts)):
        z = acts[-1] @ W + b
        acts.append(z if k == len(coefs) - 1 else np.maximum(z, 0.0))
    return acts


def loss_and_gradients(coefs, intercepts, X, Y, weights):
    """Weighted RMSE loss and its gradients wrt every weight matrix and bias."""
    acts = forward(coefs, intercepts, X)
    err = acts[-1] - Y
    per_output = np.sqrt(np.mean(err ** 2, axis=0))
    w = np.asarray(weights, float)
    loss = float(per_output @ w)
    scale = np.divide(w, len(X) * per_output, out=np.zeros_like(w), where=per_output > 0)
    delta = err * scale
    g_coefs, g_ints = [None] * len(coefs), [None] * len(coefs)
    for k in range(len(coefs) - 1, -1, -1):
        g_coefs[k] = acts[k].T @ delta
        g_ints[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ coefs[k].T) * (acts[k] > 0)
    return loss, g_coefs, g_ints


class WeightedFNNRegressor(RegressorMixin, BaseEstimator):
    """Fully connected ReLU network with three linear outputs.

    Trained with Adam on mini-batches, early-stopped on a held-out validation
    split, restoring the best validation parameters.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(64,)*10
    loss_weights : tuple of 3 floats, default=(1, 4, 2)
    learning_rate : float, default=1e-3
    batch_size : int, default=64
    max_epochs : int, default=500
    patience : int, default=25
    validation_fraction : float, default=0.1
        Share of rows (or of groups, when ``fit`` gets ``groups``) held out for early stopping.
    random_state : int, default=0
    """

    _state_attrs = ("coefs_", "intercepts_", "n_epochs_", "best_epoch_", "best_val_loss_")

    def __init__(self, hidden_layer_sizes=(64,) * 10, loss_weights=DEFAULT_LOSS_WEIGHTS,
                 learning_rate=1e-3, batch_size=64, max_epochs=500, patience=25,
                 validation_fraction=0.1, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.loss_weights = loss_weights
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _init_params(self, n_in, n_out, rng):
        sizes = [n_in, *self.hidden_layer_sizes, n_out]
        coefs = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        coefs[-1] *= 0.1
        return coefs, [np.zeros(b) for b in sizes[1:]]

    def _check_params(self):
        w = np.asarray(self.loss_weights, float)
        if w.shape != (3,) or (w <= 0).any():
            raise ParameterError("loss_weights must be three positive numbers")
        if len(self.hidden_layer_sizes) < 1 or min(self.hidden_layer_sizes) < 1:
            raise ParameterError("hidden_layer_sizes must be positive")
        check_positive("learning_rate", self.learning_rate)
        if not 0 < self.validation_fraction < 1:
            raise ParameterError("validation_fraction must be in (0, 1)")
        return w

    def _split(self, n, groups, rng):
        """Validation and training row indices; whole groups are held out when given."""
        if groups is None:
            perm = rng.permutation(n)
            n_val = max(1, int(round(self.validation_fraction * n)))
            return perm[:n_val], perm[n_val:]
        groups = np.asarray(groups)
        if len(groups) != n:
            raise ParameterError(f"groups has {len(groups)} entries for {n} rows")
        names = np.unique(groups)
        if len(names) < 2:
            raise ParameterError("a grouped validation split needs at least two groups")
        n_val = min(len(names) - 1, max(1, int(round(self.validation_fraction * len(names)))))
        held = np.isin(groups, rng.permutation(names)[:n_val])
        return np.flatnonzero(held), np.flatnonzero(~held)

    def fit(self, X, Y, groups=None):
        """Train on ``X`` and the ``(n, 3)`` targets ``Y``.

        With ``groups`` (e.g. cell ids) the early-stopping split holds out whole
        groups, so the stopping epoch reflects accuracy on unseen groups.
        """
        X = validate_X(self, X, reset=True)
        Y = validate_y(Y, len(X), n_outputs=3)
        w = self._check_params()
        rng = np.random.default_rng(self.random_state)
        val, tr = self._split(len(X), groups, rng)
        if len(tr) < 1:
            raise ParameterError("not enough rows for a training split")

        coefs, ints = self._init_params(X.shape[1], 3, rng)
        params = coefs + ints
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, float(self.learning_rate)
        step = 0
        best = (np.inf, None, 0)
        self.loss_curve_, self.validation_curve_ = [], []
        n_layers = len(coefs)
        for epoch in range(1, self.max_epochs + 1):
            order = tr[rng.permutation(len(tr))]
            epoch_loss = 0.0
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                loss, gc, gi = loss_and_gradients(coefs, ints, X[idx], Y[idx], w)
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"FNN loss became non-finite (learning_rate={lr}, "
                        f"batch_size={self.batch_size}, epoch={epoch})")
                epoch_loss += loss * len(idx)
                step += 1
                for k, g in enumerate(gc + gi):
                    m[k] = b1 * m[k] + (1 - b1) * g
                    v[k] = b2 * v[k] + (1 - b2) * g * g
                    mhat = m[k] / (1 - b1 ** step)
                    vhat = v[k] / (1 - b2 ** step)
                    params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
            coefs, ints = params[:n_layers], params[n_layers:]
            val_loss = weighted_rmse_loss(Y[val], forward(coefs, ints, X[val])[-1], w)
            if not np.isfinite(val_loss):
                raise DivergenceError(
                    f"FNN validation loss became non-finite (learning_rate={lr}, "
                    f"batch_size={self.batch_size}, epoch={epoch})")
            self.loss_curve_.append(epoch_loss / len(tr))
            self.validation_curve_.append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, [p.copy() for p in params], epoch)
            elif epoch - best[2] >= self.patience:
                break
        self.n_epochs_ = epoch
        self.best_val_loss_, best_params, self.best_epoch_ = best
        self.coefs_ = best_params[:n_layers]
        self.intercepts_ = best_params[n_layers:]
        return self

    def predict(self, X):
        """Raw (unclipped) network outputs, shape (n, 3)."""
        check_is_fitted(self, "coefs_")
        X = validate_X(self, X, reset=False)
        return forward(self.coefs_, self.intercepts_, X)[-1]

    def predict_clipped(self, X):
        """Outputs clamped to [0, 1] for reporting."""
        return np.clip(self.predict(X), 0.0, 1.0)


def fit_fnn(X, Y, **kwargs):
    return WeightedFNNRegressor(**kwargs).fit(X, Y)
