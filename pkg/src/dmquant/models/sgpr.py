"""Sparse GP regression with inducing points (projected-process / DTC predictive)."""

import logging

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_is_fitted

from .._validation import check_positive, validate_X, validate_y
from ..exceptions import NumericalError, ParameterError

logger = logging.getLogger(__name__)

JITTER_START, JITTER_MAX = 1e-8, 1e-4


def rbf(A, B, lengthscale, variance):
    return variance * np.exp(-0.5 * cdist(A / lengthscale, B / lengthscale, "sqeuclidean"))


def stable_cholesky(K):
    """Lower Cholesky factor, escalating diagonal jitter when K is ill-conditioned.

    Returns ``(L, jitter)``; ``jitter`` is 0 when none was needed.
    """
    jitter = 0.0
    scale = float(np.mean(np.diag(K))) or 1.0
    while True:
        try:
            L = cholesky(K + jitter * scale * np.eye(len(K)), lower=True)
            d = np.diag(L)
            if (d.min() / d.max()) ** 2 > 1e-15:
                return L, jitter
        except LinAlgError:
            pass
        jitter = JITTER_START if jitter == 0 else jitter * 10
        if jitter > JITTER_MAX * (1 + 1e-9):
            raise NumericalError("kernel matrix not positive definite after jitter escalation")


class SparseGPRegressor(RegressorMixin, BaseEstimator):
    """RBF-kernel sparse GP with ``n_inducing`` inducing inputs chosen by k-means.

    With ``n_inducing`` equal to the number of training rows the training inputs
    themselves are used and the predictive mean is exact GP regression.

    Parameters
    ----------
    n_inducing : int, default=50
    lengthscale : float, default=1.0
    noise_var : float, default=1e-4
    signal_var : float, default=1.0
    random_state : int, default=0
    """

    _state_attrs = ("inducing_", "L_", "LB_", "c_", "y_mean_", "jitter_")

    def __init__(self, n_inducing=50, lengthscale=1.0, noise_var=1e-4, signal_var=1.0,
                 random_state=0):
        self.n_inducing = n_inducing
        self.lengthscale = lengthscale
        self.noise_var = noise_var
        self.signal_var = signal_var
        self.random_state = random_state

    def _inducing_points(self, X):
        m = int(self.n_inducing)
        if m > len(X) or m < 1:
            raise ParameterError(f"n_inducing must be in [1, {len(X)}], got {m}")
        if m == len(X):
            return X.copy()
        km = KMeans(n_clusters=m, n_init=4, random_state=self.random_state).fit(X)
        return km.cluster_centers_

    def fit(self, X, y):
        X = validate_X(self, X, reset=True)
        y = validate_y(y, len(X), n_outputs=1)
        check_positive("noise_var", self.noise_var)
        check_positive("lengthscale", self.lengthscale)
        Z = self._inducing_points(X)
        sigma = np.sqrt(self.noise_var)
        self.y_mean_ = float(y.mean())
        Kmm = rbf(Z, Z, self.lengthscale, self.signal_var)
        L, self.jitter_ = stable_cholesky(Kmm)
        if self.jitter_:
            logger.warning("SGPR: added jitter %.0e to the inducing kernel matrix", self.jitter_)
        A = solve_triangular(L, rbf(Z, X, self.lengthscale, self.signal_var), lower=True) / sigma
        B = np.eye(len(Z)) + A @ A.T
        LB = cholesky(B, lower=True)
        self.c_ = solve_triangular(LB, A @ (y - self.y_mean_), lower=True) / sigma
        self.inducing_, self.L_, self.LB_ = Z, L, LB
        return self

    def _project(self, X):
        Kmx = rbf(self.inducing_, X, self.lengthscale, self.signal_var)
        t1 = solve_triangular(self.L_, Kmx, lower=True)
        t2 = solve_triangular(self.LB_, t1, lower=True)
        return t1, t2

    def predict(self, X, return_std=False):
        check_is_fitted(self, "c_")
        X = validate_X(self, X, reset=False)
        t1, t2 = self._project(X)
        mean = t2.T @ self.c_ + self.y_mean_
        if not return_std:
            return mean
        var = self.signal_var - (t1 ** 2).sum(axis=0) + (t2 ** 2).sum(axis=0)
        return mean, np.sqrt(np.maximum(var, 0.0))


def fit_sgpr(X, y, m, lengthscale, noise_var, **kwargs):
    return SparseGPRegressor(n_inducing=m, lengthscale=lengthscale, noise_var=noise_var,
                             **kwargs).fit(X, y)
