"""Multiple linear regression and elastic net (coordinate descent)."""

import logging
import warnings

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .._validation import check_positive, validate_X, validate_y
from ..exceptions import ParameterError

logger = logging.getLogger(__name__)


class MultipleLinearRegression(RegressorMixin, BaseEstimator):
    """Ordinary least squares with an unpenalised intercept.

    Solved on centred data through an SVD-based least-squares routine; a
    rank-deficient design gets the minimum-norm solution and sets
    ``rank_deficient_``.
    """

    _state_attrs = ("coef_", "intercept_", "rank_", "rank_deficient_")

    def fit(self, X, y):
        X = validate_X(self, X, reset=True)
        y = validate_y(y, len(X), n_outputs=1)
        n, d = X.shape
        if n <= d:
            raise ParameterError(f"MLR needs more rows than columns, got {n}x{d}")
        x_mean, y_mean = X.mean(axis=0), y.mean()
        coef, _, rank, _ = np.linalg.lstsq(X - x_mean, y - y_mean, rcond=None)
        self.coef_ = coef
        self.intercept_ = float(y_mean - x_mean @ coef)
        self.rank_ = int(rank)
        self.rank_deficient_ = bool(rank < d)
        if self.rank_deficient_:
            logger.warning("rank-deficient design (rank %d < %d): minimum-norm solution", rank, d)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_X(self, X, reset=False)
        return X @ self.coef_ + self.intercept_


@njit(cache=True)
def _cd_sweeps(XcT, yc, col_sq, l1, l2, tol, max_sweeps):
    """Cyclic coordinate descent; returns last and best iterates and the objective path."""
    d, n = XcT.shape
    coef = np.zeros(d)
    resid = yc.copy()
    best = coef.copy()
    best_obj = np.inf
    path = np.empty(max_sweeps)
    converged = False
    sweep = 0
    while sweep < max_sweeps:
        sweep += 1
        max_change = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            old = coef[j]
            rho = XcT[j] @ resid / n + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / (col_sq[j] + l2)
            if new != old:
                resid -= XcT[j] * (new - old)
                coef[j] = new
                max_change = max(max_change, abs(new - old))
        obj = (resid @ resid) / (2 * n) + l1 * np.abs(coef).sum() + 0.5 * l2 * (coef @ coef)
        path[sweep - 1] = obj
        if obj < best_obj:
            best_obj = obj
            best = coef.copy()
        if max_change < tol:
            converged = True
            break
    return coef, best, path[:sweep], sweep, converged


class ElasticNetRegression(RegressorMixin, BaseEstimator):
    """Elastic net by cyclic coordinate descent.

    Minimises ``(1/2n)||y - Xb - b0||^2 + l1_weight*||b||_1 + (l2_weight/2)*||b||^2``
    with the intercept ``b0`` unpenalised.

    Parameters
    ----------
    l1_weight, l2_weight : float, default=1e-4
    tol : float, default=1e-7
        Stop when the largest coefficient change in a sweep is below ``tol``.
    max_sweeps : int, default=100000
    """

    _state_attrs = ("coef_", "intercept_", "n_sweeps_", "converged_")

    def __init__(self, l1_weight=1e-4, l2_weight=1e-4, tol=1e-7, max_sweeps=100_000):
        self.l1_weight = l1_weight
        self.l2_weight = l2_weight
        self.tol = tol
        self.max_sweeps = max_sweeps

    @staticmethod
    def objective(X, y, coef, intercept, l1_weight, l2_weight):
        r = y - X @ coef - intercept
        return (r @ r) / (2 * len(y)) + l1_weight * np.abs(coef).sum() + 0.5 * l2_weight * coef @ coef

    def fit(self, X, y):
        X = validate_X(self, X, reset=True)
        y = validate_y(y, len(X), n_outputs=1)
        check_positive("l1_weight", self.l1_weight, strict=False)
        check_positive("l2_weight", self.l2_weight, strict=False)
        n, d = X.shape
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
        col_sq = (Xc ** 2).sum(axis=0) / n
        l1, l2 = float(self.l1_weight), float(self.l2_weight)

        coef, best, path, sweep, converged = _cd_sweeps(
            np.ascontiguousarray(Xc.T), yc, col_sq, l1, l2, float(self.tol), int(self.max_sweeps))
        self.objective_path_ = path.tolist()
        self.converged_ = bool(converged)
        self.n_sweeps_ = int(sweep)
        if not self.converged_:
            coef = best
            warnings.warn(f"elastic net did not converge in {self.max_sweeps} sweeps; "
                          "returning the best iterate", ConvergenceWarning)
        self.coef_ = coef
        self.intercept_ = float(y_mean - x_mean @ coef)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_X(self, X, reset=False)
        return X @ self.coef_ + self.intercept_


def fit_mlr(X, y):
    return MultipleLinearRegression().fit(X, y)


def fit_enr(X, y, l1_weight, l2_weight, **kwargs):
    return ElasticNetRegression(l1_weight=l1_weight, l2_weight=l2_weight, **kwargs).fit(X, y)
