"""Epsilon-insensitive support vector regression solved by SMO.

The dual is written over ``2n`` variables ``a = [alpha; alpha*]``::

    min  0.5 a'Qa + p'a   s.t.  s'a = 0,  0 <= a <= C
    Q_ij = s_i s_j K(x_i, x_j),  s = [+1...; -1...],  p = [eps - y; eps + y]

and solved with maximal-violating-pair / second-order working-set selection.
"""

import warnings

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .._validation import check_positive, validate_X, validate_y
from ..exceptions import ParameterError

TAU = 1e-12


def rbf_kernel(A, B, gamma):
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


@njit(cache=True)
def _smo(K, y, C, eps, tol, max_iter):
    n = K.shape[0]
    m = 2 * n
    s = np.empty(m)
    p = np.empty(m)
    for t in range(n):
        s[t] = 1.0
        s[t + n] = -1.0
        p[t] = eps - y[t]
        p[t + n] = eps + y[t]
    a = np.zeros(m)
    G = p.copy()
    it = 0
    gap = np.inf
    while it < max_iter:
        # i: maximal violator in I_up
        g_max = -np.inf
        i = -1
        for t in range(m):
            up = a[t] < C if s[t] > 0 else a[t] > 0
            if up and -s[t] * G[t] >= g_max:
                g_max = -s[t] * G[t]
                i = t
        g_min = np.inf
        j = -1
        best = np.inf
        ii = i % n
        for t in range(m):
            low = a[t] > 0 if s[t] > 0 else a[t] < C
            if not low:
                continue
            v = -s[t] * G[t]
            if v < g_min:
                g_min = v
            diff = g_max - v
            if diff > 0:
                tt = t % n
                quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                if quad <= 0:
                    quad = TAU
                obj = -(diff * diff) / quad
                if obj <= best:
                    best = obj
                    j = t
        gap = g_max - g_min
        if i < 0 or j < 0 or gap < tol:
            break
        it += 1
        jj = j % n
        q_ij = s[i] * s[j] * K[ii, jj]
        ai_old, aj_old = a[i], a[j]
        if s[i] != s[j]:
            quad = K[ii, ii] + K[jj, jj] + 2.0 * q_ij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = K[ii, ii] + K[jj, jj] - 2.0 * q_ij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = total
        dai = a[i] - ai_old
        daj = a[j] - aj_old
        for t in range(m):
            tt = t % n
            G[t] += s[t] * (s[i] * K[ii, tt] * dai + s[j] * K[jj, tt] * daj)

    # bias
    ub = np.inf
    lb = -np.inf
    n_free = 0
    sum_free = 0.0
    for t in range(m):
        yg = s[t] * G[t]
        at_upper = a[t] >= C
        at_lower = a[t] <= 0
        if at_upper:
            if s[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif at_lower:
            if s[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            sum_free += yg
    rho = sum_free / n_free if n_free > 0 else (ub + lb) / 2
    return a, G, -rho, it, gap


def svr_dual_objective(a, K, y, epsilon):
    """``0.5 a'Qa + p'a`` for the stacked ``a = [alpha; alpha*]``."""
    n = len(y)
    beta = a[:n] - a[n:]
    return 0.5 * beta @ K @ beta + epsilon * a.sum() - y @ beta


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """RBF-kernel epsilon-SVR.

    Parameters
    ----------
    C : float, default=1.0
    epsilon : float, default=0.001
        Half-width of the insensitive tube, in target units.
    gamma : float, default=0.1
        RBF coefficient in ``exp(-gamma * ||x - x'||^2)``.
    tol : float, default=1e-3
        Stop when the maximal KKT violation drops below ``tol``.
    max_iter : int, default=10_000_000
    """

    _state_attrs = ("support_vectors_", "dual_coef_", "intercept_", "support_")

    def __init__(self, C=1.0, epsilon=1e-3, gamma=0.1, tol=1e-3, max_iter=10_000_000):
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = validate_X(self, X, reset=True)
        y = validate_y(y, len(X), n_outputs=1)
        if len(X) < 10:
            raise ParameterError("SVR needs at least 10 rows")
        check_positive("C", self.C)
        check_positive("gamma", self.gamma)
        check_positive("epsilon", self.epsilon, strict=False)
        K = rbf_kernel(X, X, self.gamma)
        a, G, b, it, gap = _smo(K, y, float(self.C), float(self.epsilon), float(self.tol),
                                int(self.max_iter))
        n = len(y)
        beta = a[:n] - a[n:]
        self.n_iter_ = int(it)
        self.kkt_gap_ = float(gap)
        self.converged_ = bool(gap < self.tol)
        if not self.converged_:
            warnings.warn(f"SMO stopped at the iteration cap with KKT gap {gap:.3g}",
                          ConvergenceWarning)
        self.dual_variables_ = a
        self.dual_objective_ = float(svr_dual_objective(a, K, y, self.epsilon))
        self.support_ = np.flatnonzero(beta != 0)
        self.support_vectors_ = X[self.support_]
        self.dual_coef_ = beta[self.support_]
        self.intercept_ = float(b)
        return self

    def predict(self, X):
        check_is_fitted(self, "dual_coef_")
        X = validate_X(self, X, reset=False)
        if len(self.dual_coef_) == 0:
            return np.full(len(X), self.intercept_)
        return rbf_kernel(X, self.support_vectors_, self.gamma) @ self.dual_coef_ + self.intercept_


def fit_svr(X, y, C, epsilon, gamma, **kwargs):
    return EpsilonSVR(C=C, epsilon=epsilon, gamma=gamma, **kwargs).fit(X, y)
