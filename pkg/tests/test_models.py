import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from sklearn.exceptions import ConvergenceWarning

from dmquant.exceptions import ContractError, DivergenceError, NumericalError, ParameterError
from dmquant.models import (ElasticNetRegression, EpsilonSVR, MultipleLinearRegression,
                            SparseGPRegressor, WeightedFNNRegressor, load_model,
                            loss_and_gradients, save_model, weighted_rmse_loss)
from dmquant.models.fnn import forward
from dmquant.models.sgpr import rbf, stable_cholesky
from dmquant.models.svr import rbf_kernel, svr_dual_objective


def _linear_data(n=50, d=5, noise=0.1, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    beta = rng.normal(size=d)
    y = X @ beta + 0.7 + noise * rng.normal(size=n)
    return X, y, beta


# --- independent oracles -----------------------------------------------------

def normal_equations(X, y):
    A = np.column_stack([np.ones(len(X)), X])
    sol = np.linalg.solve(A.T @ A, A.T @ y)
    return sol[1:], sol[0]


def enr_grid_oracle(X, y, l1, l2, levels=8):
    """Minimum of the elastic-net objective by a zooming dense grid over three slopes."""
    n = len(y)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym

    def obj(B):
        r = yc[:, None] - Xc @ B.T
        return (r * r).sum(0) / (2 * n) + l1 * np.abs(B).sum(1) + 0.5 * l2 * (B * B).sum(1)

    center, half = np.zeros(3), 4.0
    for _ in range(levels):
        axes = [np.linspace(c - half, c + half, 41) for c in center]
        B = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
        vals = obj(B)
        center = B[np.argmin(vals)]
        half /= 8.0
    return float(vals.min())


def svr_qp_oracle(K, y, C, eps):
    """Stacked dual solved by a general-purpose SQP solver."""
    n = len(y)
    s = np.r_[np.ones(n), -np.ones(n)]
    Q = np.outer(s, s) * np.tile(K, (2, 2))
    p = np.r_[eps - y, eps + y]
    res = minimize(lambda a: 0.5 * a @ Q @ a + p @ a, np.zeros(2 * n), jac=lambda a: Q @ a + p,
                   method="SLSQP", bounds=[(0, C)] * (2 * n),
                   constraints=[{"type": "eq", "fun": lambda a: s @ a, "jac": lambda a: s}],
                   options={"ftol": 1e-14, "maxiter": 2000})
    return res.fun


def exact_gp_mean(X, y, Xq, lengthscale, noise_var, signal_var=1.0):
    K = rbf(X, X, lengthscale, signal_var) + noise_var * np.eye(len(X))
    return rbf(Xq, X, lengthscale, signal_var) @ np.linalg.solve(K, y - y.mean()) + y.mean()


# --- MLR ---------------------------------------------------------------------

def test_mlr_matches_normal_equations():
    X, y, _ = _linear_data()
    m = MultipleLinearRegression().fit(X, y)
    coef, b0 = normal_equations(X, y)
    np.testing.assert_allclose(m.coef_, coef, atol=1e-6)
    assert m.intercept_ == pytest.approx(b0, abs=1e-6)


def test_mlr_residuals_orthogonal():
    X, y, _ = _linear_data(seed=4)
    r = y - MultipleLinearRegression().fit(X, y).predict(X)
    assert np.abs(np.column_stack([np.ones(len(X)), X]).T @ r).max() < 1e-8


def test_mlr_exact_linear_recovery():
    X, y, beta = _linear_data(noise=0.0, seed=2)
    m = MultipleLinearRegression().fit(X, y)
    np.testing.assert_allclose(m.coef_, beta, atol=1e-8)
    pred = m.predict(X)
    assert np.sqrt(np.mean((pred - y) ** 2)) < 1e-10
    assert abs(pred[7] - y[7]) < 1e-8


def test_mlr_constant_target():
    X, _, _ = _linear_data()
    m = MultipleLinearRegression().fit(X, np.full(len(X), 0.25))
    assert m.intercept_ == pytest.approx(0.25, abs=1e-12)
    np.testing.assert_allclose(m.coef_, 0.0, atol=1e-12)


def test_mlr_rank_deficient_minimum_norm():
    X, y, _ = _linear_data(d=3)
    X = np.column_stack([X, X[:, 0]])
    m = MultipleLinearRegression().fit(X, y)
    assert m.rank_deficient_ and m.rank_ == 3
    # the duplicated column shares its weight equally under the minimum norm
    assert m.coef_[0] == pytest.approx(m.coef_[3], rel=1e-8)
    pinv = np.linalg.pinv(X - X.mean(axis=0)) @ (y - y.mean())
    np.testing.assert_allclose(m.coef_, pinv, atol=1e-8)


def test_mlr_needs_more_rows_than_columns():
    with pytest.raises(ParameterError):
        MultipleLinearRegression().fit(np.ones((3, 3)), np.ones(3))


# --- ENR ---------------------------------------------------------------------

def test_enr_without_penalty_is_mlr():
    X, y, _ = _linear_data()
    e = ElasticNetRegression(0.0, 0.0).fit(X, y)
    m = MultipleLinearRegression().fit(X, y)
    np.testing.assert_allclose(e.coef_, m.coef_, atol=1e-5)
    assert e.converged_


def test_enr_kill_condition():
    X, y, _ = _linear_data()
    Xc, yc = X - X.mean(0), y - y.mean()
    l1 = np.abs(Xc.T @ yc).max() / len(y)
    e = ElasticNetRegression(l1, 0.01).fit(X, y)
    assert np.all(e.coef_ == 0.0)
    assert e.intercept_ == pytest.approx(y.mean())


@pytest.mark.parametrize("l1,l2", [(0.01, 0.0), (0.005, 0.02), (0.05, 0.1)])
def test_enr_matches_grid_oracle(l1, l2):
    X, y, _ = _linear_data(n=20, d=3, seed=7)
    e = ElasticNetRegression(l1, l2).fit(X, y)
    got = ElasticNetRegression.objective(X - X.mean(0), y - y.mean(), e.coef_, 0.0, l1, l2)
    assert abs(got - enr_grid_oracle(X, y, l1, l2)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.1), st.floats(0.0, 0.1))
def test_enr_objective_non_increasing(seed, l1, l2):
    X, y, _ = _linear_data(n=30, d=4, seed=seed)
    path = np.array(ElasticNetRegression(l1, l2).fit(X, y).objective_path_)
    assert np.all(np.diff(path) <= 1e-12 * max(1.0, path[0]))


def test_enr_non_convergence_warns_and_keeps_best():
    X, y, _ = _linear_data(seed=3)
    X = np.column_stack([X, X[:, 0] + 1e-6 * np.arange(len(X))])
    with pytest.warns(ConvergenceWarning):
        e = ElasticNetRegression(1e-6, 0.0, max_sweeps=3).fit(X, y)
    assert not e.converged_ and e.n_sweeps_ == 3
    best = min(e.objective_path_)
    got = ElasticNetRegression.objective(X - X.mean(0), y - y.mean(), e.coef_, 0.0, 1e-6, 0.0)
    assert got == pytest.approx(best, rel=1e-12)


def test_enr_negative_weight():
    with pytest.raises(ParameterError):
        ElasticNetRegression(-1.0, 0.0).fit(*_linear_data()[:2])


# --- SVR ---------------------------------------------------------------------

def test_svr_realizable_tube():
    x = np.linspace(0, 1, 40)[:, None]
    y = 2 * x[:, 0]
    m = EpsilonSVR(C=1000.0, epsilon=0.01, gamma=2.0).fit(x, y)
    assert m.converged_ and m.kkt_gap_ < 1e-3
    assert np.abs(m.predict(x) - y).max() <= 0.01 + 1e-3


def test_svr_constant_target():
    X = np.random.default_rng(0).uniform(size=(15, 2))
    m = EpsilonSVR(C=10.0, epsilon=0.01, gamma=1.0).fit(X, np.full(15, 0.3))
    assert m.intercept_ == pytest.approx(0.3, abs=1e-12)
    assert len(m.dual_coef_) == 0 and np.all(m.dual_variables_ == 0)
    np.testing.assert_allclose(m.predict(X), 0.3)


@pytest.mark.parametrize("C,eps,gamma", [(1.0, 0.05, 5.0), (10.0, 0.02, 20.0), (0.2, 0.0, 2.0)])
def test_svr_dual_matches_qp_oracle(C, eps, gamma):
    rng = np.random.default_rng(1)
    x = np.sort(rng.uniform(0, 1, 30))[:, None]
    y = np.sin(6 * x[:, 0]) + 0.1 * rng.normal(size=30)
    m = EpsilonSVR(C=C, epsilon=eps, gamma=gamma).fit(x, y)
    K = rbf_kernel(x, x, gamma)
    oracle = svr_qp_oracle(K, y, C, eps)
    assert abs(m.dual_objective_ - oracle) < 1e-3
    assert m.dual_objective_ == pytest.approx(svr_dual_objective(m.dual_variables_, K, y, eps))
    a = m.dual_variables_
    assert np.all((a >= 0) & (a <= C)) and abs(a[:30].sum() - a[30:].sum()) < 1e-9
    assert m.kkt_gap_ < 1e-3


def test_svr_iteration_cap_warns():
    x = np.linspace(0, 1, 30)[:, None]
    with pytest.warns(ConvergenceWarning):
        m = EpsilonSVR(C=10.0, epsilon=0.01, gamma=5.0, max_iter=2).fit(x, np.sin(5 * x[:, 0]))
    assert not m.converged_ and np.all(np.isfinite(m.predict(x)))


def test_svr_needs_ten_rows():
    with pytest.raises(ParameterError):
        EpsilonSVR().fit(np.ones((9, 2)), np.ones(9))


# --- SGPR --------------------------------------------------------------------

def _gp_data(n, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, n))[:, None]
    return x, np.sin(6 * x[:, 0]) + 0.05 * rng.normal(size=n)


def test_sgpr_full_inducing_set_is_exact_gp():
    x, y = _gp_data(30)
    xq = np.linspace(-0.1, 1.1, 57)[:, None]
    m = SparseGPRegressor(n_inducing=30, lengthscale=0.3, noise_var=1e-2).fit(x, y)
    np.testing.assert_allclose(m.predict(xq), exact_gp_mean(x, y, xq, 0.3, 1e-2), atol=1e-6)


def test_sgpr_interpolates_as_noise_vanishes():
    x = np.linspace(0, 1, 12)[:, None]
    y = np.sin(6 * x[:, 0])
    m = SparseGPRegressor(n_inducing=12, lengthscale=0.15, noise_var=1e-10).fit(x, y)
    assert m.jitter_ == 0.0
    np.testing.assert_allclose(m.predict(x), y, atol=1e-4)
    _, sd = m.predict(x, return_std=True)
    assert np.all(sd < 1e-3)


def test_sgpr_sparse_rmse_close_to_exact():
    x, y = _gp_data(200, seed=2)
    truth = np.sin(6 * x[:, 0])
    exact = np.sqrt(np.mean((exact_gp_mean(x, y, x, 0.3, 0.05 ** 2) - truth) ** 2))
    m = SparseGPRegressor(n_inducing=10, lengthscale=0.3, noise_var=0.05 ** 2).fit(x, y)
    sparse = np.sqrt(np.mean((m.predict(x) - truth) ** 2))
    assert sparse <= 2 * exact


def test_sgpr_duplicate_inputs_get_jitter():
    x, y = _gp_data(20)
    x = np.vstack([x, x[:5]])
    y = np.r_[y, y[:5]]
    m = SparseGPRegressor(n_inducing=25, lengthscale=0.3, noise_var=1e-2).fit(x, y)
    assert 1e-8 <= m.jitter_ <= 1e-4


def test_jitter_escalation_fails_on_indefinite_matrix():
    with pytest.raises(NumericalError):
        stable_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    L, jitter = stable_cholesky(np.eye(3))
    assert jitter == 0.0


@pytest.mark.parametrize("kw", [{"n_inducing": 31}, {"noise_var": 0.0}, {"lengthscale": -1.0}])
def test_sgpr_invalid(kw):
    x, y = _gp_data(30)
    with pytest.raises(ParameterError):
        SparseGPRegressor(**{"n_inducing": 5, **kw}).fit(x, y)


def test_sgpr_seeded_inducing_points():
    x, y = _gp_data(80)
    a = SparseGPRegressor(n_inducing=8, random_state=3).fit(x, y)
    b = SparseGPRegressor(n_inducing=8, random_state=3).fit(x, y)
    assert np.array_equal(a.inducing_, b.inducing_)


# --- FNN ---------------------------------------------------------------------

def test_weighted_loss_arithmetic():
    Y = np.zeros((4, 3))
    assert weighted_rmse_loss(Y, Y + 1.0, (1, 4, 2)) == 7.0
    assert weighted_rmse_loss(Y, Y, (1, 4, 2)) == 0.0


def _finite_difference_check(coefs, ints, X, Y, w, h=1e-6):
    _, gc, gi = loss_and_gradients(coefs, ints, X, Y, w)
    worst = 0.0
    for params, grads in ((coefs, gc), (ints, gi)):
        for P, G in zip(params, grads):
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + h
                up = loss_and_gradients(coefs, ints, X, Y, w)[0]
                P[idx] = old - h
                down = loss_and_gradients(coefs, ints, X, Y, w)[0]
                P[idx] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - G[idx]) / max(abs(fd), abs(G[idx]), 1e-3))
    return worst


def _small_net(seed=0):
    net = WeightedFNNRegressor(hidden_layer_sizes=(6,) * 10)
    rng = np.random.default_rng(seed)
    coefs, ints = net._init_params(4, 3, rng)
    # offsets keep pre-activations away from the ReLU kink
    ints = [rng.uniform(0.05, 0.2, size=b.shape) for b in ints]
    return coefs, ints, rng


def test_gradient_check_at_initialisation():
    coefs, ints, rng = _small_net()
    X, Y = rng.uniform(size=(3, 4)), rng.uniform(size=(3, 3))
    assert _finite_difference_check(coefs, ints, X, Y, np.array([1.0, 4.0, 2.0])) < 1e-4


def test_gradient_check_after_ten_steps():
    coefs, ints, rng = _small_net(1)
    X, Y = rng.uniform(size=(3, 4)), rng.uniform(size=(3, 3))
    w = np.array([1.0, 4.0, 2.0])
    first = loss_and_gradients(coefs, ints, X, Y, w)[0]
    for _ in range(10):
        _, gc, gi = loss_and_gradients(coefs, ints, X, Y, w)
        coefs = [c - 1e-3 * g for c, g in zip(coefs, gc)]
        ints = [b - 1e-3 * g for b, g in zip(ints, gi)]
    assert loss_and_gradients(coefs, ints, X, Y, w)[0] < first
    assert _finite_difference_check(coefs, ints, X, Y, w) < 1e-4


def _fnn_data(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 5))
    Y = np.column_stack([X[:, 0], 0.5 * X[:, 1] + 0.2, X[:, 2] * X[:, 3]]) * 0.3
    return X, Y


def test_fnn_architecture_and_training():
    X, Y = _fnn_data()
    m = WeightedFNNRegressor(hidden_layer_sizes=(16,) * 10, max_epochs=40, batch_size=16).fit(X, Y)
    assert len(m.coefs_) == 11 and m.coefs_[-1].shape[1] == 3
    assert all(np.all(np.isfinite(c)) for c in m.coefs_ + m.intercepts_)
    assert m.best_val_loss_ == min(m.validation_curve_)
    assert m.predict(X).shape == (len(X), 3)
    clipped = m.predict_clipped(X)
    assert clipped.min() >= 0 and clipped.max() <= 1
    assert len(WeightedFNNRegressor().hidden_layer_sizes) == 10


def test_fnn_bitwise_reproducible():
    X, Y = _fnn_data()
    kw = dict(hidden_layer_sizes=(8,) * 10, max_epochs=15, random_state=4)
    a, b = WeightedFNNRegressor(**kw).fit(X, Y), WeightedFNNRegressor(**kw).fit(X, Y)
    for p, q in zip(a.coefs_ + a.intercepts_, b.coefs_ + b.intercepts_):
        assert p.tobytes() == q.tobytes()


def test_fnn_grouped_split_holds_out_whole_groups():
    groups = np.repeat(np.arange(12), 10)
    m = WeightedFNNRegressor(validation_fraction=0.25)
    val, tr = m._split(len(groups), groups, np.random.default_rng(0))
    assert set(groups[val]).isdisjoint(groups[tr]) and len(set(groups[val])) == 3
    assert sorted(np.concatenate([val, tr])) == list(range(len(groups)))
    X, Y = _fnn_data()
    fitted = WeightedFNNRegressor(hidden_layer_sizes=(8,) * 10, max_epochs=5).fit(X, Y, groups=groups)
    assert np.all(np.isfinite(fitted.predict(X)))


@pytest.mark.parametrize("groups", [np.zeros(120), np.arange(50)])
def test_fnn_grouped_split_invalid(groups):
    with pytest.raises(ParameterError):
        WeightedFNNRegressor(max_epochs=2).fit(*_fnn_data(), groups=groups)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fnn_divergence_reports_diagnostics():
    X, Y = _fnn_data()
    with pytest.raises(DivergenceError, match="learning_rate=1e\\+200.*batch_size=32.*epoch="):
        WeightedFNNRegressor(hidden_layer_sizes=(8,) * 10, learning_rate=1e200, batch_size=32,
                             max_epochs=5).fit(X, Y * 1e3)


@pytest.mark.parametrize("kw", [{"loss_weights": (1, 0, 2)}, {"loss_weights": (1, 2)},
                                {"hidden_layer_sizes": ()}, {"validation_fraction": 1.0}])
def test_fnn_invalid(kw):
    with pytest.raises(ParameterError):
        WeightedFNNRegressor(**kw).fit(*_fnn_data())


def test_forward_is_linear_at_output():
    coefs = [np.eye(2), -np.eye(2)]
    ints = [np.zeros(2), np.zeros(2)]
    out = forward(coefs, ints, np.array([[1.0, -1.0]]))[-1]
    np.testing.assert_array_equal(out, [[-1.0, 0.0]])


# --- schema binding and persistence ------------------------------------------

def _all_models():
    return [MultipleLinearRegression(), ElasticNetRegression(1e-3, 1e-3),
            EpsilonSVR(C=1.0, epsilon=0.01, gamma=1.0),
            SparseGPRegressor(n_inducing=10, lengthscale=0.5, noise_var=1e-3)]


@pytest.mark.parametrize("model", _all_models(), ids=lambda m: type(m).__name__)
def test_schema_binding(model):
    X, y, _ = _linear_data(n=60, d=4)
    df = pd.DataFrame(X, columns=["a", "b", "c", "d"])
    model.fit(df, y)
    base = model.predict(df)
    assert np.array_equal(model.predict(df[["d", "b", "a", "c"]]), base)
    assert np.array_equal(model.predict(df), base)
    with pytest.raises(ContractError, match="c"):
        model.predict(df.drop(columns="c"))
    with pytest.raises(ContractError, match="e"):
        model.predict(df.assign(e=1.0))


@pytest.mark.parametrize("model", _all_models(), ids=lambda m: type(m).__name__)
def test_persistence_round_trip_bitwise(model, tmp_path):
    X, y, _ = _linear_data(n=60, d=4, seed=9)
    df = pd.DataFrame(X, columns=["a", "b", "c", "d"])
    model.fit(df, y)
    save_model(model, tmp_path / "m.json", seed=7)
    back = load_model(tmp_path / "m.json")
    assert back.predict(df).tobytes() == model.predict(df).tobytes()
    save_model(back, tmp_path / "again.json", seed=7)
    assert (tmp_path / "again.json").read_bytes() == (tmp_path / "m.json").read_bytes()


def test_fnn_persistence_round_trip(tmp_path):
    X, Y = _fnn_data()
    m = WeightedFNNRegressor(hidden_layer_sizes=(8,) * 10, max_epochs=5).fit(X, Y)
    save_model(m, tmp_path / "fnn.json")
    assert load_model(tmp_path / "fnn.json").predict(X).tobytes() == m.predict(X).tobytes()
