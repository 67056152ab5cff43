import math
from collections import Counter

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from dmquant.exceptions import ParameterError
from dmquant.features import FEATURE_IDS, LABEL_COLUMNS
from dmquant.filters import (CriticalFeatureSelector, CriticalFeatureSet, FilterScores,
                             amd_filter, amd_scores, assemble_critical_set, keep_count,
                             mutual_information, permutation_importance, AMDSelector)
from dmquant.gbt import GradientBoostedTrees, train_gbt


# -- AMD --

def test_default_ratio_keeps_63():
    X = pd.DataFrame(np.random.default_rng(0).random((50, 91)), columns=FEATURE_IDS)
    assert len(amd_filter(X)) == 63
    assert keep_count(91, 1.0) == 91


def test_constant_feature_never_kept():
    rng = np.random.default_rng(1)
    X = rng.random((40, 5))
    X[:, 2] = 0.0
    for ratio in (0.2, 0.5, 0.7, 0.9):
        assert 2 not in amd_filter(X, keep_ratio=ratio)
    assert amd_scores(X)[2] == 0.0
    # a ratio of one disables the screen entirely
    assert sorted(amd_filter(X, keep_ratio=1.0)) == [0, 1, 2, 3, 4]


def test_two_point_amd():
    assert amd_scores(np.array([[0.0], [1.0]]))[0] == 0.5


def test_bad_keep_ratio():
    with pytest.raises(ParameterError):
        keep_count(91, 0.0)


def test_amd_selector_transform():
    X = pd.DataFrame(np.random.default_rng(2).random((30, 6)), columns=list("abcdef"))
    sel = AMDSelector(keep_ratio=0.5).fit(X)
    assert sel.get_support().sum() == 3
    assert list(sel.transform(X).columns) == list(sel.get_feature_names_out())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(0.01, 100.0), min_size=8, max_size=8),
       st.lists(st.floats(-50.0, 50.0), min_size=8, max_size=8), st.lists(st.booleans(), min_size=8, max_size=8))
def test_amd_invariant_to_affine_maps(seed, scales, shifts, flips):
    from dmquant.features import MinMaxNormalizer
    X = np.random.default_rng(seed).random((60, 8)) ** np.arange(1, 9)
    a = np.where(flips, -1.0, 1.0) * np.asarray(scales)
    Y = X * a + np.asarray(shifts)
    sx = amd_scores(MinMaxNormalizer().fit_transform(X))
    sy = amd_scores(MinMaxNormalizer().fit_transform(Y))
    np.testing.assert_allclose(sy, sx, rtol=1e-9, atol=1e-12)


# -- GBT --

def _r2(y, p):
    return 1 - np.sum((y - p) ** 2) / np.sum((y - y.mean()) ** 2)


def test_gbt_constant_labels():
    X = np.random.default_rng(0).random((120, 3))
    m = train_gbt(X, np.full(120, 0.3))
    assert m.degenerate_
    np.testing.assert_array_equal(m.predict(X), 0.3)


def test_gbt_copy_of_label():
    rng = np.random.default_rng(0)
    X = rng.random((400, 6))
    y = X[:, 3].copy()
    m = train_gbt(X, y, n_estimators=200, max_depth=4)
    assert _r2(y, m.predict(X)) >= 0.99
    assert m.train_rmse_ <= np.std(y)


def test_gbt_noise_heldout_r2():
    # 5-fold split oracle: labels independent of features
    rng = np.random.default_rng(4)
    X, y = rng.random((4000, 5)), rng.random(4000)
    folds = np.arange(4000) % 5
    pred = np.empty(4000)
    for k in range(5):
        m = train_gbt(X[folds != k], y[folds != k])
        pred[folds == k] = m.predict(X[folds == k])
    assert abs(_r2(y, pred)) < 0.1


def test_gbt_needs_100_rows():
    with pytest.raises(ParameterError):
        train_gbt(np.random.random((50, 2)), np.random.random(50))


def test_gbt_deterministic_with_subsampling():
    rng = np.random.default_rng(5)
    X, y = rng.random((300, 4)), rng.random(300)
    a = GradientBoostedTrees(n_estimators=20, subsample=0.7, random_state=3).fit(X, y)
    b = GradientBoostedTrees(n_estimators=20, subsample=0.7, random_state=3).fit(X, y)
    np.testing.assert_array_equal(a.threshold_, b.threshold_)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_gbt_matches_brute_force_stump():
    # one depth-1 tree with lr=1, lambda=0: the best split from exhaustive search
    rng = np.random.default_rng(6)
    X, y = rng.random((150, 3)), rng.random(150)
    m = GradientBoostedTrees(n_estimators=1, max_depth=1, learning_rate=1.0, reg_lambda=0.0,
                             min_child_weight=1.0).fit(X, y)
    best = (np.inf, None, None)
    for j in range(3):
        xs = np.unique(X[:, j])
        for lo, hi in zip(xs[:-1], xs[1:]):
            left = X[:, j] <= (lo + hi) / 2
            sse = (((y[left] - y[left].mean()) ** 2).sum()
                   + ((y[~left] - y[~left].mean()) ** 2).sum())
            if sse < best[0] - 1e-12:
                best = (sse, j, (lo + hi) / 2)
    assert m.feature_[0, 0] == best[1]
    assert m.threshold_[0, 0] == pytest.approx(best[2])
    assert np.sum((y - m.predict(X)) ** 2) == pytest.approx(best[0], rel=1e-9)


# -- permutation importance --

@pytest.fixture(scope="module")
def pi_fixture():
    rng = np.random.default_rng(7)
    X = rng.random((300, 5))
    y = 0.7 * X[:, 0] + 0.3 * X[:, 1] ** 2
    X[:, 4] = y  # exact copy of the label
    model = train_gbt(X, y, n_estimators=100)
    return model, X, y


def test_label_copy_ranks_first(pi_fixture):
    model, X, y = pi_fixture
    res = permutation_importance(model, X, y, repeats=20)
    assert int(np.argmax(res.scores)) == 4


def test_independent_feature_has_small_score():
    rng = np.random.default_rng(8)
    X = rng.random((500, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    model = train_gbt(X, y, n_estimators=100)
    res = permutation_importance(model, X, y, repeats=20)
    assert abs(res.scores[2]) < 0.05 * res.baseline_rmse + 1e-12 or abs(res.scores[2]) < 0.05 * np.std(y)


def test_repeats_mean_identity(pi_fixture):
    model, X, y = pi_fixture
    full = permutation_importance(model, X, y, repeats=100, random_state=9)
    singles = np.column_stack([permutation_importance(model, X, y, repeats=1, random_state=9,
                                                      repeat_offset=r).scores for r in range(100)])
    np.testing.assert_allclose(singles.mean(axis=1), full.scores, rtol=1e-12, atol=1e-15)


def test_permutation_never_refits(pi_fixture):
    model, X, y = pi_fixture
    before = model.value_.copy()
    permutation_importance(model, X, y, repeats=3)
    np.testing.assert_array_equal(model.value_, before)


def test_fast_path_equals_full_prediction(pi_fixture):
    # the incremental prediction used by PI equals a plain predict on the shuffled matrix
    model, X, y = pi_fixture
    rng = np.random.default_rng([0, 1, 0])
    Xs = X.copy()
    Xs[:, 1] = X[rng.permutation(len(X)), 1]
    direct = np.sqrt(np.mean((y - model.predict(Xs)) ** 2)) - np.sqrt(np.mean((y - model.predict(X)) ** 2))
    res = permutation_importance(model, X, y, repeats=1, random_state=0)
    assert res.raw[1, 0] == pytest.approx(direct, rel=1e-9, abs=1e-14)


# -- mutual information --

def _mi_oracle(x, y, bins):
    """Plug-in MI from explicit rank-based bins and a dictionary histogram."""
    n = len(x)

    def binning(v):
        order = sorted(range(n), key=lambda i: v[i])
        out = [0] * n
        for rank, i in enumerate(order):
            out[i] = min(rank * bins // n, bins - 1)
        return out

    bx, by = binning(x), binning(y)
    joint = Counter(zip(bx, by))
    cx, cy = Counter(bx), Counter(by)
    return sum(c / n * math.log((c / n) / ((cx[i] / n) * (cy[j] / n)))
               for (i, j), c in joint.items())


def test_mi_identity_near_log_bins():
    x = np.random.default_rng(10).random(1600)
    mi = mutual_information(x, x, 16)
    assert abs(mi - math.log(16)) / math.log(16) < 0.05
    assert mi == pytest.approx(_mi_oracle(x, x, 16), abs=1e-12)


def test_mi_independent_small():
    rng = np.random.default_rng(11)
    x, y = rng.random(10_000), rng.random(10_000)
    mi = mutual_information(x, y, 16)
    assert mi < 0.05
    assert mi == pytest.approx(_mi_oracle(x, y, 16), abs=1e-12)


def test_mi_captures_non_monotone_dependence():
    x = np.random.default_rng(12).random(4000)
    y = (x - 0.5) ** 2
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.05
    mi = mutual_information(x, y, 16)
    assert mi > 0.2
    assert mi == pytest.approx(_mi_oracle(x, y, 16), abs=1e-12)


def test_mi_length_mismatch():
    with pytest.raises(ParameterError):
        mutual_information(np.ones(100), np.ones(101))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 20), st.floats(0.0, 3.0))
def test_mi_symmetric_and_non_negative(seed, bins, coupling):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=300)
    y = coupling * x + rng.normal(size=300)
    a, b = mutual_information(x, y, bins), mutual_information(y, x, bins)
    assert a == b
    assert a >= 0


# -- union rule --

def _scores(pi, mi, names=("f0", "f1", "f2", "f3")):
    amd = pd.Series(0.3, index=list(names))
    return FilterScores(amd, pd.DataFrame({"lli": pi}, index=list(names)),
                        pd.DataFrame({"lli": mi}, index=list(names)))


def test_union_membership_and_provenance():
    cs = assemble_critical_set(_scores([5.0, 0.0, 1.0, 0.1], [2.0, 0.1, 0.0, 3.0]),
                               ["f0", "f1", "f2", "f3"])
    assert cs.provenance["f0"]["lli"] == ["pi", "mi"]
    assert cs.provenance["f3"]["lli"] == ["mi"]
    assert "f1" not in cs.unified and "f2" not in cs.unified
    assert set(cs.unified) == set().union(*cs.per_dm.values())


def test_critical_set_json_round_trip():
    cs = assemble_critical_set(_scores([5.0, 0.0, 1.0, 0.1], [2.0, 0.1, 0.0, 3.0]),
                               ["f0", "f1", "f2", "f3"])
    back = CriticalFeatureSet.from_json(cs.to_json())
    assert back.unified == cs.unified and back.provenance == cs.provenance
    assert back.to_json() == cs.to_json()


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.lists(st.floats(0, 1), min_size=6, max_size=6),
       st.integers(0, 5), st.floats(0.0, 2.0), st.sampled_from(["pi", "mi"]))
def test_union_rule_is_monotone(pi, mi, idx, bump, which):
    names = [f"f{i}" for i in range(6)]
    thresholds = {"lli": {"pi": float(np.mean(pi)), "mi": float(np.mean(mi))}}
    base = assemble_critical_set(_scores(pi, mi, names), names, thresholds)
    raised_pi, raised_mi = list(pi), list(mi)
    (raised_pi if which == "pi" else raised_mi)[idx] += bump
    after = assemble_critical_set(_scores(raised_pi, raised_mi, names), names, thresholds)
    assert set(base.unified) <= set(after.unified)


# -- full pipeline on a seeded fixture --

@pytest.fixture(scope="module")
def selector_fixture():
    rng = np.random.default_rng(13)
    n = 400
    X = pd.DataFrame(rng.random((n, 91)), columns=FEATURE_IDS)
    X[FEATURE_IDS[7]] = 1.0
    Y = pd.DataFrame({"lli": rng.random(n), "lam_pe": rng.random(n), "lam_ne": rng.random(n)})
    label_copy = "ic.cumulative.p90"
    X[label_copy] = Y["lli"] * 3 + 1
    sel = CriticalFeatureSelector(n_estimators=60, repeats=10, random_state=1).fit(X, Y)
    return sel, X, label_copy


def test_selector_pipeline(selector_fixture):
    sel, X, label_copy = selector_fixture
    cs = sel.critical_set_
    assert len(sel.amd_survivors_) == 63
    assert FEATURE_IDS[7] not in sel.amd_survivors_
    assert set(cs.unified) <= set(sel.amd_survivors_)
    pi = sel.scores_.pi["lli"]
    assert pi.idxmax() == label_copy
    assert sel.scores_.mi.at[label_copy, "lli"] > sel.scores_.mi["lli"].mean()
    assert cs.provenance[label_copy]["lli"] == ["pi", "mi"]
    assert list(sel.transform(X).columns) == list(cs.unified)
    frame = sel.report_frame()
    assert len(frame) == 91 and frame["amd_pass"].sum() == 63


def test_selector_is_reproducible(selector_fixture):
    sel, X, _ = selector_fixture
    Y = pd.DataFrame({"lli": (X["ic.cumulative.p90"] - 1) / 3,
                      "lam_pe": np.zeros(len(X)) + 0.1, "lam_ne": np.linspace(0, 1, len(X))})
    a = CriticalFeatureSelector(n_estimators=20, repeats=3, random_state=2).fit(X, Y)
    b = CriticalFeatureSelector(n_estimators=20, repeats=3, random_state=2).fit(X, Y)
    assert a.critical_set_.to_json() == b.critical_set_.to_json()
    assert a.degenerate_labels_ == ["lam_pe"]
