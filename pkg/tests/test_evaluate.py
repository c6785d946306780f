import itertools
import math

import numpy as np
import pytest

from dpsynth.codec import ColumnSpec, TableSchema
from dpsynth.errors import DataError
from dpsynth.evaluate import (
    diff_corr,
    evaluate_tables,
    jsd,
    mia,
    scaled_wd,
    tstr_classify,
    tstr_regress,
    wd_1d,
)
from dpsynth.evaluate import _fit_ridge, _standardize  # regressor oracle checks


def brute_force_w1(a, b):
    """Optimal transport between equal-size point sets by enumeration."""
    best = math.inf
    for perm in itertools.permutations(range(len(b))):
        cost = sum(abs(a[i] - b[j]) for i, j in enumerate(perm)) / len(a)
        best = min(best, cost)
    return best


# ---------------------------------------------------------------------- wd

def test_wd_identical_is_zero():
    assert wd_1d([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == 0.0


def test_wd_point_masses():
    assert wd_1d([0.0, 0.0], [1.0, 1.0]) == pytest.approx(1.0)


def test_wd_two_point_sets_match_brute_force():
    a, b = [0.0, 1.0], [0.5, 1.5]
    assert wd_1d(a, b) == pytest.approx(0.5)
    assert wd_1d(a, b) == pytest.approx(brute_force_w1(a, b))
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = list(rng.normal(size=4))
        b = list(rng.normal(size=4))
        assert wd_1d(a, b) == pytest.approx(brute_force_w1(a, b), rel=1e-9)


def test_wd_metric_properties():
    rng = np.random.default_rng(1)
    for _ in range(30):
        a, b, c = (rng.normal(size=rng.integers(2, 9)) for _ in range(3))
        dab, dba = wd_1d(a, b), wd_1d(b, a)
        assert dab == pytest.approx(dba, abs=1e-12)
        assert dab >= 0
        assert wd_1d(a, b) <= wd_1d(a, c) + wd_1d(c, b) + 1e-9
    assert wd_1d([2.0, 5.0], [5.0, 2.0]) == 0.0


def test_wd_rejects_empty():
    with pytest.raises(DataError):
        wd_1d([], [1.0])


def test_scaled_wd_is_scale_free():
    a = [0.0, 10.0]
    b = [5.0, 15.0]
    assert scaled_wd(a, b) == pytest.approx(scaled_wd([x / 15 for x in a], [x / 15 for x in b]))


# --------------------------------------------------------------------- jsd

def test_jsd_identical_is_zero():
    assert jsd({"a": 3, "b": 1}, {"a": 6, "b": 2}) == pytest.approx(0.0, abs=1e-15)


def test_jsd_disjoint_supports_is_one():
    assert jsd({"a": 5}, {"b": 7}) == pytest.approx(1.0)


def test_jsd_hand_evaluated():
    # P=(1/2,1/2), Q=(1,0), M=(3/4,1/4):
    # 0.5*[0.5 lg(2/3) + 0.5 lg 2] + 0.5*[lg(4/3)] = 0.311278...
    want = 0.5 * (0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25)) \
        + 0.5 * math.log2(1 / 0.75)
    got = jsd({"a": 1, "b": 1}, {"a": 1})
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(0.3113, abs=1e-4)


def test_jsd_symmetric_and_bounded():
    rng = np.random.default_rng(2)
    for _ in range(30):
        a = {k: int(v) for k, v in zip("abcd", rng.integers(0, 20, 4)) if v}
        b = {k: int(v) for k, v in zip("abcd", rng.integers(0, 20, 4)) if v}
        if not a or not b:
            continue
        assert jsd(a, b) == pytest.approx(jsd(b, a), abs=1e-12)
        assert 0.0 <= jsd(a, b) <= 1.0


def test_jsd_rejects_empty():
    with pytest.raises(DataError):
        jsd({}, {})


# ---------------------------------------------------------------- diff_corr

NUM2 = TableSchema((ColumnSpec("u", "continuous"), ColumnSpec("v", "continuous")))


def grid_from(cols):
    return [[repr(float(c)) if not isinstance(c, str) else c for c in row]
            for row in zip(*cols)]


def test_diff_corr_self_is_zero():
    rng = np.random.default_rng(3)
    t = grid_from([rng.normal(size=50), rng.normal(size=50)])
    assert diff_corr(t, t, NUM2) == 0.0


def test_diff_corr_independent_vs_correlated():
    rng = np.random.default_rng(4)
    n = 10_000
    real = grid_from([rng.uniform(size=n), rng.uniform(size=n)])
    u = rng.uniform(size=n)
    synth = grid_from([u, u])
    assert diff_corr(real, synth, NUM2) == pytest.approx(math.sqrt(2), abs=0.05)


def test_diff_corr_identical_crosstabs_zero():
    schema = TableSchema((ColumnSpec("a", "categorical"), ColumnSpec("b", "categorical")))
    t = [["x", "p"], ["x", "q"], ["y", "p"], ["y", "q"], ["x", "p"]]
    assert diff_corr(t, list(t), schema) == 0.0


def test_diff_corr_constant_column_warns_and_is_zero_entry():
    t_const = grid_from([np.ones(30), np.arange(30.0)])
    t_var = grid_from([np.arange(30.0), np.arange(30.0)])
    with pytest.warns(UserWarning, match="constant"):
        val = diff_corr(t_const, t_var, NUM2)
    assert val == pytest.approx(math.sqrt(2))  # 0 vs perfect correlation


def test_diff_corr_needs_two_columns():
    schema = TableSchema((ColumnSpec("u", "continuous"),))
    with pytest.raises(DataError):
        diff_corr([["1.0"]], [["1.0"]], schema)


# -------------------------------------------------------------------- tstr

CLS_SCHEMA = TableSchema((
    ColumnSpec("f", "continuous"),
    ColumnSpec("y", "categorical", is_target=True),
))


def separable_table(n, seed, flip=False):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = np.where(x > 0, "pos", "neg")
    if flip:
        y = rng.permutation(y)
    return [[repr(float(a)), str(b)] for a, b in zip(x, y)]


def test_tstr_classify_synth_equals_train_gives_zero_diffs():
    train = separable_table(200, 0)
    test = separable_table(100, 1)
    dacc, dauc, df1 = tstr_classify(train, test, list(train), CLS_SCHEMA, "y")
    assert dacc <= 1e-6 and dauc <= 1e-6 and df1 <= 1e-6


def test_tstr_classify_label_shuffled_synth_loses_half_accuracy():
    # many features, so a shuffled-label fit lands near-orthogonal to the
    # true separating direction and scores ~50% out of sample
    d = 80
    schema = TableSchema(
        tuple(ColumnSpec(f"f{i}", "continuous") for i in range(d))
        + (ColumnSpec("y", "categorical", is_target=True),)
    )
    rng = np.random.default_rng(12)
    w_true = rng.normal(size=d)

    def table(n, seed, flip=False):
        r = np.random.default_rng(seed)
        x = r.normal(size=(n, d))
        y = np.where(x @ w_true > 0, "pos", "neg")
        if flip:
            y = r.permutation(y)
        return [[*(repr(float(v)) for v in row), str(lab)] for row, lab in zip(x, y)]

    train = table(1500, 20)
    test = table(1000, 21)
    shuffled = table(1500, 20, flip=True)
    dacc, dauc, _ = tstr_classify(train, test, shuffled, schema, "y")
    assert dacc == pytest.approx(50.0, abs=5.0)
    assert 0.0 <= dauc <= 1.0


def test_tstr_classify_rejects_single_class():
    train = [["0.1", "same"], ["0.2", "same"]]
    test = separable_table(10, 4)
    with pytest.raises(DataError, match="single class"):
        tstr_classify(train, test, train, CLS_SCHEMA, "y")


def test_tstr_handles_disjoint_feature_categories():
    # an undeclared categorical feature whose values differ per table must
    # still produce design matrices of one shared width
    schema = TableSchema((
        ColumnSpec("f", "continuous"),
        ColumnSpec("g", "categorical"),
        ColumnSpec("y", "categorical", is_target=True),
    ))
    rng = np.random.default_rng(6)

    def table(n, seed, groups):
        r = np.random.default_rng(seed)
        x = r.normal(size=n)
        g = [groups[i % len(groups)] for i in range(n)]
        y = np.where(x > 0, "pos", "neg")
        return [[repr(float(a)), gg, str(b)] for a, gg, b in zip(x, g, y)]

    train = table(120, 1, ["u", "v"])
    test = table(60, 2, ["v", "w"])      # w unseen in train
    synth = table(120, 3, ["u", "x"])    # x unseen elsewhere
    dacc, dauc, df1 = tstr_classify(train, test, synth, schema, "y")
    assert np.isfinite([dacc, dauc, df1]).all()


REG_SCHEMA = TableSchema((
    ColumnSpec("f", "continuous"),
    ColumnSpec("t", "continuous", is_target=True),
))


def test_ridge_zero_reg_recovers_exact_line():
    x = np.array([[1.0], [2.0], [3.0]])
    y = np.array([1.0, 2.0, 3.0])
    xs, = _standardize(x)
    beta, y_mean = _fit_ridge(xs, y, reg=0.0)
    coef = beta[0] / x.std()  # back to original units
    assert coef == pytest.approx(1.0, rel=1e-12)
    pred = xs @ beta + y_mean
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    assert 1 - ss_res / ss_tot == pytest.approx(1.0, abs=1e-12)


def reg_table(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    t = 2.0 * x + rng.normal(scale=0.1, size=n)
    return [[repr(float(a)), repr(float(b))] for a, b in zip(x, t)]


def test_tstr_regress_synth_equals_train_gives_zero_diffs():
    train = reg_table(200, 5)
    test = reg_table(100, 6)
    dmae, devs, dr2 = tstr_regress(train, test, list(train), REG_SCHEMA, "t")
    assert dmae == 0.0 and devs == 0.0 and dr2 == 0.0


def test_tstr_regress_constant_mean_synth():
    train = reg_table(200, 7)
    test = reg_table(100, 8)
    test_mean = float(np.mean([float(r[1]) for r in test]))
    synth = [[r[0], repr(test_mean)] for r in train]
    dmae, devs, dr2 = tstr_regress(train, test, synth, REG_SCHEMA, "t")

    # oracle: the real-trained ridge evaluated by an independent implementation
    x_tr = np.array([[float(r[0])] for r in train])
    y_tr = np.array([float(r[1]) for r in train])
    x_te = np.array([[float(r[0])] for r in test])
    y_te = np.array([float(r[1]) for r in test])
    mu, sd = x_tr.mean(0), x_tr.std(0)
    xs_tr, xs_te = (x_tr - mu) / sd, (x_te - mu) / sd
    beta = np.linalg.solve(xs_tr.T @ xs_tr + np.eye(1), xs_tr.T @ (y_tr - y_tr.mean()))
    pred = xs_te @ beta + y_tr.mean()
    r2_real = 1 - np.sum((y_te - pred) ** 2) / np.sum((y_te - y_te.mean()) ** 2)

    # the constant-mean model scores exactly R2 = 0 on the test set
    assert dr2 == pytest.approx(abs(r2_real), abs=1e-9)
    assert devs > 0 and dmae > 0


# --------------------------------------------------------------------- mia

def test_mia_members_equal_synth():
    rng = np.random.default_rng(9)
    members = rng.normal(size=(40, 5))
    nonmembers = rng.normal(size=(40, 5))
    res = mia(members, nonmembers, members.copy())
    assert res.accuracy >= 0.95


def test_mia_null_is_near_chance():
    accs = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        members = rng.normal(size=(500, 4))
        nonmembers = rng.normal(size=(500, 4))
        synth = rng.normal(size=(500, 4))
        accs.append(mia(members, nonmembers, synth).accuracy)
    for acc in accs:
        assert acc == pytest.approx(0.5, abs=0.05)


def test_mia_trivial_pair():
    member = np.array([[0.0, 0.0]])
    nonmember = np.array([[10.0, 10.0]])
    res = mia(member, nonmember, np.array([[0.0, 0.0]]))
    assert res.accuracy == 1.0
    assert res.threshold == 0.0


def test_mia_never_below_half_and_validates():
    rng = np.random.default_rng(10)
    res = mia(rng.normal(size=(20, 3)) + 50, rng.normal(size=(20, 3)), rng.normal(size=(5, 3)))
    assert res.accuracy >= 0.5
    with pytest.raises(DataError, match="synthetic"):
        mia(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((0, 2)))
    with pytest.raises(DataError, match="equal"):
        mia(np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((4, 2)))


# ------------------------------------------------------------------ report

def test_evaluate_tables_self_report(toy_rows, toy_schema):
    report = evaluate_tables(toy_rows, [list(r) for r in toy_rows], toy_schema, seed=3)
    assert report.wd == {"x": 0.0}
    assert report.jsd["k"] == pytest.approx(0.0, abs=1e-12)
    assert report.diff_cor == 0.0
    assert report.utility["kind"] == "classification"
    assert report.utility["delta_acc_pp"] == pytest.approx(0.0, abs=1e-6)
    assert report.metadata["real_rows"] == len(toy_rows)


def test_evaluate_tables_every_column_once(toy_rows, toy_schema):
    report = evaluate_tables(toy_rows, toy_rows, toy_schema, seed=0)
    names = [c.name for c in toy_schema.columns]
    for name in names:
        hits = (name in report.wd) + (name in report.jsd)
        assert hits == 1


def test_evaluate_tables_mixed_column_dual_metrics():
    schema = TableSchema((
        ColumnSpec("m", "mixed", singular_values=(0.0,)),
        ColumnSpec("c", "continuous"),
    ))
    rng = np.random.default_rng(11)
    def tbl(seed):
        r = np.random.default_rng(seed)
        vals = np.where(r.random(300) < 0.4, 0.0, r.normal(10, 2, 300))
        other = r.normal(size=300)
        return [[repr(float(v)), repr(float(o))] for v, o in zip(vals, other)]
    report = evaluate_tables(tbl(1), tbl(2), schema)
    assert "m" in report.wd
    assert "m:singular" in report.jsd
    assert "m" not in report.jsd
