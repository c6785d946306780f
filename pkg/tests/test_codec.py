import json

import numpy as np
import pytest

from dpsynth.codec import (
    ColumnSpec,
    TableSchema,
    VgmModel,
    decode_table,
    decode_value,
    encode_rows,
    encode_table,
    encode_value,
    fit_vgm,
    longtail_forward,
    longtail_inverse,
    parse_schema,
    sample_condition,
    sample_conditions,
)
from dpsynth.errors import ConfigError, DataError

THREE_COL = json.dumps([
    {"name": "age", "kind": "continuous"},
    {"name": "income", "kind": "mixed", "singular_values": [0]},
    {"name": "sex", "kind": "categorical", "is_target": True},
])


# ------------------------------------------------------------------ schema

def test_parse_schema_three_columns():
    schema = parse_schema(THREE_COL)
    assert len(schema.columns) == 3
    assert schema.columns[1].singular_values == (0.0,)
    assert schema.target_index == 2


def test_parse_schema_rejects_two_targets():
    doc = json.dumps([
        {"name": "a", "kind": "categorical", "is_target": True},
        {"name": "b", "kind": "categorical", "is_target": True},
    ])
    with pytest.raises(ConfigError, match="target"):
        parse_schema(doc)


def test_parse_schema_rejects_mixed_without_singulars():
    with pytest.raises(ConfigError, match="singular"):
        parse_schema(json.dumps([{"name": "m", "kind": "mixed"}]))


def test_parse_schema_rejects_unknown_kind_and_keys():
    with pytest.raises(ConfigError, match="kind"):
        parse_schema(json.dumps([{"name": "a", "kind": "datetime"}]))
    with pytest.raises(ConfigError, match="unknown"):
        parse_schema(json.dumps([{"name": "a", "kind": "continuous", "typo": 1}]))


def test_parse_schema_rejects_duplicates_and_bad_json():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_schema(json.dumps([
            {"name": "a", "kind": "continuous"},
            {"name": "a", "kind": "continuous"},
        ]))
    with pytest.raises(ConfigError, match="JSON"):
        parse_schema("{not json")


# --------------------------------------------------------------------- vgm

def test_fit_vgm_recovers_two_well_separated_modes():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(0, 1, 2500), rng.normal(10, 1, 2500)])
    model = fit_vgm(x, max_modes=10, seed=0)
    assert model.mode_count == 2
    means = sorted(model.means)
    assert abs(means[0] - 0.0) < 0.15
    assert abs(means[1] - 10.0) < 0.15
    for w in model.weights:
        assert abs(w - 0.5) < 0.05


def test_fit_vgm_single_gaussian_keeps_one_dominant_mode():
    x = np.random.default_rng(100).normal(5, 2, 500)
    model = fit_vgm(x, max_modes=10, seed=0)
    assert model.mode_count == 1
    assert abs(model.means[int(np.argmax(model.weights))] - 5.0) < 0.1


def test_fit_vgm_rejects_degenerate_input():
    with pytest.raises(DataError, match="degenerate"):
        fit_vgm([3.0, 3.0, 3.0], seed=0)
    with pytest.raises(DataError, match="degenerate"):
        fit_vgm([9.0], seed=0)


def test_fit_vgm_invariants():
    x = np.random.default_rng(1).normal(size=1000) * 40
    model = fit_vgm(x, seed=2)
    assert sum(model.weights) == pytest.approx(1.0, abs=1e-9)
    assert all(s >= 1e-6 for s in model.stds)
    assert list(model.means) == sorted(model.means)


def test_fit_vgm_deterministic_to_17_digits():
    x = np.concatenate([
        np.random.default_rng(3).normal(0, 1, 800),
        np.random.default_rng(4).normal(6, 0.5, 800),
    ])
    a = fit_vgm(x, seed=11)
    b = fit_vgm(x, seed=11)
    fmt = lambda m: [f"{v:.17g}" for v in (*m.weights, *m.means, *m.stds)]
    assert fmt(a) == fmt(b)


# ------------------------------------------------------------ value codec

def test_encode_value_at_mode_mean_gives_zero_alpha():
    model = VgmModel((1.0,), (2.0,), (0.5,))
    alpha, beta = encode_value(2.0, model)
    assert alpha == 0.0
    assert list(beta) == [1.0]


def test_encode_value_hand_evaluated():
    model = VgmModel((1.0,), (2.0,), (0.5,))
    alpha, _ = encode_value(3.0, model)
    assert alpha == pytest.approx(0.5)  # (3 - 2) / (4 * 0.5)


def test_encode_value_singular_mode_first():
    model = VgmModel((0.6, 0.4), (5.0, 9.0), (1.0, 1.0), singular_modes=(0.0,))
    alpha, beta = encode_value(0.0, model)
    assert alpha == 0.0
    assert list(beta) == [1.0, 0.0, 0.0]


def test_encode_value_four_mode_one_hot():
    model = VgmModel((0.25, 0.25, 0.25, 0.25), (0.0, 4.0, 8.0, 12.0),
                     (0.5, 0.5, 0.5, 0.5))
    _, beta = encode_value(4.1, model)
    assert list(beta) == [0.0, 1.0, 0.0, 0.0]


def test_encode_value_mode_choice_is_weighted_density_argmax():
    # weights break the tie the unweighted density would leave
    model = VgmModel((0.9, 0.1), (0.0, 2.0), (1.0, 1.0))
    _, beta = encode_value(1.0, model)
    assert list(beta) == [1.0, 0.0]
    # perturbing tau inside the constant-argmax region keeps beta fixed
    for tau in (0.7, 0.9, 1.05):
        _, again = encode_value(tau, model)
        assert list(again) == list(beta)


def test_encode_value_clamps_alpha():
    model = VgmModel((1.0,), (0.0,), (1.0,))
    alpha, _ = encode_value(100.0, model)
    assert alpha == 1.0


def test_decode_value_basics():
    model = VgmModel((0.5, 0.5), (1.0, 6.0), (0.5, 1.0), singular_modes=(0.0,))
    assert decode_value(0.0, [0.0, 1.0, 0.0], model) == 1.0
    assert decode_value(0.77, [1.0, 0.0, 0.0], model) == 0.0
    assert decode_value(0.5, [0.0, 0.0, 1.0], model) == pytest.approx(8.0)
    with pytest.raises(ValueError, match="one-hot"):
        decode_value(0.0, [0.5, 0.5, 0.0], model)
    with pytest.raises(ValueError, match="one-hot"):
        decode_value(0.0, [1.0, 1.0, 0.0], model)


def test_value_round_trip_within_four_sigma():
    model = VgmModel((0.3, 0.7), (-2.0, 3.0), (0.4, 1.5), singular_modes=(99.0,))
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(500):
        k = rng.integers(2)
        tau = float(rng.normal((-2.0, 3.0)[k], (0.4, 1.5)[k]))
        alpha, beta = encode_value(tau, model)
        if abs(alpha) >= 1.0:  # clamped encodings cannot round-trip
            continue
        back = decode_value(alpha, beta, model)
        assert back == pytest.approx(tau, rel=1e-9, abs=1e-12)
        checked += 1
    assert checked > 400


# ------------------------------------------------------------- table codec

def test_encode_table_categorical_frequencies():
    schema = TableSchema((
        ColumnSpec("c", "categorical"),
        ColumnSpec("v", "continuous"),
    ))
    raw = [["a", "0.1"], ["b", "0.9"], ["a", "0.5"], ["a", "1.4"]]
    table, state = encode_table(raw, schema, seed=0)
    assert state.categories[0] == ("a", "b")
    assert state.frequencies[0] == (3, 1)
    block = state.layout.blocks[0]
    onehot = table.data[:, block.onehot_offset:block.onehot_offset + block.modes]
    assert np.array_equal(onehot.sum(axis=0), [3, 1])


def test_longtail_transform_fixes_zero_and_inverts():
    assert longtail_forward(np.array([0.0]))[0] == 0.0
    x = np.array([-250.0, -1.0, 0.0, 3.5, 1e6])
    assert np.allclose(longtail_inverse(longtail_forward(x)), x, rtol=1e-12)


def test_encode_table_mixed_column_routes_singulars():
    rng = np.random.default_rng(5)
    values = np.concatenate([np.zeros(300), rng.normal(40, 3, 700)])
    rng.shuffle(values)
    schema = TableSchema((ColumnSpec("borrow", "mixed", singular_values=(0.0,)),))
    raw = [[repr(float(v))] for v in values]
    table, state = encode_table(raw, schema, seed=1)
    model = state.models[0]
    assert model.singular_modes == (0.0,)
    # the singular mode carries exactly the zero rows
    assert state.frequencies[0][0] == 300
    # Gaussian modes carry the continuous mass near 40 (sampling oracle)
    dominant = int(np.argmax(model.weights))
    assert abs(model.means[dominant] - 40.0) < 1.0
    zero_rows = np.flatnonzero(values == 0.0)
    block = state.layout.blocks[0]
    assert np.all(table.data[zero_rows, block.onehot_offset] == 1.0)
    assert np.all(table.data[zero_rows, block.offset] == 0.0)


def test_encode_table_drops_bad_rows_and_counts():
    schema = TableSchema((ColumnSpec("v", "continuous"),))
    raw = [["1.0"], ["oops"], ["2.0"], ["nan"], ["3.0"], ["2.5"]]
    table, state = encode_table(raw, schema, seed=0)
    assert state.dropped_rows == 2
    assert table.data.shape[0] == 4


def test_encode_table_rejects_all_rows_dropped():
    schema = TableSchema((ColumnSpec("v", "continuous"),))
    with pytest.raises(DataError, match="no usable rows"):
        encode_table([["x"], ["y"]], schema, seed=0)


def test_encode_table_degenerate_mixed_constant_plus_outlier():
    # all mass on the singular value except one point: nothing left to model
    schema = TableSchema((ColumnSpec("m", "mixed", singular_values=(5.0,)),))
    raw = [["5.0"]] * 50 + [["9.0"]]
    with pytest.raises(DataError, match="singular"):
        encode_table(raw, schema, seed=0)


def test_encoded_rows_are_valid():
    rng = np.random.default_rng(2)
    schema = parse_schema(THREE_COL)
    raw = [
        [repr(float(rng.normal(30, 9))),
         "0.0" if rng.random() < 0.3 else repr(float(rng.normal(50, 5))),
         "m" if rng.random() < 0.5 else "f"]
        for _ in range(400)
    ]
    table, state = encode_table(raw, schema, seed=3)
    for block in state.layout.blocks:
        onehot = table.data[:, block.onehot_offset:block.onehot_offset + block.modes]
        assert np.array_equal(onehot.sum(axis=1), np.ones(len(raw)))
        if block.alpha_offset is not None:
            alpha = table.data[:, block.alpha_offset]
            assert np.all((alpha >= -1.0) & (alpha <= 1.0))


def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    schema = parse_schema(THREE_COL)
    raw = [
        [repr(float(rng.normal(30, 9))),
         "0.0" if rng.random() < 0.3 else repr(float(rng.normal(50, 5))),
         "m" if rng.random() < 0.5 else "f"]
        for _ in range(500)
    ]
    table, state = encode_table(raw, schema, seed=3)
    back = decode_table(table.data, state)
    n_checked = n_clamped = 0
    for r, (row, orig) in enumerate(zip(back, raw)):
        assert row[2] == orig[2]  # categorical cells exact
        for col in (0, 1):
            got, want = float(row[col]), float(orig[col])
            if want == 0.0:
                assert got == 0.0
                continue
            if abs(table.data[r, state.layout.blocks[col].alpha_offset]) >= 1.0:
                n_clamped += 1  # clamped alpha cannot round-trip by design
                continue
            assert got == pytest.approx(want, rel=1e-6)
            n_checked += 1
    assert n_checked > 20 * max(n_clamped, 1)


def test_decode_table_soft_block_argmax():
    schema = TableSchema((ColumnSpec("c", "categorical", categories=("x", "y")),))
    raw = [["x"], ["y"], ["x"]]
    _, state = encode_table(raw, schema, seed=0)
    soft = np.array([[0.6, 0.4], [0.1, 0.9]])
    assert decode_table(soft, state) == [["x"], ["y"]]


def test_decode_table_rejects_width_mismatch():
    schema = TableSchema((ColumnSpec("c", "categorical", categories=("x", "y")),))
    _, state = encode_table([["x"], ["y"]], schema, seed=0)
    with pytest.raises(ValueError, match="width"):
        decode_table(np.zeros((2, 5)), state)


def test_encode_rows_uses_fitted_state(toy_encoded):
    table, state = toy_encoded
    fresh = encode_rows([["1.25", "a"]], state)
    assert fresh.shape == (1, state.layout.row_width)
    with pytest.raises(DataError, match="category"):
        encode_rows([["1.25", "zzz"]], state)
    with pytest.raises(DataError, match="numeric"):
        encode_rows([["not-a-number", "a"]], state)


# -------------------------------------------------------------- conditions

def test_sample_condition_single_mode_always_selected():
    schema = TableSchema((ColumnSpec("c", "categorical", categories=("only",)),))
    _, state = encode_table([["only"], ["only"]], schema, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        vec, col, mode = sample_condition(state, rng)
        assert (col, mode) == (0, 0)
        assert list(vec) == [1.0]


def test_sample_condition_equal_counts_split_evenly():
    # counts e-1 each: log1p weights equal -> 50/50 within 3% over 1e4 draws
    schema = TableSchema((ColumnSpec("c", "categorical"),))
    n = 1718
    raw = [["a"]] * n + [["b"]] * n
    _, state = encode_table(raw, schema, seed=0)
    rng = np.random.default_rng(9)
    _, _, modes = sample_conditions(state, rng, 10_000)
    share = np.mean(modes == 0)
    assert abs(share - 0.5) < 0.03


def test_sample_condition_skips_zero_count_modes():
    schema = TableSchema((ColumnSpec("c", "categorical", categories=("a", "b", "ghost")),))
    raw = [["a"]] * 5 + [["b"]] * 5
    _, state = encode_table(raw, schema, seed=0)
    rng = np.random.default_rng(1)
    _, _, modes = sample_conditions(state, rng, 2000)
    assert not np.any(modes == 2)
