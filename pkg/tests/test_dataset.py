import io
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from studentrisk.dataset import (BINARY, CONTINUOUS, ORDINAL, OUTCOME, PREDICTOR, Dataset,
                                 DatasetError, VariableSpec, discretize, fit_normalization,
                                 load_dataset, normalize, schema_from_json, schema_to_json,
                                 serialize)

SCHEMA = [
    VariableSpec("attend", ORDINAL, (1, 2, 3, 4, 5), PREDICTOR, True),
    VariableSpec("success", BINARY, (0, 1), OUTCOME, False),
]


def schema_text(schema=SCHEMA):
    return schema_to_json(schema)


def test_load_small_table():
    ds = load_dataset("attend,success\n1,0\n3,1\n5,1\n", schema_text())
    assert (ds.n, ds.p) == (3, 2)
    assert ds.y.tolist() == [0, 1, 1]
    assert ds.column("attend").tolist() == [1.0, 3.0, 5.0]


def test_missing_marker():
    ds = load_dataset("attend,success\nNA,0\n2,1\n", schema_text())
    assert math.isnan(ds.values[0, 0])
    assert ds.has_missing


def test_out_of_range_level_names_location():
    with pytest.raises(DatasetError) as err:
        load_dataset("attend,success\n1,0\n7,1\n", schema_text())
    assert err.value.row == 2 and err.value.column == "attend"
    assert "attend" in str(err.value)


@pytest.mark.parametrize("csv, column", [
    ("attend,success\n1,NA\n", "success"),
    ("attend,grade\n1,0\n", "grade"),
])
def test_load_errors(csv, column):
    with pytest.raises(DatasetError) as err:
        load_dataset(csv, schema_text())
    assert err.value.column == column


def test_row_length_mismatch():
    with pytest.raises(DatasetError) as err:
        load_dataset("attend,success\n1,0,4\n", schema_text())
    assert err.value.row == 1


def test_missing_not_allowed():
    schema = [VariableSpec("attend", ORDINAL, (1, 2), PREDICTOR, False), SCHEMA[1]]
    with pytest.raises(DatasetError):
        load_dataset("attend,success\nNA,0\n", schema_text(schema))


def test_schema_invariants():
    with pytest.raises(ValueError):
        VariableSpec("x", ORDINAL, (1,), PREDICTOR)
    with pytest.raises(ValueError):
        VariableSpec("x", ORDINAL, (2, 1), PREDICTOR)
    with pytest.raises(ValueError):
        Dataset([SCHEMA[0]], np.ones((2, 1)))  # no outcome
    with pytest.raises(ValueError):
        Dataset(SCHEMA + [VariableSpec("s2", BINARY, (0, 1), OUTCOME)], np.ones((1, 3)))


def test_schema_json_round_trip():
    schema = SCHEMA + [VariableSpec("year", CONTINUOUS, (), PREDICTOR)]
    assert schema_from_json(schema_to_json(schema)) == schema


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.none(), st.integers(1, 5)), st.integers(0, 1)),
                min_size=1, max_size=30))
def test_serialize_round_trip(rows):
    text = "attend,success\n" + "".join(
        f"{'NA' if a is None else a},{s}\n" for a, s in rows)
    assert serialize(load_dataset(text, schema_text())) == text


def test_normalize_examples():
    Z, params = fit_normalization_of([[1], [2], [3]])
    np.testing.assert_allclose(Z[:, 0], [-1, 0, 1])
    assert params.mean[0] == 2 and params.std[0] == 1
    Z, params = fit_normalization_of([[4], [4], [4]])
    assert Z[:, 0].tolist() == [0, 0, 0] and params.constant[0]
    Z, params = fit_normalization_of([[1], [np.nan], [3]])
    # two-point oracle: mean 2, sample std sqrt(2)
    assert params.mean[0] == 2 and params.std[0] == pytest.approx(math.sqrt(2))
    assert math.isnan(Z[1, 0])
    assert Z[0, 0] == pytest.approx(-1 / math.sqrt(2))


def fit_normalization_of(rows):
    X = np.array(rows, dtype=float)
    params = fit_normalization(X)
    return params.transform(X), params


def test_normalize_needs_two_values():
    with pytest.raises(DatasetError):
        fit_normalization(np.array([[1.0], [np.nan]]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=40))
def test_normalize_moments_and_inverse(xs):
    X = np.array(xs).reshape(-1, 1)
    params = fit_normalization(X)
    Z = params.transform(X)
    if params.constant[0]:
        assert (Z == 0).all()
        return
    assert abs(Z.mean()) < 1e-9
    assert abs(Z.std(ddof=1) - 1) < 1e-9
    np.testing.assert_allclose(params.inverse(Z), X, atol=1e-9, rtol=0)


def test_normalize_dataset_uses_predictors():
    ds = load_dataset("attend,success\n1,0\n3,1\n5,1\n", schema_text())
    Z, params = normalize(ds)
    assert Z.shape == (3, 1)
    np.testing.assert_allclose(Z[:, 0], [-1, 0, 1])


def quantile_oracle(values, n_bins):
    obs = sorted(v for v in values if v is not None and not math.isnan(v))
    m = len(obs)
    out = []
    for v in values:
        if v is None or math.isnan(v):
            out.append(v)
            continue
        first = obs.index(v)
        b = next(b for b in range(n_bins)
                 if Fraction(b * m, n_bins) <= first < Fraction((b + 1) * m, n_bins))
        out.append(b + 1)
    return out


def test_discretize_examples():
    assert discretize([10, 20, 30, 40], 4) == [1, 2, 3, 4]
    vals = [1, 1, 1, 1, 2, 2, 2, 2]
    assert discretize(vals, 4) == quantile_oracle(vals, 4) == [1, 1, 1, 1, 3, 3, 3, 3]


def test_discretize_errors():
    with pytest.raises(ValueError):
        discretize([1, 2, 3], 3)
    with pytest.raises(ValueError):
        discretize([2, 2, 2, 2], 4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(-20, 20).map(float)), min_size=2, max_size=40),
       st.sampled_from([4, 5]))
def test_discretize_oracle_monotone_invariant(values, n_bins):
    observed = {v for v in values if v is not None}
    if len(observed) < 2:
        return
    codes = discretize(values, n_bins)
    assert codes == quantile_oracle(values, n_bins)
    pairs = [(v, c) for v, c in zip(values, codes) if v is not None]
    for (a, ca) in pairs:
        for (b, cb) in pairs:
            if a <= b:
                assert ca <= cb
    transformed = [None if v is None else math.exp(v / 4) for v in values]
    assert discretize(transformed, n_bins) == codes
    assert all(c is None or 1 <= c <= n_bins for c in codes)


def test_dataset_is_read_only():
    ds = load_dataset("attend,success\n1,0\n", schema_text())
    with pytest.raises(ValueError):
        ds.values[0, 0] = 2


def test_unlabeled_apply_rows():
    ds = load_dataset("attend,success\n1,NA\n", schema_text(), allow_missing_outcome=True)
    assert ds.y.tolist() == [0]


def test_empty_table_loads():
    ds = load_dataset("attend,success\n", schema_text())
    assert ds.n == 0


def test_schema_file_helpers(tmp_path):
    from studentrisk.dataset import read_dataset, write_dataset
    ds = load_dataset("attend,success\n1,0\nNA,1\n", schema_text())
    write_dataset(ds, tmp_path / "d.csv")
    back = read_dataset(tmp_path / "d.csv")
    assert serialize(back) == serialize(ds)
    assert json.loads((tmp_path / "d.schema.json").read_text())["variables"][0]["name"] == "attend"
    assert isinstance(io.StringIO(serialize(ds)).read(), str)
