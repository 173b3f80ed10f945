import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (assert_tables_well_formed, chi2_sf_reference, chi2_statistic_reference,
                     midranks_reference)
from studentrisk.association import (AssociationError, associate, chi2_sf, chi_squared_test,
                                     contingency, gamma_upper_regularized, group_means,
                                     midranks, render_group_means, select_variables,
                                     selected_names, spearman, table_from_counts)
from studentrisk.dataset import BINARY, ORDINAL, OUTCOME, PREDICTOR, Dataset, VariableSpec


def cohort(columns: dict, y, levels=None):
    levels = levels or {}
    schema = [VariableSpec(nm, BINARY if levels.get(nm) == (0, 1) else ORDINAL,
                           levels.get(nm, (1, 2, 3, 4, 5)), PREDICTOR)
              for nm in columns]
    schema.append(VariableSpec("success", BINARY, (0, 1), OUTCOME, False))
    values = np.column_stack([np.asarray(c, float) for c in columns.values()] + [y])
    return Dataset(schema, values)


def test_fixed_tables():
    stat, df, p = chi_squared_test(table_from_counts([[10, 10], [10, 10]]))
    assert (stat, df, p) == (0.0, 1, 1.0)
    stat, df, _ = chi_squared_test(table_from_counts([[20, 0], [0, 20]]))
    assert stat == pytest.approx(40.0, abs=1e-12)


def test_yates_optional():
    table = table_from_counts([[20, 0], [0, 20]])
    stat, _, _ = chi_squared_test(table, yates=True)
    # (|20 - 10| - 0.5)^2 / 10 over four cells
    assert stat == pytest.approx(4 * 9.5 ** 2 / 10)


def test_zero_rows_dropped_with_note():
    table = table_from_counts([[5, 5], [0, 0], [3, 7]], row_labels=(1, 2, 3))
    assert table.counts.shape == (2, 2)
    assert table.row_labels == (1, 3)
    assert any("level 2" in n for n in table.notes)


def test_degenerate_table_errors():
    with pytest.raises(AssociationError):
        table_from_counts([[5, 0], [3, 0]])


def test_small_expected_counts_warn():
    with pytest.warns(UserWarning):
        chi_squared_test(table_from_counts([[1, 2], [3, 1]]))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5).flatmap(
    lambda r: st.lists(st.lists(st.integers(1, 60), min_size=2, max_size=2),
                       min_size=r, max_size=r)))
def test_chi2_against_references(counts):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stat, df, p = chi_squared_test(table_from_counts(counts))
    assert df == len(counts) - 1
    assert stat == pytest.approx(chi2_statistic_reference(counts), rel=1e-12, abs=1e-10)
    assert abs(p - chi2_sf_reference(stat, df)) < 1e-8


@pytest.mark.parametrize("df", [1, 2, 3, 4, 7, 10, 25])
@pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 3.84, 10.0, 40.0, 120.0])
def test_chi2_sf_grid(df, x):
    assert chi2_sf(x, df) == pytest.approx(chi2_sf_reference(x, df), rel=1e-9, abs=1e-15)


def test_gamma_against_scipy():
    special = pytest.importorskip("scipy.special")
    for a in [0.5, 1.0, 2.5, 7.0, 30.0]:
        for x in [0.1, 1.0, 5.0, 20.0, 60.0]:
            assert gamma_upper_regularized(a, x) == pytest.approx(
                special.gammaincc(a, x), rel=1e-10, abs=1e-300)


def test_spearman_monotone():
    x = np.arange(10.0)
    assert spearman(x, x ** 3) == 1.0
    assert spearman(x, -np.exp(x)) == -1.0


def test_spearman_errors():
    with pytest.raises(AssociationError):
        spearman([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(AssociationError):
        spearman([1, 2], [2, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=3, max_size=40))
def test_midranks_match_bruteforce(xs):
    np.testing.assert_allclose(midranks(xs), midranks_reference(xs), rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 3)), min_size=4, max_size=40))
def test_spearman_transform_invariance(pairs):
    x = np.array([a for a, _ in pairs], float)
    y = np.array([b for _, b in pairs], float)
    try:
        r = spearman(x, y)
    except AssociationError:
        return
    assert -1.0 <= r <= 1.0
    assert abs(spearman(np.exp(x / 10), y) - r) < 1e-12
    assert abs(spearman(x ** 3 + 2 * x, y) - r) < 1e-12


def test_spearman_against_scipy():
    stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.integers(1, 6, 50)
        y = rng.integers(0, 2, 50)
        assert spearman(x, y) == pytest.approx(stats.spearmanr(x, y)[0], abs=1e-12)


def test_contingency_counts_levels():
    ds = cohort({"a": [1, 1, 2, 3, 3, 3]}, [0, 1, 1, 0, 1, 1], levels={"a": (1, 2, 3)})
    t = contingency(ds, "a")
    assert t.counts.tolist() == [[1, 1], [0, 1], [1, 2]]


def test_selection_rule_and_order():
    rng = np.random.default_rng(1)
    n = 400
    strong = rng.integers(1, 6, n)
    y = (strong + rng.normal(0, 1, n) > 3).astype(float)
    noise = rng.integers(1, 6, n)
    ds = cohort({"noise": noise, "strong": strong}, y)
    res = select_variables(ds)
    assert res[0].variable == "strong" and res[0].selected
    assert abs(res[0].spearman_r) >= abs(res[1].spearman_r)
    # nothing passes an impossible rule
    assert selected_names(select_variables(ds, alpha=1e-300, tau=1.01)) == []
    # tau alone can select: r > tau, strict
    r = abs(res[0].spearman_r)
    assert select_variables(ds, alpha=1e-300, tau=r - 1e-9)[0].selected
    assert not select_variables(ds, alpha=1e-300, tau=r)[0].selected


def test_single_strong_effect_always_selected():
    from studentrisk.synth import CohortSpec, generate_cohort, uniform
    hits = 0
    for seed in range(100):
        spec = CohortSpec(500, (uniform("hit", range(1, 6), 3.0), uniform("other", range(1, 6))),
                          success_rate=0.5, seed=seed)
        ds, _ = generate_cohort(spec)
        hits += "hit" in selected_names(select_variables(ds))
    assert hits == 100


def test_group_means_and_rendering():
    ds = cohort({"a": [1, 3, 5, 5], "b": [0, 1, 1, 1]}, [0, 0, 1, 1],
                levels={"b": (0, 1)})
    rows = group_means(ds, ["a", "b"])
    assert (rows[0].mean_pass, rows[0].mean_fail) == (5.0, 2.0)
    text = render_group_means(rows)
    assert "| a {1,...,5} | 5.00 | 2.00 |" in text
    assert "| b {0,1} | 1.00 | 0.50 |" in text


def test_group_means_needs_both_groups():
    ds = cohort({"a": [1, 2, 3]}, [1, 1, 1])
    with pytest.raises(AssociationError):
        group_means(ds, ["a"])


def test_associate_report_formats():
    rng = np.random.default_rng(2)
    n = 300
    a = rng.integers(1, 6, n)
    y = (a + rng.normal(0, 1.5, n) > 3).astype(float)
    ds = cohort({"a": a, "b|c": rng.integers(1, 6, n)}, y)
    rep = associate(ds)
    doc = json.loads(rep.to_json())
    assert doc["selected"][0] == "a"
    assert doc["group_means"][0]["variable"] == "a"
    md = rep.to_markdown()
    assert "b\\|c" in md
    assert_tables_well_formed(md)


def test_missing_cells_rejected():
    ds = cohort({"a": [1, np.nan, 3, 4], "b": [1, 2, 3, 4]}, [0, 1, 0, 1])
    with pytest.raises(AssociationError):
        select_variables(ds)


def test_gamma_edge_cases():
    assert gamma_upper_regularized(1.0, 0.0) == 1.0
    assert gamma_upper_regularized(1.0, 2.0) == pytest.approx(math.exp(-2.0))
    with pytest.raises(ValueError):
        gamma_upper_regularized(0.0, 1.0)
