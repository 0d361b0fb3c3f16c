import csv
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hysurv.survstats import (KM_CSV_HEADER, SurvivalRecord, assign_bins, concordance_index,
                              discretize_times, km_estimate, logrank_test, quantile_edges,
                              records_from_arrays, stratify, write_km_csv)


def recs(times, censors, risks=None):
    return records_from_arrays(times, censors, risks)


def random_instance(rng, n=None):
    n = n or int(rng.integers(2, 30))
    times = rng.integers(1, 15, size=n).astype(float)  # integer grid forces ties
    censors = rng.integers(0, 2, size=n)
    risks = rng.integers(0, 6, size=n).astype(float)
    return times, censors, risks


# -- concordance -------------------------------------------------------------

def test_cindex_examples():
    assert concordance_index(recs([2, 5, 9], [0, 0, 0], [0.9, 0.5, 0.1])) == 1.0
    assert concordance_index(recs([2, 5, 9], [0, 0, 0], [0.5, 0.9, 0.1])) == pytest.approx(2 / 3, abs=0)
    assert concordance_index(recs([2, 5, 9], [0, 1, 0], [1.0, 1.0, 1.0])) == 0.5


def test_cindex_requires_comparable_pairs():
    with pytest.raises(ValueError):
        concordance_index(recs([2, 5], [1, 1], [0.1, 0.2]))


def test_cindex_matches_enumeration_exactly():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(300):
        t, c, r = random_instance(rng)
        expected = oracles.cindex(t, c, r)
        if expected is None:
            with pytest.raises(ValueError):
                concordance_index(recs(t, c, r))
            continue
        assert concordance_index(recs(t, c, r)) == float(expected)
        checked += 1
    assert checked > 200


# -- Kaplan-Meier --------------------------------------------------------------

def test_km_examples():
    curve = km_estimate(recs([1, 2, 3], [0, 1, 0]))
    assert curve(1) == pytest.approx(2 / 3, abs=1e-15) and curve(3) == 0.0
    assert curve(0.5) == 1.0 and curve(2.5) == pytest.approx(2 / 3)
    all_cens = km_estimate(recs([1, 4, 6], [1, 1, 1]))
    assert np.array_equal(all_cens.survival, np.ones(3))
    n = 7
    steps = km_estimate(recs(np.arange(1, n + 1), np.zeros(n)))
    assert np.allclose(-np.diff(np.concatenate([[1.0], steps.survival])), 1 / n, atol=1e-15)


def test_km_matches_product_limit_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t, c, _ = random_instance(rng)
        curve = km_estimate(recs(t, c))
        expected = oracles.km(list(t), list(c))
        assert list(curve.times) == sorted(expected)
        for u, s in zip(curve.times, curve.survival):
            assert s == pytest.approx(float(expected[u]), abs=1e-12)


def test_km_csv_contract(tmp_path):
    path = tmp_path / "km.csv"
    curve = km_estimate(recs([1, 2, 3], [0, 1, 0]))
    write_km_csv(path, [("low", curve), ("high", curve)])
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == KM_CSV_HEADER
    assert len(rows) == 7 and rows[1] == ["1.0", repr(1 - 1 / 3), "3", "1", "low"]


# -- log-rank ----------------------------------------------------------------

def test_logrank_identical_groups():
    group = recs([1, 3, 4, 6], [0, 0, 1, 0])
    assert logrank_test(group, group) == (0.0, 1.0)


def test_logrank_textbook_case():
    a, b = recs([1, 3, 4], [0, 0, 1]), recs([2, 5, 6], [0, 0, 0])
    chi2, p = logrank_test(a, b)
    # oracle: 50-digit observed/expected table, see tests/oracles.py
    assert chi2 == pytest.approx(0.48648648648648648649, abs=1e-14)
    assert p == pytest.approx(0.48549880264428234246, abs=1e-14)


def test_logrank_symmetry_and_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        ta, ca, _ = random_instance(rng)
        tb, cb, _ = random_instance(rng)
        if (ca == 0).sum() + (cb == 0).sum() == 0:
            continue
        a, b = recs(ta, ca), recs(tb, cb)
        assert logrank_test(a, b) == logrank_test(b, a)
        chi2, p = logrank_test(a, b)
        if chi2 > 0:
            o_chi2, o_p = oracles.logrank(ta, ca, tb, cb)
            assert chi2 == pytest.approx(float(o_chi2), rel=1e-10)
            assert p == pytest.approx(float(o_p), rel=1e-10)


def test_logrank_needs_events():
    with pytest.raises(ValueError):
        logrank_test(recs([1, 2], [1, 1]), recs([3], [1]))


# -- discretization ------------------------------------------------------------

def test_discretize_quartiles():
    labels = discretize_times(recs(np.arange(1, 9), np.zeros(8)))
    assert list(labels) == [1, 1, 2, 2, 3, 3, 4, 4]


def test_censored_beyond_last_event_gets_last_label():
    times = np.concatenate([np.arange(1, 9), [50.0]])
    labels = discretize_times(recs(times, np.r_[np.zeros(8), 1]))
    assert labels[-1] == 4


def test_discretize_matches_sort_and_split():
    rng = np.random.default_rng(3)
    for _ in range(50):
        times = rng.uniform(1, 100, size=40).round(2)
        censors = rng.integers(0, 2, size=40)
        censors[:8] = 0
        labels = discretize_times(recs(times, censors))
        assert list(labels) == oracles.quantile_labels(times, censors, 4)


def test_discretize_errors():
    with pytest.raises(ValueError):
        quantile_edges([1, 2, 3], [0, 0, 0], 4)
    with pytest.raises(ValueError):
        quantile_edges([5, 5, 5, 5, 5], [0] * 5, 4)
    assert list(assign_bins([0.5, 2.0, 9.0], [2.0, 4.0])) == [1, 2, 3]


# -- stratification ----------------------------------------------------------

def test_stratify_examples():
    assert list(stratify([1, 2, 3, 4])) == ["low", "low", "high", "high"]
    with pytest.raises(ValueError):
        stratify([2.0, 2.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=2, max_size=100))
def test_stratify_matches_sorted_split(values):
    risks = np.array(values, dtype=float)
    order = np.sort(risks)
    n = len(order)
    median = Fraction(int(order[(n - 1) // 2]) + int(order[n // 2]), 2)
    expected = ["high" if Fraction(int(v)) > median else "low" for v in risks]
    if "high" not in expected:
        with pytest.raises(ValueError):
            stratify(risks)
    else:
        assert list(stratify(risks)) == expected


def test_record_validation():
    with pytest.raises(ValueError):
        SurvivalRecord(0.0, 0)
    with pytest.raises(ValueError):
        SurvivalRecord(1.0, 3)


def test_cindex_negated_risks_complement():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(3, 40))
        t, c = rng.uniform(1, 50, size=n), rng.integers(0, 2, size=n)
        c[0] = 0
        t[0] = t.min() / 2
        r = rng.permutation(n).astype(float)
        a, b = concordance_index(recs(t, c, r)), concordance_index(recs(t, c, -r))
        assert a + b == pytest.approx(1.0, abs=1e-15)


def test_km_is_nonincreasing():
    rng = np.random.default_rng(5)
    for _ in range(50):
        t, c, _ = random_instance(rng)
        assert np.all(np.diff(km_estimate(recs(t, c)).survival) <= 0)


def test_logrank_p_falls_with_separation():
    rng = np.random.default_rng(6)
    base = rng.exponential(10.0, size=60)
    ps = []
    for shift in (1.0, 1.5, 2.5, 4.0):
        _, p = logrank_test(recs(base[:30], np.zeros(30)), recs(base[30:] * shift, np.zeros(30)))
        ps.append(p)
    assert all(a > b for a, b in zip(ps, ps[1:]))
