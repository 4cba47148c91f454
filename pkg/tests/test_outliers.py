import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geots.outliers import detect_outliers_3iqr, quartiles, remove_outliers, write_report_csv
from geots.series import SeriesError, SyntheticSpec, TimeSeries, generate_synthetic


def brute_quartile(x, q):
    """Type-7 quantile straight from the order statistics."""
    s = sorted(x)
    h = (len(s) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def series_of(values, mask=None):
    values = np.asarray(values, dtype=float)[:, None]
    mask = np.ones(values.shape, bool) if mask is None else np.asarray(mask)[:, None]
    return TimeSeries("S", np.arange(values.shape[0], dtype=float), ("v",), values, mask)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=60))
def test_quartiles_match_order_statistics(xs):
    q1, q3 = quartiles(np.array(xs))
    assert q1 == pytest.approx(brute_quartile(xs, 0.25), rel=1e-12, abs=1e-9)
    assert q3 == pytest.approx(brute_quartile(xs, 0.75), rel=1e-12, abs=1e-9)


def test_hand_example_and_strict_fences():
    x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
    # q1 = 2.75, q3 = 6.25, iqr 3.5 -> fences -7.75 and 16.75
    rep = detect_outliers_3iqr(series_of(x + [16.75, 16.76]))
    f = rep.fences[0]
    q1, q3 = brute_quartile(x + [16.75, 16.76], 0.25), brute_quartile(x + [16.75, 16.76], 0.75)
    assert f.upper == pytest.approx(q3 + 3 * (q3 - q1))
    on_fence = series_of([0, 0, 1, 1, 4])  # q1=0, q3=1 -> upper fence exactly 4
    assert detect_outliers_3iqr(on_fence).n_flagged == 0
    assert detect_outliers_3iqr(series_of([0, 0, 1, 1, 4.000001])).n_flagged == 1


def test_quartiles_use_observed_values_only():
    values = [1.0, 2.0, 3.0, 4.0, 1000.0]
    mask = [True, True, True, True, False]
    rep = detect_outliers_3iqr(series_of(values, mask))
    assert rep.fences[0].q3 == pytest.approx(brute_quartile([1, 2, 3, 4], 0.75))
    assert rep.n_flagged == 0


def test_flagged_values_are_masked_not_dropped():
    s = series_of(list(np.linspace(0, 1, 50)) + [100.0])
    rep = detect_outliers_3iqr(s)
    cleaned = remove_outliers(s, rep)
    assert cleaned.n_steps == s.n_steps
    assert not cleaned.mask[50, 0]
    assert rep.flagged_pairs() == [(50, 0)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e4, 1e4))
def test_idempotent_and_translation_equivariant(seed, shift):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(3, size=80)
    s = series_of(x)
    rep = detect_outliers_3iqr(s)
    once = remove_outliers(s, rep)
    # a second pass with the original fences removes nothing more
    assert remove_outliers(once, rep).equals(once)
    moved = detect_outliers_3iqr(series_of(x + shift))
    np.testing.assert_array_equal(moved.fences[0].flagged, rep.fences[0].flagged)


def test_too_few_points_and_full_mask_warning():
    with pytest.raises(SeriesError):
        detect_outliers_3iqr(series_of([1.0, 2.0, 3.0]))
    s = series_of([0.0] * 6)
    rep = detect_outliers_3iqr(s)
    forged = type(rep)(rep.n_steps, (type(rep.fences[0])("v", 0, 0, 0, 0, 0, np.arange(6)),))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        remove_outliers(s, forged)
    assert any("fully masked" in str(w.message) for w in caught)


def test_spikes_on_gaussian_bulk_all_found():
    misses = false_flags = 0
    for seed in range(20):
        s = generate_synthetic(SyntheticSpec(2000, sigma=1.0, spikes=5, seed=seed))
        clean = generate_synthetic(SyntheticSpec(2000, sigma=1.0, seed=seed))
        spikes = set(np.flatnonzero(s.values[:, 0] != clean.values[:, 0]).tolist())
        flagged = set(detect_outliers_3iqr(s).fences[0].flagged.tolist())
        misses += len(spikes - flagged)
        false_flags += len(flagged - spikes)
    assert misses == 0
    assert false_flags <= 1


def test_report_csv(tmp_path):
    s = series_of(list(np.linspace(0, 1, 20)) + [-50.0])
    rep = detect_outliers_3iqr(s)
    path = tmp_path / "r.csv"
    write_report_csv(s, rep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "channel,index,epoch,value,bound,limit"
    assert lines[1].startswith("v,20,20.0,-50.0,lower,")
