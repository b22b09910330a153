import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from agepredict.evaluate import (
    accuracy_at,
    accuracy_curve,
    build_report,
    export_report,
    ks_statistic,
    ks_two_sample,
    load_report,
    mae,
    medae,
    r2,
    report_from_predictions,
)
from agepredict.models import fit_baseline_mean

from conftest import make_dataset


def test_mae_examples():
    assert mae([1, 2], [1, 2]) == 0
    assert mae([20, 30], [25, 45]) == 10
    assert mae([99], [10]) == 89


def test_medae_examples():
    assert medae([20, 30, 40], [21, 35, 90]) == 5
    assert medae([1000] + [0] * 9, [0] * 10) == 0
    assert medae([3, 4], [3, 4]) == 0
    assert medae([0, 0, 0, 0], [1, 2, 3, 10]) == 2.5


def test_r2_examples():
    assert r2([1, 2, 3], [1, 2, 3]) == 1.0
    assert r2([2, 2, 2], [1, 2, 3]) == 0.0
    assert r2([1, 2], [2, 1]) == -3.0
    with pytest.raises(ValueError):
        r2([1, 2], [5, 5])
    with pytest.raises(ValueError):
        r2([1], [2])


def test_accuracy_examples():
    assert accuracy_at([24], [20], 10) == 1.0
    assert accuracy_at([20, 30], [25, 45], 10) == 0.5
    assert accuracy_at([30], [20], 10) == 1.0  # inclusive boundary
    with pytest.raises(ValueError):
        accuracy_at([1], [1], -1)


def test_length_mismatch_is_error():
    for f in (mae, medae, r2):
        with pytest.raises(ValueError):
            f([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        mae([], [])


def test_accuracy_curve_perfect_and_length():
    curve = accuracy_curve([1.5, 2.5], [1.5, 2.5], 10)
    assert [b for b, _ in curve] == list(range(11))
    assert all(a == 1.0 for _, a in curve)


def test_bound_zero_continuous_predictions(rng):
    a = rng.integers(10, 80, size=2000).astype(float)
    p = a + rng.normal(size=2000) * 5
    assert accuracy_at(p, a, 0) < 0.01


pairs = st.integers(1, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-100, 200), min_size=n, max_size=n),
        st.lists(st.floats(10, 99), min_size=n, max_size=n),
    )
)


@given(pairs)
def test_metric_properties(pa):
    p, a = map(np.asarray, pa)
    m, md = mae(p, a), medae(p, a)
    assert m >= 0 and md >= 0
    # MedAE can vanish while MAE does not (see the outlier example), so only one direction holds
    if m == 0:
        assert md == 0
    curve = accuracy_curve(p, a, 10)
    accs = [x for _, x in curve]
    assert all(y >= x for x, y in zip(accs, accs[1:]))
    for b, acc in curve:
        assert acc == np.mean(np.abs(p - a) <= b)
    perm = np.random.default_rng(len(p)).permutation(len(p))
    assert mae(p[perm], a[perm]) == pytest.approx(m)
    assert medae(p[perm], a[perm]) == md
    if len(a) >= 2 and np.ptp(a) > 0:
        assert r2(p, a) <= 1.0
        assert r2(np.full(len(a), a.mean()), a) == pytest.approx(0.0, abs=1e-12)
        assert r2(p[perm], a[perm]) == pytest.approx(r2(p, a))


@given(pairs)
def test_mae_zero_iff_all_residuals_zero(pa):
    p, a = map(np.asarray, pa)
    assert (mae(p, a) == 0) == bool(np.all(p == a))


# --- KS ---------------------------------------------------------------------------------


def test_ks_identical_samples(rng):
    x = rng.normal(size=100)
    d, p = ks_two_sample(x, x)
    assert d == 0 and p == pytest.approx(1.0)


def test_ks_disjoint_ranges(rng):
    d, p = ks_two_sample(rng.uniform(0, 1, 100), rng.uniform(10, 11, 100))
    assert d == 1.0 and p < 1e-10


def test_ks_uniform_within_critical_value():
    rng = np.random.default_rng(99)
    d, p = ks_two_sample(rng.uniform(size=1000), rng.uniform(size=1000))
    critical = 1.358 * math.sqrt(2 / 1000)
    assert d < critical and p > 0.05


def test_ks_matches_scipy_statistic(rng):
    for _ in range(20):
        a = rng.normal(size=rng.integers(5, 200))
        b = rng.normal(0.3, 1.2, size=rng.integers(5, 200))
        assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)
        ties_a = rng.integers(0, 5, size=30)
        ties_b = rng.integers(0, 6, size=40)
        assert ks_statistic(ties_a, ties_b) == pytest.approx(stats.ks_2samp(ties_a, ties_b).statistic, abs=1e-12)


def test_ks_pvalue_close_to_scipy_asymptotic(rng):
    a = rng.normal(size=400)
    b = rng.normal(0.15, 1, size=500)
    _, p = ks_two_sample(a, b)
    ref = stats.ks_2samp(a, b, method="asymp").pvalue
    assert p == pytest.approx(ref, abs=0.02)


def test_ks_pvalue_calibrated_under_null():
    rng = np.random.default_rng(5)
    pvals = [ks_two_sample(rng.normal(size=200), rng.normal(size=200))[1] for _ in range(400)]
    rate = np.mean(np.array(pvals) < 0.05)
    assert 0.02 <= rate <= 0.08


def test_ks_empty_is_error():
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_ks_symmetric(a, b):
    assert ks_two_sample(a, b) == ks_two_sample(b, a)
    assert 0 <= ks_statistic(a, b) <= 1


# --- reports ---------------------------------------------------------------------------


def test_baseline_report_on_training_data(rng):
    y = rng.normal(size=40) * 10 + 25
    ds = make_dataset(rng.normal(size=(40, 2)), y)
    rep = build_report(fit_baseline_mean(ds), ds)
    assert rep.r2 == pytest.approx(0.0, abs=1e-12)
    assert np.mean(rep.residuals) == pytest.approx(0.0, abs=1e-12)
    assert len(rep.accuracy_curve) == 11


def test_residual_sign_and_sum():
    rep = report_from_predictions([10.0, 20.0, 33.0], [12.0, 25.0, 30.0])
    assert rep.residuals == (-2.0, -5.0, 3.0)
    assert sum(rep.residuals) == pytest.approx(3 * (np.mean([10, 20, 33]) - np.mean([12, 25, 30])))


def test_underprediction_gives_left_skewed_residuals(rng):
    a = rng.uniform(15, 60, size=1000)
    p = a - rng.exponential(5, size=1000)  # always too young, long tail
    rep = report_from_predictions(p, a)
    assert stats.skew(rep.residuals) < 0


def test_report_export_round_trip(tmp_path, rng):
    p = rng.normal(size=30) * 5 + 30
    a = rng.normal(size=30) * 5 + 30
    rep = report_from_predictions(p, a, 10, "ols")
    paths = export_report(rep, tmp_path / "out")
    assert load_report(paths["report"]) == rep
    lines = paths["accuracy_curve"].read_text().splitlines()
    assert lines[0] == "bound,accuracy" and len(lines) == 12
    rows = [l.split(",") for l in paths["residuals"].read_text().splitlines()[1:]]
    recomputed = np.mean([abs(float(r[3])) for r in rows])
    assert recomputed == pytest.approx(rep.mae, abs=1e-9)
    assert json.loads(paths["report"].read_text())["mae"] == rep.mae


def test_export_report_io_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        export_report(report_from_predictions([1.0, 2.0], [1.0, 3.0]), blocker / "sub")
