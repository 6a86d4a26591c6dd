from fractions import Fraction

import numpy as np
import pytest

from hazshift.data import Dataset
from hazshift.km import StepCurve, kaplan_meier


def _ds(times, deltas, tau=2.0):
    n = len(times)
    return Dataset(y=np.zeros(n), t_obs=times, delta=deltas,
                   covariates=np.zeros((n, 0)), tau=tau)


def test_three_record_hand_values():
    km = kaplan_meier(_ds([1.0, 2.0, 1.5], [1, 0, 1]))
    s = km.survival
    # product limit 1 * (1 - 1/3) * (1 - 1/2) in exact arithmetic
    s1 = Fraction(1) * (1 - Fraction(1, 3))
    s15 = s1 * (1 - Fraction(1, 2))
    assert s(0.5) == 1.0
    assert s(1.0) == float(s1)
    assert s(1.2) == float(s1)
    assert s(1.5) == float(s15)
    assert s(1.99) == float(s15)


def test_no_events_flat_without_bands():
    km = kaplan_meier(_ds([2.0, 2.0], [0, 0]))
    assert not km.has_bands
    assert km.survival(0.0) == 1.0 and km.survival(1.999) == 1.0
    assert km.cdf(1.0) == 0.0


def test_single_event():
    km = kaplan_meier(_ds([1.0], [1]))
    assert km.survival(0.999) == 1.0
    assert km.survival(1.0) == 0.0
    assert km.survival(1.5) == 0.0


def test_uncensored_matches_ecdf_exactly(rng):
    t = np.round(rng.uniform(0, 1.9, size=200), 2)  # includes ties
    km = kaplan_meier(_ds(t, np.ones(200, int)))
    for u in np.linspace(0, 1.95, 97):
        ecdf = np.count_nonzero(t <= u) / t.size
        assert km.cdf(u) == ecdf


def test_survival_properties(rng):
    t = rng.uniform(0, 2, 300)
    delta = (t < 1.4).astype(int)
    t = np.where(delta == 1, t, 2.0)
    km = kaplan_meier(_ds(t, delta))
    s = km.survival
    assert s(0.0) == 1.0
    assert np.all(np.diff(s.values) < 0)
    assert np.all((s.values >= 0) & (s.values <= 1))
    np.testing.assert_array_equal(s.times, np.unique(t[delta == 1]))
    assert np.all(s.lower <= s.values + 1e-15)
    assert np.all(s.upper >= s.values - 1e-15)
    assert np.all((s.lower >= 0) & (s.upper <= 1))
    # variance is zero before the first event, positive after
    assert km.variance[0] > 0


def test_greenwood_against_direct_sum():
    t = [0.2, 0.4, 0.4, 0.9, 2.0, 2.0]
    d = [1, 1, 1, 1, 0, 0]
    km = kaplan_meier(_ds(t, d))
    # risk sets 6, 5, 3 with deaths 1, 2, 1
    n = np.array([6, 5, 3.0])
    dd = np.array([1, 2, 1.0])
    s = np.cumprod(1 - dd / n)
    gw = np.cumsum(dd / (n * (n - dd)))
    np.testing.assert_allclose(km.survival.values, s, rtol=1e-14)
    np.testing.assert_allclose(km.variance, s ** 2 * gw, rtol=1e-14)
    np.testing.assert_array_equal(km.at_risk, n)


def test_log_log_band_formula():
    km = kaplan_meier(_ds([0.5, 1.0, 1.5, 2.0], [1, 1, 1, 0]))
    s = km.survival.values[0]
    se = np.sqrt(1 / (4 * 3)) / abs(np.log(s))
    z = 1.959963984540054
    assert km.survival.lower[0] == pytest.approx(s ** np.exp(z * se), rel=1e-12)
    assert km.survival.upper[0] == pytest.approx(s ** np.exp(-z * se), rel=1e-12)


def test_step_curve_rejects_unsorted():
    with pytest.raises(ValueError):
        StepCurve(np.array([1.0, 0.5]), np.array([0.5, 0.2]))


def test_csv_export(tmp_path):
    km = kaplan_meier(_ds([1.0, 2.0, 1.5], [1, 0, 1]))
    km.to_csv(tmp_path / "km.csv")
    lines = (tmp_path / "km.csv").read_text().splitlines()
    assert lines[0] == "t,estimate,lower,upper"
    assert lines[1].split(",")[1] == "0.0"
    assert len(lines) == 4
