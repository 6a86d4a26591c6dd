import math

import numpy as np
import pytest
from scipy import integrate

from hazshift.data import validate
from hazshift.effect import Constant, LogLinear, PiecewiseTime
from hazshift.simlab import (MAIN, MAIN_THETAS, MULTI, MULTI_THETAS, DgpSpec,
                             event_probability, factual_mean, generate,
                             oracle_psi, run_study, sample_shifted_outcomes,
                             true_weights)


def main_psi_dblquad(c):
    """Independent two-dimensional quadrature of the main design under
    a constant multiplier ``c``."""
    def dens_part(t, l):
        r = c * math.exp(0.25 * l)
        return math.exp(1 - 1.5 * l - (2 - t)) * r * math.exp(-r * t)

    treated, _ = integrate.dblquad(dens_part, 0, 1, 0, 2, epsabs=1e-11)
    untreated, _ = integrate.quad(
        lambda l: math.exp(1 - 1.5 * l) * math.exp(-2 * c * math.exp(0.25 * l)),
        0, 1, epsabs=1e-12)
    return treated + untreated


def test_generate_is_deterministic():
    a, b = generate(MAIN, 5, 17), generate(MAIN, 5, 17)
    for col in ("y", "t_obs", "delta", "covariates"):
        np.testing.assert_array_equal(getattr(a, col), getattr(b, col))
    assert validate(a) == []


def test_generate_multi_shapes():
    ds = generate(MULTI, 200, 3)
    assert ds.d == 3
    assert set(np.unique(ds.covariates[:, 2])) <= {0.0, 1.0}
    assert validate(ds) == []
    assert np.all(ds.t_obs <= 2.0)


def test_invalid_variant():
    with pytest.raises(ValueError):
        DgpSpec("other")


@pytest.mark.parametrize("theta", [1 / 3, 0.5, 1.0, 2.0, 3.0])
def test_oracle_matches_independent_quadrature(theta):
    assert oracle_psi(MAIN, Constant(theta)) == pytest.approx(
        main_psi_dblquad(theta), abs=1e-9)


@pytest.mark.parametrize("spec", [MAIN, MULTI])
def test_oracle_at_one_is_factual_mean(spec):
    assert oracle_psi(spec, Constant(1)) == pytest.approx(factual_mean(spec),
                                                          abs=1e-8)


@pytest.mark.parametrize("spec", [MAIN, MULTI])
def test_oracle_strictly_decreasing(spec):
    grid = [1 / 3, 1 / 2.5, 1 / 2, 1 / 1.5, 1, 1.5, 2, 2.5, 3]
    vals = [oracle_psi(spec, Constant(c)) for c in grid]
    assert np.all(np.diff(vals) < 0)


def test_event_probability_closed_form():
    direct, _ = integrate.quad(lambda l: 1 - math.exp(-2 * math.exp(0.25 * l)), 0, 1)
    assert event_probability(MAIN) == pytest.approx(direct, abs=1e-12)


def test_event_fraction_large_sample():
    ds = generate(MAIN, 10**6, 77)
    assert abs(ds.delta.mean() - event_probability(MAIN)) < 0.003


def test_outcome_mean_large_sample():
    ds = generate(MAIN, 10**6, 78)
    sd = ds.y.std()
    assert abs(ds.y.mean() - factual_mean(MAIN)) < 3 * sd / math.sqrt(ds.n)


@pytest.mark.parametrize("theta", [Constant(2.0), PiecewiseTime((1.0,), (0.5, 3.0))])
def test_monte_carlo_sampler_agrees_with_oracle(theta):
    y = sample_shifted_outcomes(MAIN, theta, 10**6, 5)
    se = y.std() / math.sqrt(y.size)
    assert abs(y.mean() - oracle_psi(MAIN, theta)) < 3 * se


def test_monte_carlo_sampler_multi():
    theta = MULTI_THETAS[2]
    y = sample_shifted_outcomes(MULTI, theta, 10**6, 6)
    se = y.std() / math.sqrt(y.size)
    assert abs(y.mean() - oracle_psi(MULTI, theta)) < 3 * se


def test_true_weights_identity_and_mean():
    ds = generate(MAIN, 200_000, 8)
    np.testing.assert_array_equal(true_weights(ds, MAIN, Constant(1)), 1.0)
    w = true_weights(ds, MAIN, Constant(2))
    assert abs(w.mean() - 1) < 3 * w.std() / math.sqrt(ds.n)
    wy = w * ds.y
    assert abs(wy.mean() - oracle_psi(MAIN, Constant(2))) < 3 * wy.std() / math.sqrt(ds.n)


def test_multi_loglinear_true_weights():
    ds = generate(MULTI, 200_000, 9)
    w = true_weights(ds, MULTI, LogLinear((0.5, 0.5, 0.5)))
    assert abs(w.mean() - 1) < 3 * w.std() / math.sqrt(ds.n)


def test_small_study_is_finite_and_invariant():
    a = run_study(MAIN, n=150, R=4, B=3, seed=1, workers=1)
    b = run_study(MAIN, n=150, R=4, B=3, seed=1, workers=3)
    assert a.to_json() == b.to_json()
    assert len(a.rows) == len(MAIN_THETAS)
    for row in a.rows:
        assert np.isfinite([row.bias, row.see, row.sd, row.cp]).all()
        assert 0 <= row.cp <= 1
        assert row.pct_bias == pytest.approx(100 * row.bias / row.true_psi)
    assert a.table()[0][1:] == [th.label for th in MAIN_THETAS]


@pytest.mark.slow
def test_small_sample_bias_at_one_third():
    rep = run_study(MAIN, thetas=[Constant(1 / 3)], n=200, R=500, B=0, seed=3)
    row = rep.rows[0]
    assert row.bias < 0
    assert 0.5 <= abs(row.pct_bias) <= 2.5
