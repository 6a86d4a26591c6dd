import json
import math

import numpy as np
import pytest

from hazshift.cox import (CoxFit, DegenerateDesign, NoEvents, NotConverged,
                          cumulative_hazard, fit_cox, partial_derivatives,
                          partial_loglik, schoenfeld)
from hazshift.data import Dataset, DimensionMismatch
from hazshift.simlab import MAIN, generate

from conftest import random_dataset


def closed_form_loglik(t, delta, x, beta):
    """Breslow partial log-likelihood for d = 1, written event by event."""
    ll = 0.0
    for i in range(len(t)):
        if delta[i]:
            risk = [math.exp(beta * x[j]) for j in range(len(t)) if t[j] >= t[i]]
            ll += beta * x[i] - math.log(sum(risk))
    return ll


def grid_argmax(t, delta, x, lo=-10.0, hi=10.0, step=1e-4):
    grid = np.arange(lo, hi + step / 2, step)
    t, delta, x = map(np.asarray, (t, delta, x))
    ll = np.zeros_like(grid)
    for i in np.flatnonzero(delta):
        at_risk = t >= t[i]
        ll += grid * x[i] - np.log(np.exp(np.outer(grid, x[at_risk])).sum(axis=1))
    return grid[np.argmax(ll)]


def test_two_subject_example_is_monotone():
    # events at t=1 (l=0) and t=2 (l=1): L(beta) = 1 / (1 + e^beta) has no
    # interior maximum, so the grid argmax sits on the boundary
    ds = Dataset(y=[0, 0], t_obs=[1.0, 2.0], delta=[1, 1], covariates=[[0.0], [1.0]],
                 tau=3.0)
    assert grid_argmax([1, 2], [1, 1], [0, 1]) == pytest.approx(-10.0)
    fit = fit_cox(ds)
    assert not fit.converged
    assert fit.beta[0] < -10


def test_three_subject_newton_matches_grid():
    t, delta, x = [1.0, 2.0, 3.0], [1, 1, 1], [0.0, 1.0, 0.5]
    ds = Dataset(y=[0] * 3, t_obs=t, delta=delta, covariates=np.c_[x], tau=4.0)
    fit = fit_cox(ds)
    assert fit.converged
    assert fit.beta[0] == pytest.approx(grid_argmax(t, delta, x), abs=1e-3)
    assert fit.loglik == pytest.approx(closed_form_loglik(t, delta, x, fit.beta[0]),
                                       abs=1e-12)


def test_constant_covariate_gives_nelson_aalen():
    t = [0.3, 0.7, 0.7, 1.2, 2.0, 2.0]
    delta = [1, 1, 1, 1, 0, 0]
    ds = Dataset(y=np.zeros(6), t_obs=t, delta=delta, covariates=np.zeros((6, 1)),
                 tau=2.0)
    with pytest.warns(RuntimeWarning):
        fit = fit_cox(ds)
    assert fit.beta[0] == 0.0
    np.testing.assert_array_equal(fit.baseline_times, [0.3, 0.7, 1.2])
    np.testing.assert_allclose(fit.baseline_increments, [1 / 6, 2 / 5, 1 / 3],
                               rtol=1e-15)


def test_no_events():
    ds = Dataset(y=[0, 0], t_obs=[2.0, 2.0], delta=[0, 0], covariates=[[0.1], [0.2]],
                 tau=2.0)
    with pytest.raises(NoEvents):
        fit_cox(ds)


def test_collinear_design(rng):
    ds = random_dataset(rng, 30, 1)
    x = np.c_[ds.covariates, 2 * ds.covariates + 1]
    bad = Dataset(ds.y, ds.t_obs, ds.delta, x, ds.tau)
    with pytest.raises(DegenerateDesign):
        fit_cox(bad)


def test_consistency_on_main_design(main_5000):
    # single draw: compare against the model-based standard error
    fit = fit_cox(main_5000)
    assert fit.converged
    se = 1 / np.sqrt(fit.information[0, 0])
    assert abs(fit.beta[0] - 0.25) < 3 * se


def test_beta_is_unbiased_across_replications():
    betas = [fit_cox(generate(MAIN, 2000, 500 + r)).beta[0] for r in range(40)]
    se = np.std(betas, ddof=1) / np.sqrt(len(betas))
    assert abs(np.mean(betas) - 0.25) < 3 * se


def test_cumulative_hazard_examples():
    fit = CoxFit(beta=np.array([math.log(2)]), baseline_times=np.array([0.5]),
                 baseline_increments=np.array([0.5]), loglik=0.0, n_iter=0,
                 converged=True)
    assert cumulative_hazard(fit, 0.2, [1.0]) == 0.0
    assert cumulative_hazard(fit, 0.5, [1.0]) == pytest.approx(1.0, rel=1e-15)
    assert cumulative_hazard(fit, 1.0, [1.0]) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(DimensionMismatch):
        cumulative_hazard(fit, 1.0, [1.0, 2.0])


def test_cumulative_hazard_beta_zero_total_mass():
    t = [0.3, 0.7, 1.2, 2.0]
    ds = Dataset(np.zeros(4), t, [1, 1, 1, 0], np.zeros((4, 1)), 2.0)
    with pytest.warns(RuntimeWarning):
        fit = fit_cox(ds)
    assert cumulative_hazard(fit, 5.0, [0.7]) == pytest.approx(1 / 4 + 1 / 3 + 1 / 2)


@pytest.mark.parametrize("seed", range(5))
def test_score_vanishes_and_information_psd(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 60, 3)
    fit = fit_cox(ds)
    assert fit.converged
    _, score, info = partial_derivatives(ds, fit.beta)
    assert np.max(np.abs(score)) < 1e-8
    assert np.all(np.linalg.eigvalsh(info) >= -1e-12)
    assert np.all(fit.baseline_increments > 0)
    cum = fit.baseline_cumhaz(np.linspace(0, 2, 50))
    assert np.all(np.diff(cum) >= 0)
    assert fit.baseline_cumhaz(0.0) == 0.0


@pytest.mark.parametrize("seed", range(8))
def test_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    n, d = int(rng.integers(4, 21)), int(rng.integers(1, 4))
    ds = random_dataset(rng, n, d, ties=bool(seed % 2))
    w = rng.exponential(size=n) if seed % 3 else None
    beta = rng.normal(scale=0.5, size=d)
    h = 1e-5
    _, score, info = partial_derivatives(ds, beta, w)
    num_grad = np.empty(d)
    num_hess = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        num_grad[j] = (partial_loglik(ds, beta + e, w)
                       - partial_loglik(ds, beta - e, w)) / (2 * h)
        num_hess[j] = (partial_derivatives(ds, beta + e, w)[1]
                       - partial_derivatives(ds, beta - e, w)[1]) / (2 * h)
    scale = max(1.0, np.abs(score).max())
    np.testing.assert_allclose(score, num_grad, rtol=1e-4, atol=1e-4 * scale)
    np.testing.assert_allclose(-info, num_hess, rtol=1e-4,
                               atol=1e-4 * np.abs(info).max())


def test_constant_case_weights_leave_fit_unchanged(rng):
    ds = random_dataset(rng, 40, 2)
    base = fit_cox(ds)
    for c in (0.3, 1.0, 7.5):
        fit = fit_cox(ds, case_weights=np.full(ds.n, c))
        np.testing.assert_array_equal(fit.beta, base.beta)
        np.testing.assert_array_equal(fit.baseline_increments,
                                      base.baseline_increments)


def test_weighted_fit_matches_replicated_rows(rng):
    # integer case weights equal duplicating rows (Breslow ties)
    ds = random_dataset(rng, 15, 1)
    w = rng.integers(1, 4, size=ds.n)
    rep = np.repeat(np.arange(ds.n), w)
    big = Dataset(ds.y[rep], ds.t_obs[rep], ds.delta[rep], ds.covariates[rep], ds.tau)
    a, b = fit_cox(ds, case_weights=w), fit_cox(big)
    np.testing.assert_allclose(a.beta, b.beta, rtol=1e-8)
    np.testing.assert_allclose(a.baseline_increments, b.baseline_increments,
                               rtol=1e-8)
    assert a.loglik == pytest.approx(b.loglik, rel=1e-10)


def test_invalid_case_weights(rng):
    ds = random_dataset(rng, 10, 1)
    with pytest.raises(ValueError):
        fit_cox(ds, case_weights=np.r_[0.0, np.ones(9)])
    with pytest.raises(DimensionMismatch):
        fit_cox(ds, case_weights=np.ones(3))


def test_json_round_trip(rng):
    fit = fit_cox(random_dataset(rng, 25, 2))
    obj = json.loads(json.dumps(fit.to_json()))
    assert set(obj) == {"beta", "baseline", "loglik", "converged", "n_iter"}
    back = CoxFit.from_json(obj)
    np.testing.assert_array_equal(back.beta, fit.beta)
    np.testing.assert_array_equal(back.baseline_increments, fit.baseline_increments)


def test_schoenfeld_hand_example():
    ds = Dataset(y=[0, 0], t_obs=[1.0, 1.5], delta=[1, 1],
                 covariates=[[0.0], [1.0]], tau=2.0)
    fit = CoxFit(beta=np.zeros(1), baseline_times=np.array([1.0, 1.5]),
                 baseline_increments=np.array([0.5, 1.0]), loglik=0.0, n_iter=0,
                 converged=True)
    rep = schoenfeld(ds, fit)
    np.testing.assert_allclose(rep.residuals[:, 0], [-0.5, 0.0], atol=1e-15)
    np.testing.assert_array_equal(rep.record_index, [0, 1])


def test_schoenfeld_residuals_sum_to_score(rng):
    ds = random_dataset(rng, 80, 2)
    fit = fit_cox(ds)
    rep = schoenfeld(ds, fit)
    assert rep.residuals.shape == (int(ds.delta.sum()), 2)
    assert np.max(np.abs(rep.residuals.sum(axis=0))) < 1e-6
    assert 0 <= rep.global_p_value <= 1
    assert rep.global_df == 2


def test_schoenfeld_detects_non_proportional_hazards():
    # the covariate effect reverses sign half way: PH is badly violated
    rng = np.random.default_rng(3)
    n = 800
    x = rng.binomial(1, 0.5, n).astype(float)
    e = rng.exponential(size=n)
    early = np.where(x == 1, 3.0, 0.5)
    late = np.where(x == 1, 0.5, 3.0)
    t = np.where(e < early * 0.5, e / early, 0.5 + (e - early * 0.5) / late)
    delta = (t < 2).astype(int)
    ds = Dataset(np.zeros(n), np.minimum(t, 2), delta, x[:, None], 2.0)
    rep = schoenfeld(ds, fit_cox(ds))
    assert rep.global_p_value < 1e-6


def test_schoenfeld_requires_convergence():
    fit = CoxFit(np.zeros(1), np.array([1.0]), np.array([1.0]), 0.0, 50, False)
    ds = Dataset([0], [1.0], [1], [[0.0]], 2.0)
    with pytest.raises(NotConverged):
        schoenfeld(ds, fit)
