"""Simulation designs, a quadrature oracle for the true effect, and the
Monte-Carlo study runner.

Two designs are provided, both with horizon 2, exponential treatment times
and normal outcomes with sd 0.5:

``main``
    L ~ U(0, 1); hazard exp(0.25 L); E[Y|T, L] = exp(1 - 1.5 L - (2 - T^2)).
``multi``
    L1 ~ U(0, 1), L2 ~ N(0.5, 0.25^2), L3 ~ Bernoulli(0.5);
    hazard exp(0.1 L1 + 0.05 L2 + 0.1 L3);
    E[Y|T, L] = exp(1 - (0.6 L1 + 0.3 L2 + 0.6 L3) - (2 - T^2)).

(``T^2`` above is ``min(T, 2)``.)
"""

from __future__ import annotations

import functools
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .cox import CoxError, fit_cox
from .data import Dataset
from .effect import Constant, LogLinear, ThetaSpec, psi_hat
from .inference import TooFewReplicates, Z95, effect_curve, seed_sequence

log = logging.getLogger(__name__)

TAU = 2.0
OUTCOME_SD = 0.5
#: half-width, in standard deviations, of the normal covariate's quadrature range
NORMAL_TRUNCATION = 8.0


class QuadratureNonConvergence(ArithmeticError):
    pass


@dataclass(frozen=True)
class DgpSpec:
    """One of the two simulation designs, ``"main"`` or ``"multi"``."""

    variant: str
    hazard_coef: tuple[float, ...] = field(init=False)
    outcome_coef: tuple[float, ...] = field(init=False)
    tau: float = field(init=False, default=TAU)

    def __post_init__(self):
        if self.variant == "main":
            hz, oc = (0.25,), (1.5,)
        elif self.variant == "multi":
            hz, oc = (0.1, 0.05, 0.1), (0.6, 0.3, 0.6)
        else:
            raise ValueError(f"unknown design {self.variant!r}; use 'main' or 'multi'")
        object.__setattr__(self, "hazard_coef", hz)
        object.__setattr__(self, "outcome_coef", oc)

    @property
    def d(self) -> int:
        return len(self.hazard_coef)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(f"l{j + 1}" for j in range(self.d))

    def rate(self, l) -> np.ndarray:
        return np.exp(np.asarray(l, float) @ np.asarray(self.hazard_coef))

    def outcome_mean(self, t, l) -> np.ndarray:
        lin = np.asarray(l, float) @ np.asarray(self.outcome_coef)
        return np.exp(1.0 - lin - (self.tau - np.minimum(t, self.tau)))

    def sample_covariates(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.variant == "main":
            return rng.uniform(0.0, 1.0, size=(n, 1))
        l1 = rng.uniform(0.0, 1.0, size=n)
        l2 = rng.normal(0.5, 0.25, size=n)
        l3 = rng.binomial(1, 0.5, size=n).astype(float)
        return np.column_stack([l1, l2, l3])

    def true_cumhaz(self, t, l) -> np.ndarray:
        return self.rate(l) * np.asarray(t, float)


MAIN = DgpSpec("main")
MULTI = DgpSpec("multi")

MAIN_THETAS: tuple[ThetaSpec, ...] = tuple(
    Constant(c) for c in (1 / 3, 1 / 2.5, 1 / 2, 1 / 1.5, 1.5, 2.0, 2.5, 3.0))
MULTI_THETAS: tuple[ThetaSpec, ...] = tuple(LogLinear(b) for b in (
    (0.1, 0.1, 0.1), (0.2, 0.2, 0.2), (0.5, 0.5, 0.5),
    (0.1, 0.2, 0.5), (0.1, 0.5, 0.2), (0.2, 0.1, 0.5),
    (0.2, 0.5, 0.1), (0.5, 0.1, 0.2), (0.5, 0.2, 0.1)))


def default_thetas(spec: DgpSpec) -> tuple[ThetaSpec, ...]:
    return MAIN_THETAS if spec.variant == "main" else MULTI_THETAS


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed) if not isinstance(
        seed, np.random.SeedSequence) else seed)


def generate(spec: DgpSpec, n: int, seed) -> Dataset:
    """Draw ``n`` i.i.d. records; treatment times by inverse-CDF sampling."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = _rng(seed)
    l = spec.sample_covariates(rng, n)
    u = rng.uniform(size=n)
    t = -np.log1p(-u) / spec.rate(l)
    t_obs = np.minimum(t, spec.tau)
    delta = (t < spec.tau).astype(int)
    y = spec.outcome_mean(t_obs, l) + OUTCOME_SD * rng.standard_normal(n)
    return Dataset(y=y, t_obs=t_obs, delta=delta, covariates=l, tau=spec.tau,
                   covariate_names=spec.covariate_names)


def _quad(f, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(f, a, b, limit=200, **kw)[0]
        except integrate.IntegrationWarning as exc:
            raise QuadratureNonConvergence(str(exc)) from None


def _covariate_expectation(spec: DgpSpec, g, epsabs: float) -> float:
    """``E_L g(L)`` by nested quadrature (exact sum over the binary covariate)."""
    if spec.variant == "main":
        return _quad(lambda a: g(np.array([a])), 0.0, 1.0, epsabs=epsabs)
    mu, sd = 0.5, 0.25
    lo, hi = mu - NORMAL_TRUNCATION * sd, mu + NORMAL_TRUNCATION * sd
    total = 0.0
    for l3 in (0.0, 1.0):
        def over_l2(l1, l3=l3):
            return _quad(lambda l2: g(np.array([l1, l2, l3]))
                         * stats.norm.pdf(l2, mu, sd), lo, hi,
                         epsabs=epsabs / 10, points=[mu])
        total += 0.5 * _quad(over_l2, 0.0, 1.0, epsabs=epsabs / 2)
    return total


@functools.lru_cache(maxsize=256)
def oracle_psi(spec: DgpSpec, theta: ThetaSpec, epsabs: float = 1e-9) -> float:
    """True mean outcome when the treatment hazard is multiplied by ``theta``.

    For fixed covariates the shifted hazard is ``R a(t)`` with
    ``R = b(l) rate(l)``, so the survival of the shifted treatment time is
    ``exp(-R A(t))`` with ``A`` the integral of the time factor. The mean
    outcome splits into the density part on ``[0, tau)`` and the point mass
    of never being treated before ``tau``.
    """
    tau = spec.tau
    breaks, _ = theta.time_pieces()
    pts = [float(b) for b in breaks if 0 < b < tau] or None

    def given_l(l):
        r = float(spec.rate(l)) * float(theta.covariate_factor(l)[0])

        def integrand(t):
            return (float(spec.outcome_mean(t, l)) * r
                    * float(theta.time_factor(t))
                    * np.exp(-r * float(theta.time_integral(t))))

        treated = _quad(integrand, 0.0, tau, epsabs=epsabs / 10,
                        epsrel=1e-11, points=pts)
        untreated = float(spec.outcome_mean(tau, l)) * np.exp(
            -r * float(theta.time_integral(tau)))
        return treated + untreated

    return _covariate_expectation(spec, given_l, epsabs)


def factual_mean(spec: DgpSpec, epsabs: float = 1e-9) -> float:
    """``E[Y]`` under the observed law, integrating over the quantile of T."""
    tau = spec.tau

    def given_l(l):
        r = float(spec.rate(l))
        u_tau = -np.expm1(-r * tau)  # P(T < tau | l)

        def mean_at(u):
            t = -np.log1p(-u) / r
            return float(spec.outcome_mean(t, l))

        return (_quad(mean_at, 0.0, u_tau, epsabs=epsabs / 10)
                + (1 - u_tau) * float(spec.outcome_mean(tau, l)))

    return _covariate_expectation(spec, given_l, epsabs)


def event_probability(spec: DgpSpec, epsabs: float = 1e-10) -> float:
    """``P(T < tau)``."""
    return _covariate_expectation(
        spec, lambda l: -np.expm1(-float(spec.rate(l)) * spec.tau), epsabs)


def _inverse_time_integral(theta: ThetaSpec, h: np.ndarray) -> np.ndarray:
    breaks, levels = theta.time_pieces()
    knots = np.concatenate([[0.0], breaks])
    cum = theta.time_integral(knots)
    k = np.searchsorted(cum, h, side="right") - 1
    return knots[k] + (h - cum[k]) / levels[k]


def sample_shifted_outcomes(spec: DgpSpec, theta: ThetaSpec, m: int,
                            seed) -> np.ndarray:
    """Draw outcomes with the treatment time from the shifted hazard.

    Treatment times are obtained by inverting the shifted cumulative hazard
    at a standard-exponential draw. Used as a Monte-Carlo check of
    :func:`oracle_psi`.
    """
    rng = _rng(seed)
    l = spec.sample_covariates(rng, m)
    r = spec.rate(l) * theta.covariate_factor(l)
    t = _inverse_time_integral(theta, rng.standard_exponential(m) / r)
    return spec.outcome_mean(np.minimum(t, spec.tau), l) + \
        OUTCOME_SD * rng.standard_normal(m)


def true_weights(ds: Dataset, spec: DgpSpec, theta: ThetaSpec) -> np.ndarray:
    """Radon-Nikodym weights computed from the generating hazard."""
    l = ds.covariates
    r = spec.rate(l)
    b = theta.covariate_factor(l)
    integral = r * (b * theta.time_integral(ds.t_obs) - ds.t_obs)
    lead = np.where(ds.delta == 1, theta.time_factor(ds.t_obs) * b, 1.0)
    return lead * np.exp(-integral)


@dataclass(frozen=True)
class StudyRow:
    theta: ThetaSpec
    true_psi: float
    mean_psi: float
    bias: float
    pct_bias: float
    see: float
    sd: float
    cp: float
    n_ok: int

    def to_json(self) -> dict:
        return {"theta": self.theta.to_json(), "label": self.theta.label,
                "true_psi": self.true_psi, "mean_psi": self.mean_psi,
                "bias": self.bias, "pct_bias": self.pct_bias,
                "see": self.see, "sd": self.sd, "cp": self.cp,
                "n_ok": self.n_ok}


@dataclass(frozen=True)
class StudyReport:
    design: str
    rows: tuple[StudyRow, ...]
    R: int
    n: int
    B: int
    seed: int
    failures: int
    dropped_replicates: int
    estimates: np.ndarray = field(repr=False, compare=False)
    std_errors: np.ndarray = field(repr=False, compare=False)

    def row(self, label: str) -> StudyRow:
        for r in self.rows:
            if r.theta.label == label:
                return r
        raise KeyError(label)

    def to_json(self) -> dict:
        return {"design": self.design, "R": self.R, "n": self.n, "B": self.B,
                "seed": self.seed, "failures": self.failures,
                "dropped_replicates": self.dropped_replicates,
                "rows": [r.to_json() for r in self.rows]}

    def table(self) -> list[list[str]]:
        """Rows of the printed layout: one column per intervention."""
        def f(v):
            return f"{v:.6g}"
        head = ["", *(r.theta.label for r in self.rows)]
        return [
            head,
            ["psi", *(f(r.true_psi) for r in self.rows)],
            ["Bias(x1e-2)", *(f(100 * r.bias) for r in self.rows)],
            ["%Bias", *(f(r.pct_bias) for r in self.rows)],
            ["SEE(x1e-2)", *(f(100 * r.see) for r in self.rows)],
            ["SD(x1e-2)", *(f(100 * r.sd) for r in self.rows)],
            ["95% CP", *(f(100 * r.cp) for r in self.rows)],
        ]


def _one_replication(spec, thetas, n, B, seed, r):
    """Estimates and standard errors for replication ``r``; None on failure."""
    ds = generate(spec, n, seed_sequence(seed, r, 0))
    try:
        fit = fit_cox(ds)
        if not fit.converged:
            return None
        if B >= 2:
            ests = effect_curve(ds, thetas, B, seed=seed, fit=fit,
                                key=(r, 1))
            return (np.array([e.psi_hat for e in ests]),
                    np.array([e.se for e in ests]),
                    sum(e.dropped for e in ests) // len(ests))
        pts = np.array([psi_hat(ds, fit, th) for th in thetas])
        return pts, np.full(len(thetas), np.nan), 0
    except (CoxError, TooFewReplicates, ArithmeticError) as exc:
        log.info("replication %d failed: %s", r, exc)
        return None


def _replication_block(spec, thetas, n, B, seed, rs):
    return [(r, _one_replication(spec, thetas, n, B, seed, r)) for r in rs]


def run_study(spec: DgpSpec, thetas: Sequence[ThetaSpec] | None = None,
              n: int = 1000, R: int = 500, B: int = 200, seed: int = 0,
              workers: int = 1, truth: Sequence[float] | None = None
              ) -> StudyReport:
    """Monte-Carlo study of the estimator and its bootstrap intervals.

    Replication ``r`` generates its data and multipliers from generators
    keyed on ``(seed, r)``; the report is identical for any ``workers``.
    ``B < 2`` skips the bootstrap (``sd`` and ``cp`` are then NaN).
    """
    if R < 2:
        raise ValueError("R must be at least 2")
    thetas = tuple(thetas or default_thetas(spec))
    t0 = time.perf_counter()
    truth = (np.asarray(truth, float) if truth is not None
             else np.array([oracle_psi(spec, th) for th in thetas]))
    rs = list(range(R))
    if workers <= 1:
        results = _replication_block(spec, thetas, n, B, seed, rs)
    else:
        results = []
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_replication_block, spec, thetas, n, B, seed,
                              rs[i::workers]) for i in range(workers)]
            for fut in futs:
                results.extend(fut.result())
    results.sort(key=lambda item: item[0])
    ok = [res for _, res in results if res is not None]
    failures = R - len(ok)
    if len(ok) < 2:
        raise RuntimeError(f"only {len(ok)} of {R} replications succeeded")
    est = np.array([o[0] for o in ok])
    se = np.array([o[1] for o in ok])
    dropped = int(sum(o[2] for o in ok))
    rows = []
    for j, th in enumerate(thetas):
        e, s = est[:, j], se[:, j]
        bias = float(e.mean() - truth[j])
        cover = np.abs(e - truth[j]) <= Z95 * s
        rows.append(StudyRow(
            theta=th, true_psi=float(truth[j]), mean_psi=float(e.mean()),
            bias=bias, pct_bias=100 * bias / float(truth[j]),
            see=float(e.std(ddof=1)), sd=float(s.mean()),
            cp=float(cover.mean()) if B >= 2 else float("nan"),
            n_ok=int(e.shape[0])))
    log.info("study %s n=%d R=%d B=%d finished in %.1fs", spec.variant, n, R,
             B, time.perf_counter() - t0)
    return StudyReport(spec.variant, tuple(rows), R, n, B, seed, failures,
                       dropped, est, se)
