"""Kaplan-Meier estimate of the treatment-initiation distribution."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .data import Dataset


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function with optional pointwise bands.

    Evaluating at ``t`` returns the value at the largest grid time ``<= t``;
    before the first grid time it returns ``origin``.
    """

    times: np.ndarray
    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    origin: float = 1.0

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("step-curve times must be strictly increasing")

    def __call__(self, t):
        k = np.searchsorted(self.times, np.asarray(t, float), side="right")
        if self.times.size == 0:
            out = np.full(np.shape(k), self.origin)
        else:
            out = np.where(k > 0, self.values[np.maximum(k - 1, 0)], self.origin)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KaplanMeier:
    """Product-limit survival ``S(t) = P(T > t)`` and its complement.

    ``variance`` holds Greenwood's estimate of ``Var S(t)`` on the same grid.
    ``has_bands`` is False when the data contain no events.
    """

    survival: StepCurve
    cdf: StepCurve
    at_risk: np.ndarray
    events: np.ndarray
    variance: np.ndarray
    has_bands: bool

    def to_csv(self, path: str | Path) -> None:
        """Write ``t,estimate,lower,upper`` for ``P(T <= t)``, starting at 0."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "estimate", "lower", "upper"])
            w.writerow([0.0, 0.0, 0.0, 0.0])
            c = self.cdf
            for i, t in enumerate(c.times):
                lo = c.lower[i] if c.lower is not None else ""
                hi = c.upper[i] if c.upper is not None else ""
                w.writerow([repr(float(t)), repr(float(c.values[i])),
                            lo if lo == "" else repr(float(lo)),
                            hi if hi == "" else repr(float(hi))])


def kaplan_meier(ds: Dataset, level: float = 0.95) -> KaplanMeier:
    """Kaplan-Meier curve of the treatment time with log-log Greenwood bands.

    Records censored at the horizon only enter the risk sets. Tied event
    times produce one jump. With no events the survival curve is flat at 1
    and ``has_bands`` is False.
    """
    t = ds.t_obs
    ev = ds.delta == 1
    times = np.unique(t[ev])
    if times.size == 0:
        empty = np.zeros(0)
        return KaplanMeier(
            survival=StepCurve(empty, empty, origin=1.0),
            cdf=StepCurve(empty, empty, origin=0.0),
            at_risk=empty, events=empty, variance=empty, has_bands=False)

    ts = np.sort(t)
    at_risk = (ts.size - np.searchsorted(ts, times, side="left")).astype(float)
    te = np.sort(t[ev])
    d = (np.searchsorted(te, times, side="right")
         - np.searchsorted(te, times, side="left")).astype(float)
    surv, cdf = _product_limit(at_risk, d)

    with np.errstate(divide="ignore", invalid="ignore"):
        gw = np.cumsum(d / (at_risk * (at_risk - d)))
        var = surv ** 2 * gw
        z = stats.norm.ppf(0.5 + level / 2)
        log_s = np.log(surv)
        se = np.sqrt(gw) / np.abs(log_s)
        lo = surv ** np.exp(z * se)
        hi = surv ** np.exp(-z * se)
    dead = surv <= 0
    lo = np.where(dead, 0.0, lo)
    hi = np.where(dead, 0.0, hi)
    var = np.where(np.isfinite(var), var, 0.0)
    lo = np.clip(lo, 0.0, 1.0)
    hi = np.clip(hi, 0.0, 1.0)

    survival = StepCurve(times, surv, lo, hi, origin=1.0)
    cdf = StepCurve(times, cdf, 1.0 - hi, 1.0 - lo, origin=0.0)
    return KaplanMeier(survival, cdf, at_risk, d, var, True)


def _product_limit(at_risk: np.ndarray, d: np.ndarray):
    """Survival and its complement at the event times.

    Between censorings the product telescopes, ``prod (m - D_j)/m_j =
    (m - D)/m``, so each censoring-free stretch is evaluated as one ratio.
    Without censoring this reproduces the empirical CDF exactly.
    """
    surv = np.empty_like(d)
    cdf = np.empty_like(d)
    s_seg, f_seg = 1.0, 0.0
    m = at_risk[0]
    died = 0.0
    for j in range(d.size):
        if j and at_risk[j] != at_risk[j - 1] - d[j - 1]:
            # censoring since the previous event: start a new stretch
            s_seg, f_seg = surv[j - 1], cdf[j - 1]
            m, died = at_risk[j], 0.0
        died += d[j]
        surv[j] = s_seg * (m - died) / m
        cdf[j] = f_seg + s_seg * died / m
    return surv, cdf
