"""Cox proportional-hazards fitting with a Breslow baseline.

The partial likelihood uses the Breslow convention for ties and accepts
positive case weights, so the same routine serves the point fit and every
multiplier-bootstrap refit. Covariates are centred internally; coefficients
and baseline increments are reported on the original scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset, DimensionMismatch


class CoxError(RuntimeError):
    pass


class NoEvents(CoxError):
    pass


class DegenerateDesign(CoxError):
    pass


class NotConverged(CoxError):
    pass


MAX_ITER = 50
REL_LOGLIK_TOL = 1e-9
SCORE_TOL = 1e-8
COND_LIMIT = 1e10
#: |beta| beyond this flags a monotone likelihood (separable data)
BETA_LIMIT = 15.0


@dataclass(frozen=True)
class RiskSetIndex:
    """Sort order and tie groups of the observed times.

    ``first[k]`` is the position (in ascending time order) where the risk set
    of the k-th distinct event time starts; ``event_pos`` lists sorted
    positions of the events, grouped by ``group_start``.
    """

    order: np.ndarray
    times: np.ndarray
    event_times: np.ndarray
    first: np.ndarray
    event_pos: np.ndarray
    group_start: np.ndarray

    @classmethod
    def build(cls, t_obs, delta) -> "RiskSetIndex":
        order = np.argsort(t_obs, kind="stable")
        ts = np.asarray(t_obs)[order]
        ev = np.asarray(delta)[order] == 1
        event_pos = np.flatnonzero(ev)
        et = ts[event_pos]
        uniq, group_start = np.unique(et, return_index=True)
        first = np.searchsorted(ts, uniq, side="left")
        return cls(order, ts, uniq, first, event_pos, group_start)

    @property
    def n_events(self) -> int:
        return self.event_pos.shape[0]


def _revcumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


class _PartialLikelihood:
    """Weighted Breslow partial log-likelihood with derivatives.

    Works on centred covariates in sorted order; ``w`` is in original order.
    """

    def __init__(self, idx: RiskSetIndex, x: np.ndarray, w: np.ndarray):
        self.idx = idx
        self.x = x[idx.order]
        self.w = w[idx.order]
        ep, gs = idx.event_pos, idx.group_start
        self.w_ev = self.w[ep]
        self.dk = np.add.reduceat(self.w_ev, gs) if ep.size else np.zeros(0)
        self.wx_ev = (self.w_ev[:, None] * self.x[ep]).sum(axis=0)

    def risk_sums(self, beta, order=2):
        eta = self.x @ beta
        shift = eta.max() if eta.size else 0.0
        e = self.w * np.exp(eta - shift)
        first = self.idx.first
        s0 = _revcumsum(e)[first]
        s1 = s2 = None
        if order >= 1:
            s1 = _revcumsum(e[:, None] * self.x)[first]
        if order >= 2:
            xx = self.x[:, :, None] * self.x[:, None, :]
            s2 = _revcumsum(e[:, None, None] * xx)[first]
        return eta, shift, s0, s1, s2

    def loglik(self, beta):
        eta, shift, s0, _, _ = self.risk_sums(beta, order=0)
        return float(self.w_ev @ eta[self.idx.event_pos]
                     - self.dk @ (np.log(s0) + shift))

    def derivatives(self, beta):
        """Return ``(loglik, score, information)`` at ``beta``."""
        eta, shift, s0, s1, s2 = self.risk_sums(beta)
        ll = float(self.w_ev @ eta[self.idx.event_pos]
                   - self.dk @ (np.log(s0) + shift))
        xbar = s1 / s0[:, None]
        score = self.wx_ev - self.dk @ xbar
        info = np.einsum("k,kij->ij", self.dk / s0, s2) - np.einsum(
            "k,ki,kj->ij", self.dk, xbar, xbar)
        return ll, score, info

    def breslow(self, beta):
        _, shift, s0, _, _ = self.risk_sums(beta, order=0)
        # increments at the centred covariate value; caller rescales
        return self.dk / s0 * np.exp(-shift)


def partial_loglik(ds: Dataset, beta, case_weights=None) -> float:
    """Breslow partial log-likelihood on the original covariate scale."""
    w = np.ones(ds.n) if case_weights is None else np.asarray(case_weights, float)
    return _PartialLikelihood(ds.risk_index, ds.covariates, w).loglik(
        np.asarray(beta, float))


def partial_derivatives(ds: Dataset, beta, case_weights=None):
    """``(loglik, score, observed information)`` on the original scale."""
    w = np.ones(ds.n) if case_weights is None else np.asarray(case_weights, float)
    return _PartialLikelihood(ds.risk_index, ds.covariates, w).derivatives(
        np.asarray(beta, float))


@dataclass(frozen=True)
class CoxFit:
    """Fitted coefficients and Breslow baseline cumulative hazard.

    ``baseline_increments[k]`` is the jump of the baseline cumulative hazard
    at ``baseline_times[k]`` for a subject with all covariates zero.
    """

    beta: np.ndarray
    baseline_times: np.ndarray
    baseline_increments: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    information: np.ndarray | None = None
    n_events: int = 0

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    def baseline_cumhaz(self, t) -> np.ndarray:
        """Right-continuous baseline cumulative hazard at times ``t``."""
        cum = np.cumsum(self.baseline_increments)
        k = np.searchsorted(self.baseline_times, np.asarray(t, float),
                            side="right")
        return np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)

    def linear_predictor(self, l) -> np.ndarray:
        l = np.asarray(l, float)
        if l.shape[-1] != self.d:
            raise DimensionMismatch(
                f"covariate vector has length {l.shape[-1]}, fit has {self.d}")
        return l @ self.beta

    def to_json(self) -> dict:
        return {
            "beta": [float(b) for b in self.beta],
            "baseline": [[float(t), float(h)] for t, h in
                         zip(self.baseline_times, self.baseline_increments)],
            "loglik": self.loglik,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CoxFit":
        base = np.array(obj["baseline"], dtype=float).reshape(-1, 2)
        return cls(beta=np.array(obj["beta"], dtype=float),
                   baseline_times=base[:, 0], baseline_increments=base[:, 1],
                   loglik=float(obj["loglik"]), n_iter=int(obj["n_iter"]),
                   converged=bool(obj["converged"]),
                   n_events=base.shape[0])


def cumulative_hazard(fit: CoxFit, t, l) -> float | np.ndarray:
    """Conditional cumulative hazard ``Lambda0(t) * exp(beta' l)``."""
    out = fit.baseline_cumhaz(t) * np.exp(fit.linear_predictor(l))
    return float(out) if np.ndim(out) == 0 else out


def _check_design(xc: np.ndarray) -> np.ndarray:
    """Return the mask of non-constant columns; raise on collinearity."""
    scale = np.sqrt((xc ** 2).sum(axis=0))
    varying = scale > 1e-12 * max(1.0, float(np.abs(xc).max(initial=0.0)))
    if varying.any():
        z = xc[:, varying] / scale[varying]
        cond = np.linalg.cond(z.T @ z)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise DegenerateDesign(
                f"collinear covariates (condition number {cond:.3g})")
    return varying


def fit_cox(ds: Dataset, case_weights=None, init=None,
            max_iter: int = MAX_ITER) -> CoxFit:
    """Fit a Cox model by Newton-Raphson with step halving.

    Parameters
    ----------
    ds : Dataset
    case_weights : array_like, optional
        Strictly positive per-record weights multiplying each record's
        contribution to the partial likelihood and the Breslow sums.
    init : array_like, optional
        Starting coefficients (zero by default).

    Returns
    -------
    CoxFit
        ``converged`` is False when the iteration cap is hit or the
        coefficients run off to infinity (monotone likelihood); the fit is
        still returned so callers can decide what to do.

    Notes
    -----
    Constant covariate columns carry no information; their coefficient is
    pinned at zero and a warning is emitted.
    """
    idx = ds.risk_index
    if idx.n_events == 0:
        raise NoEvents("no treatment events (all delta = 0)")
    if case_weights is None:
        w = np.ones(ds.n)
    else:
        w = np.asarray(case_weights, dtype=float)
        if w.shape != (ds.n,):
            raise DimensionMismatch(f"case_weights must have length {ds.n}")
        if not np.all(np.isfinite(w) & (w > 0)):
            raise ValueError("case_weights must be finite and strictly positive")
        # weights cancel in every ratio; normalising keeps constant weights exact
        w = w / w.max()

    x = ds.covariates
    xmean = x.mean(axis=0)
    xc = x - xmean
    active = _check_design(xc)
    if not active.all():
        bad = [ds.covariate_names[j] for j in np.flatnonzero(~active)]
        warnings.warn(f"constant covariate(s) {bad}; coefficient fixed at 0",
                      RuntimeWarning, stacklevel=2)
    pl = _PartialLikelihood(idx, xc[:, active], w)

    beta = np.zeros(int(active.sum()))
    if init is not None:
        beta = np.asarray(init, dtype=float)[active].copy()
    ll, score, info = pl.derivatives(beta)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        if beta.size == 0 or np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            n_iter -= 1
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            break
        ll_new = -np.inf
        for _ in range(30):
            cand = beta + step
            ll_new = pl.loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            break
        beta = cand
        ll_prev = ll
        ll, score, info = pl.derivatives(beta)
        if (np.max(np.abs(score)) < SCORE_TOL
                or abs(ll - ll_prev) < REL_LOGLIK_TOL * abs(ll_prev)):
            converged = True
            break
        if np.max(np.abs(beta)) > BETA_LIMIT:
            break
    if beta.size and np.max(np.abs(beta)) > BETA_LIMIT:
        converged = False
    elif converged and beta.size:
        # a stall in the log-likelihood can leave a small residual score
        for _ in range(3):
            if np.max(np.abs(score)) < SCORE_TOL:
                break
            try:
                cand = beta + np.linalg.solve(info, score)
            except np.linalg.LinAlgError:
                break
            got = pl.derivatives(cand)
            if not got[0] >= ll - 1e-12 * abs(ll):
                break
            beta, (ll, score, info) = cand, got
            n_iter += 1

    full = np.zeros(ds.d)
    full[active] = beta
    inc = pl.breslow(beta) * np.exp(-(xmean @ full))
    info_full = np.zeros((ds.d, ds.d))
    info_full[np.ix_(active, active)] = info
    if case_weights is not None:
        ll = _PartialLikelihood(idx, xc, np.asarray(case_weights, float)).loglik(full)
    return CoxFit(beta=full, baseline_times=idx.event_times,
                  baseline_increments=inc, loglik=ll, n_iter=n_iter,
                  converged=converged, information=info_full,
                  n_events=idx.n_events)


@dataclass(frozen=True)
class SchoenfeldReport:
    """Schoenfeld residuals and proportional-hazards tests.

    ``residuals`` has one row per event (ordered by event time, ties by
    record index; ``record_index`` maps rows back to the dataset). ``rho`` is
    the correlation of each covariate's scaled residuals with the event-time
    rank; ``chisq``/``p_value`` are the per-covariate 1-df tests and
    ``global_chisq``/``global_p_value`` the joint d-df test.
    """

    covariate_names: tuple[str, ...]
    event_times: np.ndarray
    record_index: np.ndarray
    residuals: np.ndarray
    rho: np.ndarray
    chisq: np.ndarray
    p_value: np.ndarray
    global_chisq: float
    global_p_value: float
    global_df: int

    def to_json(self) -> dict:
        return {
            "covariates": list(self.covariate_names),
            "tests": [
                {"covariate": c, "rho": float(r), "chisq": float(z),
                 "p_value": float(p)}
                for c, r, z, p in zip(self.covariate_names, self.rho,
                                      self.chisq, self.p_value)],
            "global": {"chisq": self.global_chisq, "df": self.global_df,
                       "p_value": self.global_p_value},
            "n_events": int(self.residuals.shape[0]),
        }


def schoenfeld(ds: Dataset, fit: CoxFit) -> SchoenfeldReport:
    """Schoenfeld residuals at the fitted coefficients and the
    Grambsch-Therneau style test against rank-transformed event time."""
    if not fit.converged:
        raise NotConverged("Schoenfeld residuals need a converged fit")
    idx = ds.risk_index
    x = ds.covariates[idx.order]
    eta = x @ fit.beta
    e = np.exp(eta - eta.max())
    s0 = _revcumsum(e)
    s1 = _revcumsum(e[:, None] * x)
    ep = idx.event_pos
    # risk set of each event starts at the first position sharing its time
    start = np.searchsorted(idx.times, idx.times[ep], side="left")
    resid = x[ep] - s1[start] / s0[start][:, None]

    nevent = ep.shape[0]
    times = idx.times[ep]
    g = stats.rankdata(times)
    gc = g - g.mean()
    info = partial_derivatives(ds, fit.beta)[2]
    imat = np.linalg.pinv(info)
    scaled = resid @ imat * nevent
    test = gc @ scaled
    ssg = float(gc @ gc)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = test ** 2 / (np.diag(imat) * nevent * ssg)
        rho = np.array([np.corrcoef(gc, scaled[:, j])[0, 1]
                        if np.std(scaled[:, j]) > 0 else np.nan
                        for j in range(ds.d)])
    u = gc @ resid
    zg = float(u @ imat @ u * nevent / ssg)
    return SchoenfeldReport(
        covariate_names=ds.covariate_names,
        event_times=times,
        record_index=idx.order[ep],
        residuals=resid,
        rho=rho,
        chisq=z,
        p_value=stats.chi2.sf(z, 1),
        global_chisq=zg,
        global_p_value=float(stats.chi2.sf(zg, ds.d)),
        global_df=ds.d,
    )
