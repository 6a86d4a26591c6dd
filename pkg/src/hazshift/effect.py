"""Hazard-shift interventions, their inverse probability weights and the
plug-in estimator of the mean outcome under the shifted hazard.

An intervention multiplies the treatment hazard by ``theta(t, l) > 0``. The
weight of subject ``i`` is

    theta(T_i, L_i)**delta_i * exp(-sum_{t_k <= T_i} (theta(t_k, L_i) - 1)
                                   * dLambda(t_k | L_i))

where the sum runs over the jumps of the fitted cumulative hazard, the jump
at ``T_i`` itself included.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

from .cox import CoxFit
from .data import Dataset, DimensionMismatch


class ThetaError(ValueError):
    pass


class NonPositiveTheta(ThetaError):
    pass


class NonFiniteWeights(ArithmeticError):
    pass


class NegativeGridTime(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{x:.10g}"


class ThetaSpec:
    """Base class of interventions.

    Every supported intervention factors as ``theta(t, l) = a(t) * b(l)``
    with ``a`` piecewise constant in time; subclasses provide the two factors.
    """

    def time_pieces(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints and the levels of ``a(t)`` (``len(levels) = len(breaks)+1``)."""
        return np.zeros(0), np.ones(1)

    def covariate_factor(self, l) -> np.ndarray:
        l = np.atleast_2d(np.asarray(l, float))
        return np.ones(l.shape[0])

    def time_factor(self, t) -> np.ndarray:
        breaks, levels = self.time_pieces()
        if breaks.size == 0:
            return np.full(np.shape(t), levels[0])
        return levels[np.searchsorted(breaks, np.asarray(t, float), side="right")]

    def time_integral(self, t) -> np.ndarray:
        """``int_0^t a(s) ds``."""
        breaks, levels = self.time_pieces()
        t = np.asarray(t, float)
        if breaks.size == 0:
            return levels[0] * t
        knots = np.concatenate([[0.0], breaks])
        cum = np.concatenate([[0.0], np.cumsum(levels[:-1] * np.diff(knots))])
        k = np.searchsorted(breaks, t, side="right")
        return cum[k] + levels[k] * (t - knots[k])

    def __call__(self, t, l) -> np.ndarray:
        return self.time_factor(t) * self.covariate_factor(l)

    @property
    def label(self) -> str:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def __mul__(self, other: "ThetaSpec") -> "Product":
        return Product((self, other))

    @staticmethod
    def from_json(obj) -> "ThetaSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if "constant" in obj:
            return Constant(float(obj["constant"]))
        if "loglinear" in obj:
            return LogLinear(tuple(float(c) for c in obj["loglinear"]))
        if "piecewise" in obj:
            pw = obj["piecewise"]
            return PiecewiseTime(tuple(map(float, pw["breaks"])),
                                 tuple(map(float, pw["levels"])))
        if "product" in obj:
            return Product(tuple(ThetaSpec.from_json(o) for o in obj["product"]))
        raise ThetaError(f"unrecognised theta specification: {obj!r}")

    @staticmethod
    def parse(token: str) -> "ThetaSpec":
        """Parse ``2``, ``1/3``, ``loglinear:0.1,0.2`` or
        ``piecewise:1,1.5@2,1,0.5`` (breaks ``@`` levels)."""
        token = token.strip()
        if token.startswith("loglinear:"):
            return LogLinear(tuple(float(v) for v in token[10:].split(",")))
        if token.startswith("piecewise:"):
            b, _, lv = token[10:].partition("@")
            breaks = tuple(float(v) for v in b.split(",") if v)
            return PiecewiseTime(breaks, tuple(float(v) for v in lv.split(",")))
        try:
            return Constant(float(Fraction(token)) if "/" in token
                            else float(token))
        except (ValueError, ZeroDivisionError):
            raise ThetaError(f"cannot parse theta {token!r}") from None


@dataclass(frozen=True)
class Constant(ThetaSpec):
    c: float

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise NonPositiveTheta(f"theta must be positive, got {self.c}")

    def covariate_factor(self, l):
        l = np.atleast_2d(np.asarray(l, float))
        return np.full(l.shape[0], self.c)

    @property
    def label(self):
        if self.c < 1:
            inv = 1 / self.c
            if abs(inv - round(inv, 6)) < 1e-9:
                return f"1/{round(inv, 6):g}"
        return _fmt(self.c)

    def to_json(self):
        return {"constant": self.c}


@dataclass(frozen=True)
class LogLinear(ThetaSpec):
    """``theta(t, l) = exp(coef' l)``, constant in time."""

    coef: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))

    def covariate_factor(self, l):
        l = np.atleast_2d(np.asarray(l, float))
        if l.shape[1] != len(self.coef):
            raise DimensionMismatch(
                f"loglinear theta has {len(self.coef)} coefficients, "
                f"covariates have {l.shape[1]}")
        return np.exp(l @ np.asarray(self.coef))

    @property
    def label(self):
        return "loglinear:" + ",".join(_fmt(c) for c in self.coef)

    def to_json(self):
        return {"loglinear": list(self.coef)}


@dataclass(frozen=True)
class PiecewiseTime(ThetaSpec):
    """Piecewise-constant in time, same for every subject.

    ``levels[k]`` applies on ``[breaks[k-1], breaks[k])``.
    """

    breaks: tuple[float, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if len(self.levels) != len(self.breaks) + 1:
            raise ThetaError("need exactly one more level than breakpoints")
        if any(np.diff(self.breaks) <= 0) or any(b < 0 for b in self.breaks):
            raise ThetaError("breakpoints must be nonnegative and increasing")
        if not all(math.isfinite(v) and v > 0 for v in self.levels):
            raise NonPositiveTheta(f"levels must be positive: {self.levels}")

    def time_pieces(self):
        return np.asarray(self.breaks, float), np.asarray(self.levels, float)

    @property
    def label(self):
        return ("piecewise:" + ",".join(map(_fmt, self.breaks)) + "@"
                + ",".join(map(_fmt, self.levels)))

    def to_json(self):
        return {"piecewise": {"breaks": list(self.breaks),
                              "levels": list(self.levels)}}


@dataclass(frozen=True)
class Product(ThetaSpec):
    factors: tuple[ThetaSpec, ...] = field(default=())

    def time_pieces(self):
        pieces = [f.time_pieces() for f in self.factors]
        breaks = np.unique(np.concatenate([b for b, _ in pieces] + [np.zeros(0)]))
        probe = np.concatenate([[0.0], breaks])
        levels = np.ones(probe.size)
        for f in self.factors:
            levels = levels * f.time_factor(probe)
        return breaks, levels

    def covariate_factor(self, l):
        out = np.ones(np.atleast_2d(np.asarray(l, float)).shape[0])
        for f in self.factors:
            out = out * f.covariate_factor(l)
        return out

    @property
    def label(self):
        return "*".join(f.label for f in self.factors)

    def to_json(self):
        return {"product": [f.to_json() for f in self.factors]}


def eval_theta(spec: ThetaSpec, t: float, l) -> float:
    """``theta(t, l)`` for a single time and covariate vector."""
    return float(spec(np.asarray([t]), np.asarray(l, float).reshape(1, -1))[0])


@dataclass(frozen=True, eq=False)
class WeightVector:
    weights: np.ndarray
    theta: ThetaSpec
    fit: CoxFit

    @property
    def max(self) -> float:
        return float(self.weights.max())

    @property
    def ess(self) -> float:
        """Effective sample size ``(sum w)^2 / sum w^2``."""
        w = self.weights
        return float(w.sum() ** 2 / (w @ w))

    def summary(self) -> dict:
        w = self.weights
        return {"max_weight": self.max, "min_weight": float(w.min()),
                "mean_weight": float(w.mean()), "ess": self.ess}


class _WeightKernel:
    """Per-fit quantities shared by the weights of every intervention."""

    def __init__(self, ds: Dataset, fit: CoxFit):
        if fit.d != ds.d:
            raise DimensionMismatch(
                f"fit has {fit.d} covariates, dataset has {ds.d}")
        self.ds, self.fit = ds, fit
        self.risk = np.exp(ds.covariates @ fit.beta)
        # jumps at t_k <= t_obs contribute (closed upper limit)
        self.pos = np.searchsorted(fit.baseline_times, ds.t_obs, side="right")
        inc = fit.baseline_increments
        self.cum_base = np.concatenate([[0.0], np.cumsum(inc)])[self.pos]

    def weights(self, spec: ThetaSpec) -> np.ndarray:
        ds, fit = self.ds, self.fit
        b = spec.covariate_factor(ds.covariates)
        inc = fit.baseline_increments
        a = spec.time_factor(fit.baseline_times)
        cum_theta = np.concatenate([[0.0], np.cumsum(a * inc)])[self.pos]
        integral = self.risk * (b * cum_theta - self.cum_base)
        lead = np.where(ds.delta == 1, spec.time_factor(ds.t_obs) * b, 1.0)
        with np.errstate(over="ignore"):
            return lead * np.exp(-integral)


def ipw_weights(ds: Dataset, fit: CoxFit, spec: ThetaSpec) -> WeightVector:
    """Radon-Nikodym weights of the shifted against the fitted hazard."""
    w = _WeightKernel(ds, fit).weights(spec)
    if not np.all(np.isfinite(w) & (w > 0)):
        raise NonFiniteWeights(
            "weights overflowed or underflowed; theta is too extreme "
            "for this fitted hazard")
    return WeightVector(w, spec, fit)


def _seq_sum(a: np.ndarray) -> float:
    # sequential summation in index order
    return float(np.cumsum(a)[-1])


def psi_hat(ds: Dataset, fit: CoxFit, spec: ThetaSpec,
            case_weights=None) -> float:
    """Plug-in IPW estimate of the mean outcome under ``spec``.

    With ``case_weights`` ``c`` the estimate is ``sum c w y / sum c``.
    """
    w = ipw_weights(ds, fit, spec).weights
    if case_weights is None:
        return _seq_sum(w * ds.y) / ds.n
    c = np.asarray(case_weights, float)
    return _seq_sum(c * w * ds.y) / _seq_sum(c)


@dataclass(frozen=True)
class PowerHazard:
    """Hazard ``scale * t**power * exp(link' l)``."""

    scale: float
    power: float
    link: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "link", tuple(float(c) for c in np.atleast_1d(self.link)))
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"baseline scale must be positive, got {self.scale}")
        if not (self.power >= 0 and math.isfinite(self.power)):
            raise ValueError(f"baseline power must be >= 0, got {self.power}")

    def hazard(self, t, l) -> np.ndarray:
        t = np.asarray(t, float)
        return self.scale * t ** self.power * math.exp(
            float(np.dot(self.link, np.atleast_1d(l))))

    def cumulative(self, t, l) -> np.ndarray:
        t = np.asarray(t, float)
        return (self.scale * t ** (self.power + 1) / (self.power + 1)
                * math.exp(float(np.dot(self.link, np.atleast_1d(l)))))


@dataclass(frozen=True)
class CurveTable:
    t: np.ndarray
    hazard: np.ndarray
    density: np.ndarray
    theta: ThetaSpec

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "hazard", "density"])
            for row in zip(self.t, self.hazard, self.density):
                w.writerow([repr(float(v)) for v in row])


def intervention_curves(hazard: PowerHazard, l, spec: ThetaSpec,
                        grid: Sequence[float]) -> CurveTable:
    """Hazard and density of the treatment time under the shifted hazard.

    The cumulative shifted hazard is accumulated interval by interval with
    adaptive quadrature (absolute tolerance 1e-10).
    """
    grid = np.asarray(grid, float)
    if np.any(grid < 0):
        raise NegativeGridTime("grid times must be nonnegative")
    l = np.atleast_1d(np.asarray(l, float))
    lrow = l.reshape(1, -1)
    theta = spec(grid, np.repeat(lrow, grid.size, axis=0))
    haz = theta * hazard.hazard(grid, l)

    def shifted(s):
        return eval_theta(spec, s, l) * float(hazard.hazard(s, l))

    breaks, _ = spec.time_pieces()
    order = np.argsort(grid, kind="stable")
    cum = np.empty(grid.size)
    acc, prev = 0.0, 0.0
    for i in order:
        t = grid[i]
        if t > prev:
            pts = [b for b in breaks if prev < b < t]
            val, _ = integrate.quad(shifted, prev, t, epsabs=1e-10,
                                    epsrel=1e-12, limit=200,
                                    points=pts or None)
            acc += val
            prev = t
        cum[i] = acc
    return CurveTable(grid, haz, haz * np.exp(-cum), spec)
