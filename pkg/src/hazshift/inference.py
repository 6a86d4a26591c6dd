"""Multiplier-bootstrap standard errors and Wald intervals.

Each replicate draws i.i.d. standard-exponential multipliers, refits the Cox
model with them as case weights and recomputes the weighted estimator for
every intervention in the grid. Replicate ``b`` draws from a generator keyed
on ``(seed, b)``, so results do not depend on batching or worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cox import CoxError, CoxFit, fit_cox
from .data import Dataset
from .effect import ThetaSpec, _WeightKernel, _seq_sum, ipw_weights, psi_hat

log = logging.getLogger(__name__)

Z95 = 1.959964
#: fraction of failed replicates above which an estimate is flagged
DROP_FLAG = 0.05


class TooFewReplicates(RuntimeError):
    pass


def seed_sequence(seed, *key: int) -> np.random.SeedSequence:
    """Child of ``seed`` (an int or SeedSequence) addressed by ``key``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy,
                                      spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(seed, spawn_key=key)


def multipliers(seed, b: int, n: int) -> np.ndarray:
    """Standard-exponential multipliers of replicate ``b``."""
    rng = np.random.default_rng(seed_sequence(seed, b))
    return rng.standard_exponential(n)


@dataclass(frozen=True)
class EffectEstimate:
    theta: ThetaSpec
    psi_hat: float
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    B: int = 0
    dropped: int = 0
    seed: int | None = None
    flagged: bool = False
    replicates: np.ndarray | None = field(default=None, repr=False,
                                          compare=False)

    def to_json(self) -> dict:
        return {
            "theta": self.theta.to_json(),
            "label": self.theta.label,
            "psi_hat": self.psi_hat,
            "se": self.se,
            "ci": None if self.se is None else [self.ci_low, self.ci_high],
            "B": self.B,
            "dropped": self.dropped,
            "flagged": self.flagged,
            "seed": self.seed,
        }


def _replicate(ds: Dataset, thetas: Sequence[ThetaSpec], c: np.ndarray,
               init: np.ndarray) -> np.ndarray | None:
    try:
        fit = fit_cox(ds, case_weights=c, init=init)
    except (CoxError, np.linalg.LinAlgError, ValueError):
        return None
    if not fit.converged:
        return None
    out = np.empty(len(thetas))
    denom = _seq_sum(c)
    kernel = _WeightKernel(ds, fit)
    for j, spec in enumerate(thetas):
        w = kernel.weights(spec)
        out[j] = _seq_sum(c * w * ds.y) / denom
    return out if np.all(np.isfinite(out)) else None


def _replicate_block(ds, thetas, seed, key, bs, init):
    rows = []
    for b in bs:
        c = multipliers(seed_sequence(seed, *key), b, ds.n)
        rows.append(_replicate(ds, thetas, c, init))
    return rows


def bootstrap_replicates(ds: Dataset, thetas: Sequence[ThetaSpec], B: int,
                         seed, start: int = 0, init=None, workers: int = 1,
                         key: tuple[int, ...] = ()) -> list[np.ndarray | None]:
    """Replicate estimates for ``b = start .. start + B - 1``.

    Entries are None for replicates whose weighted Cox fit failed.
    """
    if init is None:
        init = fit_cox(ds).beta
    bs = list(range(start, start + B))
    if workers <= 1 or B < 2:
        return _replicate_block(ds, thetas, seed, key, bs, init)
    chunks = [bs[i::workers] for i in range(workers)]
    out: dict[int, np.ndarray | None] = {}
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_replicate_block, ds, thetas, seed, key, ch, init)
                for ch in chunks if ch]
        for ch, fut in zip([c for c in chunks if c], futs):
            out.update(zip(ch, fut.result()))
    return [out[b] for b in bs]


def _summarise(theta, point, reps, B, seed):
    ok = np.array([r for r in reps if r is not None])
    dropped = B - ok.shape[0]
    if ok.shape[0] < 2:
        raise TooFewReplicates(
            f"only {ok.shape[0]} of {B} bootstrap replicates succeeded")
    se = float(np.std(ok, ddof=1))
    flagged = dropped > DROP_FLAG * B
    if flagged:
        log.warning("%d of %d bootstrap fits failed for theta=%s",
                    dropped, B, theta.label)
    return EffectEstimate(theta, point, se, point - Z95 * se,
                          point + Z95 * se, B, dropped,
                          seed if isinstance(seed, int) else None, flagged, ok)


def effect_curve(ds: Dataset, thetas: Sequence[ThetaSpec], B: int, seed=None,
                 fit: CoxFit | None = None, workers: int = 1,
                 key: tuple[int, ...] = ()) -> list[EffectEstimate]:
    """Point estimates and bootstrap intervals over a grid of interventions.

    The point fit is shared by the whole grid, and replicate ``b`` uses the
    same multipliers for every intervention. ``B = 0`` skips the bootstrap
    and returns point estimates only.
    """
    if not thetas:
        raise ValueError("theta grid is empty")
    fit = fit or fit_cox(ds)
    points = [psi_hat(ds, fit, spec) for spec in thetas]
    if B == 0:
        return [EffectEstimate(spec, p, seed=seed)
                for spec, p in zip(thetas, points)]
    if B < 2:
        raise TooFewReplicates("B must be at least 2")
    if seed is None:
        raise ValueError("a seed is required when B > 0")
    reps = bootstrap_replicates(ds, thetas, B, seed, init=fit.beta,
                                workers=workers, key=key)
    out = []
    for j, spec in enumerate(thetas):
        col = [None if r is None else r[j] for r in reps]
        out.append(_summarise(spec, points[j], col, B, seed))
    return out


def multiplier_bootstrap(ds: Dataset, spec: ThetaSpec, B: int, seed,
                         workers: int = 1) -> EffectEstimate:
    """Estimate for one intervention with a multiplier-bootstrap standard error."""
    if B < 2:
        raise TooFewReplicates("B must be at least 2")
    return effect_curve(ds, [spec], B, seed, workers=workers)[0]


def weight_diagnostics(ds: Dataset, fit: CoxFit, spec: ThetaSpec) -> dict:
    return ipw_weights(ds, fit, spec).summary()
