"""Incremental causal effects of shifting the hazard of treatment initiation.

The treatment hazard is multiplied by a user-chosen ``theta(t, l) > 0`` and
the mean outcome under that shifted hazard is estimated by inverse
probability weighting, with the nuisance hazard from a Cox model and
standard errors from a multiplier bootstrap.
"""

__version__ = "0.1.0"

from .data import Dataset, Schema, SubjectRecord, load_csv, validate, write_csv
from .km import KaplanMeier, StepCurve, kaplan_meier
from .cox import CoxFit, SchoenfeldReport, cumulative_hazard, fit_cox, schoenfeld
from .effect import (Constant, LogLinear, PiecewiseTime, PowerHazard, Product,
                     ThetaSpec, WeightVector, eval_theta, intervention_curves,
                     ipw_weights, psi_hat)
from .inference import EffectEstimate, effect_curve, multiplier_bootstrap
from .simlab import (MAIN, MULTI, DgpSpec, StudyReport, generate, oracle_psi,
                     run_study)

__all__ = [
    "Dataset", "Schema", "SubjectRecord", "load_csv", "validate", "write_csv",
    "KaplanMeier", "StepCurve", "kaplan_meier",
    "CoxFit", "SchoenfeldReport", "cumulative_hazard", "fit_cox", "schoenfeld",
    "Constant", "LogLinear", "PiecewiseTime", "PowerHazard", "Product",
    "ThetaSpec", "WeightVector", "eval_theta", "intervention_curves",
    "ipw_weights", "psi_hat",
    "EffectEstimate", "effect_curve", "multiplier_bootstrap",
    "MAIN", "MULTI", "DgpSpec", "StudyReport", "generate", "oracle_psi",
    "run_study",
]
