"""Observation records, the dataset container and CSV ingestion.

Every record carries ``(y, t_obs, delta, covariates)`` where ``t_obs`` is the
treatment time truncated at the horizon ``tau`` and ``delta`` flags whether
treatment started strictly before ``tau``. Only administrative censoring at
``tau`` is representable: censored records have ``t_obs == tau`` exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

#: deviation of a censored ``t_obs`` from ``tau`` that is silently snapped
SNAP_TOL = 1e-9


class DataError(ValueError):
    """Base class for ingestion and validation failures."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class MissingColumn(DataError):
    pass


class NonFinite(DataError):
    pass


class DeltaTimeMismatch(DataError):
    pass


class TimeExceedsHorizon(DataError):
    pass


class NegativeTime(DataError):
    pass


class InvalidDelta(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


@dataclass(frozen=True)
class Violation:
    """One failed invariant. ``index`` is the 0-based record index."""

    kind: str
    index: int | None
    message: str

    def __str__(self):
        where = "" if self.index is None else f"record {self.index}: "
        return f"{self.kind}({where}{self.message})"


@dataclass(frozen=True)
class SubjectRecord:
    y: float
    t_obs: float
    delta: int
    covariates: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, read-only collection of subject records.

    Parameters
    ----------
    y, t_obs, delta : array_like, shape (n,)
        Outcome, observed treatment time ``min(T, tau)`` and event indicator.
    covariates : array_like, shape (n, d)
        Baseline covariates; a 1-D input is treated as a single column.
    tau : float
        Horizon at which the outcome is measured.
    covariate_names : sequence of str, optional
        Defaults to ``l1, ..., ld``.
    """

    y: np.ndarray
    t_obs: np.ndarray
    delta: np.ndarray
    covariates: np.ndarray
    tau: float
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        t = np.array(self.t_obs, dtype=float)
        delta = np.array(self.delta)
        if delta.dtype.kind == "f":
            if not np.all((delta == 0) | (delta == 1)):
                bad = int(np.flatnonzero((delta != 0) & (delta != 1))[0])
                raise InvalidDelta(f"delta must be 0 or 1 (record {bad})", bad)
        delta = delta.astype(np.int8)
        x = np.array(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(len(y), 0)
        names = tuple(self.covariate_names) or tuple(
            f"l{j + 1}" for j in range(x.shape[1]))
        # censored records within SNAP_TOL of tau are pinned to tau
        near = (delta == 0) & (np.abs(t - self.tau) <= SNAP_TOL)
        t[near] = self.tau
        for arr in (y, t, delta, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t_obs", t)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def __len__(self):
        return self.n

    @property
    def records(self) -> list[SubjectRecord]:
        return list(self)

    def __iter__(self) -> Iterator[SubjectRecord]:
        for i in range(self.n):
            yield SubjectRecord(float(self.y[i]), float(self.t_obs[i]),
                                int(self.delta[i]),
                                tuple(float(v) for v in self.covariates[i]))

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], tau: float,
                     covariate_names: Sequence[str] = ()) -> "Dataset":
        d = len(records[0].covariates) if records else len(covariate_names)
        return cls(
            y=[r.y for r in records],
            t_obs=[r.t_obs for r in records],
            delta=[r.delta for r in records],
            covariates=np.array([r.covariates for r in records],
                                dtype=float).reshape(len(records), d),
            tau=tau,
            covariate_names=tuple(covariate_names),
        )

    @cached_property
    def risk_index(self):
        """Sort order and tie structure reused by every Cox fit on this data."""
        from .cox import RiskSetIndex

        return RiskSetIndex.build(self.t_obs, self.delta)


def validate(ds: Dataset) -> list[Violation]:
    """Return one :class:`Violation` per broken invariant; empty if valid."""
    out: list[Violation] = []
    if ds.n == 0:
        out.append(Violation("EmptyDataset", None, "dataset has no records"))
    if not (math.isfinite(ds.tau) and ds.tau > 0):
        out.append(Violation("InvalidHorizon", None,
                             f"tau must be positive and finite, got {ds.tau}"))
    if len(ds.covariate_names) != ds.d:
        out.append(Violation(
            "DimensionMismatch", None,
            f"{len(ds.covariate_names)} names for {ds.d} covariates"))
    finite = (np.isfinite(ds.y) & np.isfinite(ds.t_obs)
              & np.all(np.isfinite(ds.covariates), axis=1))
    for i in range(ds.n):
        if not finite[i]:
            out.append(Violation("NonFinite", i, "non-finite value"))
            continue
        t, dl = ds.t_obs[i], ds.delta[i]
        if dl not in (0, 1):
            out.append(Violation("InvalidDelta", i, f"delta={dl}"))
        elif t < 0:
            out.append(Violation("NegativeTime", i, f"t_obs={t}"))
        elif t > ds.tau:
            out.append(Violation("TimeExceedsHorizon", i,
                                 f"t_obs={t} > tau={ds.tau}"))
        elif dl == 1 and t >= ds.tau:
            out.append(Violation("DeltaTimeMismatch", i,
                                 f"delta=1 requires t_obs < tau, got {t}"))
        elif dl == 0 and t != ds.tau:
            out.append(Violation("DeltaTimeMismatch", i,
                                 f"delta=0 requires t_obs = tau, got {t}"))
    return out


_ERRORS = {
    "NonFinite": NonFinite,
    "DeltaTimeMismatch": DeltaTimeMismatch,
    "TimeExceedsHorizon": TimeExceedsHorizon,
    "NegativeTime": NegativeTime,
    "InvalidDelta": InvalidDelta,
    "DimensionMismatch": DimensionMismatch,
    "EmptyDataset": EmptyDataset,
}


def check(ds: Dataset) -> Dataset:
    """Raise the first violation of :func:`validate` as an exception.

    Record indices in the message are reported as 1-based data rows.
    """
    violations = validate(ds)
    if violations:
        first = violations[0]
        row = None if first.index is None else first.index + 1
        lines = [f"row {v.index + 1}: {v.kind}: {v.message}"
                 if v.index is not None else f"{v.kind}: {v.message}"
                 for v in violations]
        raise _ERRORS.get(first.kind, DataError)("; ".join(lines), row)
    return ds


@dataclass(frozen=True)
class Schema:
    """Mapping from dataset fields to CSV column names.

    ``covariates=None`` takes every column not used for y, time and delta,
    in header order.
    """

    y: str = "y"
    time: str = "time"
    delta: str = "delta"
    covariates: tuple[str, ...] | None = None

    def resolve(self, header: Sequence[str]) -> tuple[str, ...]:
        for col in (self.y, self.time, self.delta):
            if col not in header:
                raise MissingColumn(f"missing column {col!r}")
        if self.covariates is None:
            used = {self.y, self.time, self.delta}
            return tuple(c for c in header if c not in used)
        for col in self.covariates:
            if col not in header:
                raise MissingColumn(f"missing column {col!r}")
        return tuple(self.covariates)


def load_csv(path: str | Path, tau: float,
             schema: Schema | Mapping[str, object] | None = None) -> Dataset:
    """Read and validate a dataset from a header-bearing UTF-8 CSV file.

    Raises
    ------
    MissingColumn
        A column named by the schema is absent.
    NonFinite
        A cell is empty, unparsable, NaN or infinite (``row`` is 1-based).
    DeltaTimeMismatch
        ``delta=1`` with ``t_obs >= tau``, or ``delta=0`` with ``t_obs`` more
        than 1e-9 away from ``tau``.
    """
    if schema is None:
        schema = Schema()
    elif not isinstance(schema, Schema):
        schema = Schema(**schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(f"{path}: empty file") from None
        names = schema.resolve(header)
        pos = {c: header.index(c) for c in header}
        cols = [pos[schema.y], pos[schema.time], pos[schema.delta]]
        cols += [pos[c] for c in names]
        rows = []
        for lineno, raw in enumerate(reader, start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            try:
                vals = [float(raw[j]) for j in cols]
            except (ValueError, IndexError):
                raise NonFinite(f"row {lineno}: missing or non-numeric value",
                                lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise NonFinite(f"row {lineno}: non-finite value", lineno)
            if vals[2] not in (0.0, 1.0):
                raise InvalidDelta(f"row {lineno}: delta must be 0 or 1",
                                   lineno)
            rows.append(vals)
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    ds = Dataset(y=arr[:, 0], t_obs=arr[:, 1], delta=arr[:, 2],
                 covariates=arr[:, 3:], tau=tau, covariate_names=names)
    return check(ds)


def write_csv(ds: Dataset, path: str | Path, schema: Schema | None = None) -> None:
    """Write ``ds`` so that :func:`load_csv` reproduces it exactly."""
    schema = schema or Schema()
    names = list(schema.covariates or ds.covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.y, schema.time, schema.delta, *names])
        for i in range(ds.n):
            w.writerow([repr(float(ds.y[i])), repr(float(ds.t_obs[i])),
                        int(ds.delta[i]),
                        *(repr(float(v)) for v in ds.covariates[i])])
