"""Shared domain types, hour/index conventions and result (de)serialization.

Times in the public API are hours. Sample indices are 0-based and map to
hours through ``time(t) = start_time + t * dt``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1


class EstimationError(RuntimeError):
    """Raised when a model cannot be fitted to the data it was given."""


class InsufficientDataError(EstimationError):
    """Raised when a segment is too short for the requested fit."""


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled observations.

    Attributes:
        values: observations, length ``T >= 2``, all finite.
        start_time: time of the first sample in hours.
        dt: hours per index step, positive.
        label: optional name, e.g. the CSV column it came from.
    """

    values: np.ndarray
    start_time: float = 0.0
    dt: float = 1.0
    label: str | None = None

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a series needs at least two observations")
        if not np.all(np.isfinite(values)):
            raise ValueError("series contains non-finite values (missing data is not supported)")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self) -> int:
        return self.values.size

    @property
    def T(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.dt * np.arange(self.T)

    @property
    def end_time(self) -> float:
        return self.time(self.T - 1)

    def time(self, t: int) -> float:
        return self.start_time + t * self.dt

    def scaled(self, c: float) -> "TimeSeries":
        return TimeSeries(c * self.values, self.start_time, self.dt, self.label)


def index_of(ts: TimeSeries, hours: float) -> int:
    """Nearest sample index for a time in hours (ties go to the later index)."""
    # half a step of slack at both ends so every in-span hour rounds inside
    lo = ts.start_time - 0.5 * ts.dt
    hi = ts.end_time + 0.5 * ts.dt
    if not (lo <= hours <= hi):
        raise ValueError(f"{hours} h lies outside the series span [{ts.start_time}, {ts.end_time}]")
    idx = math.floor((hours - ts.start_time) / ts.dt + 0.5)
    return int(min(max(idx, 0), ts.T - 1))


@dataclass(frozen=True)
class CandidateWindow:
    """Range ``[tau_a, tau_b]`` (hours) that the change point is searched in."""

    tau_a: float
    tau_b: float

    def __post_init__(self):
        if not self.tau_a < self.tau_b:
            raise ValueError("tau_a must be smaller than tau_b")

    def indices(self, ts: TimeSeries) -> tuple[int, int]:
        """Inclusive index bounds of the window on ``ts``."""
        for h in (self.tau_a, self.tau_b):
            if not ts.start_time <= h <= ts.end_time:
                raise ValueError(f"window endpoint {h} h outside series span")
        a, b = index_of(ts, self.tau_a), index_of(ts, self.tau_b)
        if b - a + 1 < 3:
            raise ValueError("candidate window must contain at least 3 sample indices")
        return a, b


@dataclass(frozen=True)
class MultiSeries:
    series: tuple[TimeSeries, ...]

    def __post_init__(self):
        series = tuple(self.series)
        if not series:
            raise ValueError("need at least one series")
        first = series[0]
        for s in series[1:]:
            if s.T != first.T or s.dt != first.dt or s.start_time != first.start_time:
                raise ValueError("all member series must share T, dt and start_time")
        object.__setattr__(self, "series", series)

    @property
    def p(self) -> int:
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    def __getitem__(self, j):
        return self.series[j]

    def __len__(self):
        return len(self.series)


@dataclass(frozen=True)
class SplineBasisSpec:
    """Clamped B-spline basis: degree, interior knots and domain, in hours."""

    degree: int
    interior_knots: tuple[float, ...]
    domain: tuple[float, float]

    def __post_init__(self):
        knots = tuple(float(k) for k in self.interior_knots)
        low, high = (float(v) for v in self.domain)
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if not low < high:
            raise ValueError("empty spline domain")
        if any(not (low < k < high) for k in knots):
            raise ValueError("interior knots must lie strictly inside the domain")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("interior knots must be strictly increasing")
        object.__setattr__(self, "interior_knots", knots)
        object.__setattr__(self, "domain", (low, high))
        object.__setattr__(self, "degree", int(self.degree))

    @property
    def dim(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    @property
    def knot_vector(self) -> np.ndarray:
        low, high = self.domain
        k = self.degree + 1
        return np.concatenate([np.full(k, low), self.interior_knots, np.full(k, high)])

    def to_dict(self) -> dict:
        return {"degree": self.degree, "interior_knots": list(self.interior_knots),
                "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, doc: dict) -> "SplineBasisSpec":
        return cls(doc["degree"], tuple(doc["interior_knots"]), tuple(doc["domain"]))


@dataclass(frozen=True, eq=False)
class TrendFit:
    """Penalized-spline fit of the trend mean (``beta``) and log variance (``theta``).

    ``start``/``stop`` record the half-open index range the fit used.
    """

    beta: np.ndarray
    theta: np.ndarray
    lambda_f: float
    lambda_h: float
    basis_spec_f: SplineBasisSpec
    basis_spec_h: SplineBasisSpec
    start: int = 0
    stop: int = 0
    n_iter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen_array(self.beta))
        object.__setattr__(self, "theta", _frozen_array(self.theta))
        if not (self.lambda_f > 0 and self.lambda_h > 0):
            raise ValueError("smoothing penalties must be positive")
        if self.beta.size != self.basis_spec_f.dim or self.theta.size != self.basis_spec_h.dim:
            raise ValueError("coefficient length does not match basis dimension")


@dataclass(frozen=True)
class FIFit:
    """Equilibrium parameters of a fractionally integrated segment."""

    d: float
    mu: float
    nu2: float
    loglik: float

    def __post_init__(self):
        if not self.nu2 > 0:
            raise ValueError("nu2 must be positive")


STEP = "step"
SIGMOID = "sigmoid"


@dataclass(frozen=True, eq=False)
class ChangePointFit:
    """A fitted regime split with both regimes' parameters.

    ``objective`` is the maximized penalized log-likelihood; for step fits it
    equals ``trend_loglik + equilibrium.loglik``.
    """

    kind: str
    tau_hat: float
    tau_index: int
    trend: TrendFit
    equilibrium: FIFit
    objective: float
    trend_loglik: float
    alpha0: float | None = None
    alpha1: float | None = None
    start_time: float = 0.0
    dt: float = 1.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (STEP, SIGMOID):
            raise ValueError(f"unknown fit kind {self.kind!r}")
        if self.kind == SIGMOID and not (self.alpha1 is not None and self.alpha1 > 0):
            raise ValueError("sigmoid fits need alpha1 > 0")

    @property
    def d(self) -> float:
        return self.equilibrium.d


def sigmoid_alphas(tau_hours: float, slope: float) -> tuple[float, float]:
    """``(alpha0, alpha1)`` of a transition centred at ``tau_hours``."""
    return -slope * tau_hours, slope


_FLOAT_KEYS = ("tau_hat", "d", "mu", "nu2", "equilibrium_loglik", "objective",
               "trend_loglik", "lambda_f", "lambda_h", "start_time", "dt")


def serialize_fit(fit: ChangePointFit) -> dict:
    """Flat, key-stable document for a fit; inverse of :func:`deserialize_fit`."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": fit.kind,
        "tau_hat": float(fit.tau_hat),
        "tau_index": int(fit.tau_index),
        "d": float(fit.equilibrium.d),
        "mu": float(fit.equilibrium.mu),
        "nu2": float(fit.equilibrium.nu2),
        "equilibrium_loglik": float(fit.equilibrium.loglik),
        "objective": float(fit.objective),
        "trend_loglik": float(fit.trend_loglik),
        "lambda_f": float(fit.trend.lambda_f),
        "lambda_h": float(fit.trend.lambda_h),
        "beta": [float(v) for v in fit.trend.beta],
        "theta": [float(v) for v in fit.trend.theta],
        "basis_f": fit.trend.basis_spec_f.to_dict(),
        "basis_h": fit.trend.basis_spec_h.to_dict(),
        "trend_start": int(fit.trend.start),
        "trend_stop": int(fit.trend.stop),
        "trend_iterations": int(fit.trend.n_iter),
        "start_time": float(fit.start_time),
        "dt": float(fit.dt),
    }
    if fit.kind == SIGMOID:
        doc["alpha0"] = float(fit.alpha0)
        doc["alpha1"] = float(fit.alpha1)
    if fit.extras:
        doc["extras"] = dict(fit.extras)
    return doc


def deserialize_fit(doc: dict) -> ChangePointFit:
    trend = TrendFit(
        beta=np.asarray(doc["beta"], dtype=float),
        theta=np.asarray(doc["theta"], dtype=float),
        lambda_f=doc["lambda_f"],
        lambda_h=doc["lambda_h"],
        basis_spec_f=SplineBasisSpec.from_dict(doc["basis_f"]),
        basis_spec_h=SplineBasisSpec.from_dict(doc["basis_h"]),
        start=doc["trend_start"],
        stop=doc["trend_stop"],
        n_iter=doc.get("trend_iterations", 0),
    )
    eq = FIFit(doc["d"], doc["mu"], doc["nu2"], doc["equilibrium_loglik"])
    return ChangePointFit(
        kind=doc["kind"],
        tau_hat=doc["tau_hat"],
        tau_index=doc["tau_index"],
        trend=trend,
        equilibrium=eq,
        objective=doc["objective"],
        trend_loglik=doc["trend_loglik"],
        alpha0=doc.get("alpha0"),
        alpha1=doc.get("alpha1"),
        start_time=doc["start_time"],
        dt=doc["dt"],
        extras=dict(doc.get("extras", {})),
    )


def fits_equal(a: ChangePointFit, b: ChangePointFit) -> bool:
    """Field-by-field exact equality (arrays compared bitwise)."""
    return serialize_fit(a) == serialize_fit(b)


def dump_json(doc: dict, path: str | Path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# -- CSV series ------------------------------------------------------------

def read_series_csv(path: str | Path) -> MultiSeries:
    """Read ``time_hours,<series...>`` into a :class:`MultiSeries`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if not header or header[0].strip() != "time_hours":
            raise ValueError(f"{path}: first column must be 'time_hours'")
        if len(header) < 2:
            raise ValueError(f"{path}: no value columns")
        rows = [r for r in reader if r]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header) or data.shape[0] < 2:
        raise ValueError(f"{path}: ragged or too short table")
    times = data[:, 0]
    steps = np.diff(times)
    dt = float(np.mean(steps))
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-6, atol=1e-9):
        raise ValueError(f"{path}: time column must be uniformly increasing")
    return MultiSeries(tuple(
        TimeSeries(data[:, j], times[0], dt, header[j].strip())
        for j in range(1, len(header))))


def write_series_csv(ms: MultiSeries | Sequence[TimeSeries], path: str | Path) -> None:
    series = list(ms)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_hours"] + [s.label or f"y{j}" for j, s in enumerate(series)])
        times = series[0].times
        for t in range(series[0].T):
            w.writerow([repr(float(times[t]))] + [repr(float(s.values[t])) for s in series])
