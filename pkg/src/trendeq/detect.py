"""Change-point estimators: exhaustive step search, sigmoid transition, pooled multivariate.

Both univariate estimators maximize a penalized log-likelihood made of a
heteroscedastic spline trend term and a fractionally integrated equilibrium
term. ``fit_fixed_tau`` skips the search and doubles as the FixedTau/TrueTau
baselines.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import fiproc
from .core import (SIGMOID, STEP, CandidateWindow, ChangePointFit, EstimationError, FIFit,
                   InsufficientDataError, MultiSeries, TimeSeries, TrendFit, index_of,
                   serialize_fit, deserialize_fit, SCHEMA_VERSION)
from .splines import (fit_fgls, knot_grid_spec, trend_loglik, trend_penalty,
                      trend_pointwise_nll)

FIXED_TAU_HOURS = 50.0
TIE_TOL = 1e-9


@dataclass(frozen=True)
class TrendConfig:
    """Spline bases for the trend: knot spacings in hours and FGLS controls."""

    degree: int = 3
    knot_spacing_f: float = 1.0
    knot_spacing_h: float = 5.0
    knot_origin: float = 0.0
    max_iters: int = 10
    tol: float = 1e-6

    def specs(self, ts: TimeSeries):
        dom = (ts.start_time, ts.end_time)
        return (knot_grid_spec(self.degree, self.knot_spacing_f, dom, self.knot_origin),
                knot_grid_spec(self.degree, self.knot_spacing_h, dom, self.knot_origin))

    @property
    def min_length(self) -> int:
        return self.degree + 2


@dataclass(frozen=True)
class StepSearchConfig:
    window: CandidateWindow = CandidateWindow(10.0, 50.0)
    tau_grid_step: float | None = None  # hours; None means every sample
    trend: TrendConfig = TrendConfig()
    min_equilibrium: int = fiproc.MIN_EQUILIBRIUM
    workers: int = 1


@dataclass(frozen=True)
class SigmoidConfig:
    window: CandidateWindow = CandidateWindow(10.0, 50.0)
    C: float = 1000.0
    auto_C: bool = False
    trend: TrendConfig = TrendConfig()
    slope_bounds: tuple[float, float] = (0.05, 40.0)  # per hour
    tau_margin: float = 5.0  # hours beyond the window the centre may move
    init_slope: float = 2.0
    maxiter: int = 800

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("penalty constant C must be positive")


@dataclass(frozen=True, eq=False)
class MultiFit:
    base: str
    d_shared: float
    per_series: tuple[ChangePointFit, ...]
    objective: float
    univariate_d: tuple[float, ...] = field(default=())


# -- step search ------------------------------------------------------------

def _evaluate_split(ts: TimeSeries, tau: int, trend_cfg: TrendConfig, min_equilibrium: int):
    """Fit both regimes for a split at index ``tau``; returns (trend, trend_ll, fi)."""
    if tau < trend_cfg.min_length:
        raise InsufficientDataError(f"trend regime of {tau} points is too short")
    if ts.T - tau < min_equilibrium:
        raise InsufficientDataError(
            f"equilibrium regime of {ts.T - tau} points is shorter than {min_equilibrium}")
    spec_f, spec_h = trend_cfg.specs(ts)
    trend = fit_fgls(ts, 0, tau, spec_f, spec_h, trend_cfg.max_iters, trend_cfg.tol)
    tll = trend_loglik(trend, ts.times[:tau], ts.values[:tau])
    fi = fiproc.fit_fi(ts.values, tau, min_length=min_equilibrium)
    return trend, tll, fi


def _evaluate_many(args):
    ts, taus, trend_cfg, min_eq = args
    out = []
    for tau in taus:
        try:
            trend, tll, fi = _evaluate_split(ts, tau, trend_cfg, min_eq)
        except (EstimationError, np.linalg.LinAlgError):
            out.append(None)
            continue
        out.append((tau, trend, tll, fi))
    return out


def step_candidates(ts: TimeSeries, cfg: StepSearchConfig) -> list[int]:
    a, b = cfg.window.indices(ts)
    step = 1
    if cfg.tau_grid_step is not None:
        if cfg.tau_grid_step < ts.dt * (1 - 1e-9):
            raise ValueError("grid step must be at least dt")
        step = max(1, int(round(cfg.tau_grid_step / ts.dt)))
    return list(range(a, b + 1, step))


def step_profile(ts: TimeSeries, cfg: StepSearchConfig = StepSearchConfig()):
    """Evaluate every candidate split; returns a list of ``(tau, trend, trend_ll, fi)`` or None."""
    taus = step_candidates(ts, cfg)
    if cfg.workers > 1 and len(taus) > 1:
        chunks = [taus[k::cfg.workers] for k in range(cfg.workers)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(_evaluate_many,
                                [(ts, c, cfg.trend, cfg.min_equilibrium) for c in chunks]))
        by_tau = {}
        for chunk, part in zip(chunks, parts):
            by_tau.update(zip(chunk, part))
        return [by_tau[t] for t in taus]
    return _evaluate_many((ts, taus, cfg.trend, cfg.min_equilibrium))


def _split_fit(ts, tau, trend, tll, fi, extras=None) -> ChangePointFit:
    return ChangePointFit(kind=STEP, tau_hat=ts.time(tau), tau_index=tau, trend=trend,
                          equilibrium=fi, objective=tll + fi.loglik, trend_loglik=tll,
                          start_time=ts.start_time, dt=ts.dt, extras=extras or {})


def fit_step(ts: TimeSeries, cfg: StepSearchConfig = StepSearchConfig()) -> ChangePointFit:
    """Exhaustive search over candidate change points.

    Each candidate splits the series into a trend fit on ``[0, tau)`` and an
    FI fit on ``[tau, T)``; the split with the largest summed penalized
    log-likelihood wins (earlier ``tau`` on ties).
    """
    best = None
    for res in step_profile(ts, cfg):
        if res is None:
            continue
        obj = res[2] + res[3].loglik
        if best is None or obj > best[0] + TIE_TOL:
            best = (obj, res)
    if best is None:
        raise EstimationError("no admissible change-point candidate could be fitted")
    tau, trend, tll, fi = best[1]
    return _split_fit(ts, tau, trend, tll, fi)


def fit_fixed_tau(ts: TimeSeries, tau_hours: float = FIXED_TAU_HOURS,
                  trend_cfg: TrendConfig = TrendConfig(),
                  min_equilibrium: int = fiproc.MIN_EQUILIBRIUM) -> ChangePointFit:
    """Fit both regimes with the change point held at ``tau_hours``."""
    tau = index_of(ts, tau_hours)
    trend, tll, fi = _evaluate_split(ts, tau, trend_cfg, min_equilibrium)
    return _split_fit(ts, tau, trend, tll, fi, extras={"fixed_tau": True})


# -- sigmoid transition ------------------------------------------------------

class SigmoidObjective:
    """Weighted penalized log-likelihood as a function of ``(tau0, log slope, d)``.

    The trend terms come from a spline fit on the whole series and are
    weighted by ``1 - w_t``; the FI terms use the sigmoid-weighted conditional
    mean and are weighted by ``w_t``. ``mu`` and ``nu2`` are profiled out.
    """

    def __init__(self, ts: TimeSeries, trend: TrendFit, C: float, window: CandidateWindow):
        self.ts = ts
        self.y = ts.values
        self.times = ts.times
        self.trend = trend
        self.nll = trend_pointwise_nll(trend, self.times, self.y)
        self.penalty = trend_penalty(trend)
        self.C = C
        self.window = window

    def weights(self, tau0, slope):
        return fiproc.sigmoid_weight(self.times, -slope * tau0, slope)

    def parts(self, tau0: float, slope: float, d: float):
        w = self.weights(tau0, slope)
        pi = fiproc.frac_weights(d, self.y.size - 1)
        a = fiproc.truncated_convolve(pi, w * self.y) + (1.0 - w) * self.y
        b = fiproc.truncated_convolve(pi, w) + (1.0 - w)
        eq_ll, mu, nu2 = fiproc._profile_from_ab(a, b, weights=w)
        trend_ll = -float((1.0 - w) @ self.nll) - self.penalty
        wa, wb = fiproc.sigmoid_weight([self.window.tau_a, self.window.tau_b], -slope * tau0, slope)
        pen = self.C * float(wb - wa)
        return trend_ll, eq_ll, pen, mu, nu2

    def __call__(self, tau0: float, slope: float, d: float) -> float:
        trend_ll, eq_ll, pen, _, _ = self.parts(tau0, slope, d)
        return trend_ll + eq_ll + pen


def fit_sigmoid(ts: TimeSeries, cfg: SigmoidConfig = SigmoidConfig()) -> ChangePointFit:
    """Smooth-transition estimator.

    The trend is fitted once on the full series; then ``(tau0, slope, d)`` is
    optimized by bounded Nelder-Mead from three starting centres, separately
    for each d-range, and the range whose ``d`` lies further from 0.5 wins.
    """
    a_idx, b_idx = cfg.window.indices(ts)
    spec_f, spec_h = cfg.trend.specs(ts)
    trend = fit_fgls(ts, 0, ts.T, spec_f, spec_h, cfg.trend.max_iters, cfg.trend.tol)
    C = cfg.C
    if cfg.auto_C:
        C = abs(trend_loglik(trend, ts.times, ts.values))
    obj = SigmoidObjective(ts, trend, C, cfg.window)

    ta, tb = cfg.window.tau_a, cfg.window.tau_b
    width = tb - ta
    starts = [ta + 0.25 * width, ta + 0.5 * width, tb - 0.25 * width]
    log_s_bounds = (math.log(cfg.slope_bounds[0]), math.log(cfg.slope_bounds[1]))
    tau_bounds = (ta - cfg.tau_margin, tb + cfg.tau_margin)

    runs = []
    for lo, hi in fiproc.D_RANGES:
        best = None
        for tau0 in starts:
            seg = ts.values[index_of(ts, tau0):]
            d0 = fiproc.maximize_scalar(lambda x: fiproc.profile_fi(seg, x)[0], lo, hi)[0]
            d0 = lo + 0.5 * (hi - lo) if d0 is None else d0
            x0 = np.array([tau0, math.log(cfg.init_slope), d0])
            simplex = np.array([x0,
                                x0 + [0.1 * width, 0.0, 0.0],
                                x0 + [0.0, 1.0, 0.0],
                                x0 + [0.0, 0.0, 0.1 if d0 + 0.1 <= hi else -0.1]])
            bounds = [tau_bounds, log_s_bounds, (lo, hi)]
            simplex = np.clip(simplex, [b[0] for b in bounds], [b[1] for b in bounds])

            def negobj(x):
                val = obj(x[0], math.exp(x[1]), x[2])
                return -val if np.isfinite(val) else np.inf

            res = optimize.minimize(negobj, x0, method="Nelder-Mead", bounds=bounds,
                                    options={"initial_simplex": simplex, "maxiter": cfg.maxiter,
                                             "xatol": 1e-4, "fatol": 1e-7})
            if not np.isfinite(res.fun):
                continue
            if best is None or -res.fun > best[0] + TIE_TOL:
                best = (-res.fun, res.x)
        if best is not None:
            runs.append(best)
    if not runs:
        raise EstimationError("sigmoid optimization failed in both d-ranges")
    value, x = max(runs, key=lambda r: abs(r[1][2] - 0.5))
    tau0, slope, d = float(x[0]), math.exp(float(x[1])), float(x[2])
    trend_ll, eq_ll, pen, mu, nu2 = obj.parts(tau0, slope, d)
    alpha0, alpha1 = -slope * tau0, slope
    tau_idx = index_of(ts, min(max(tau0, ts.start_time), ts.end_time))
    return ChangePointFit(
        kind=SIGMOID, tau_hat=tau0, tau_index=tau_idx, trend=trend,
        equilibrium=FIFit(d, mu, nu2, eq_ll), objective=trend_ll + eq_ll + pen,
        trend_loglik=trend_ll, alpha0=alpha0, alpha1=alpha1,
        start_time=ts.start_time, dt=ts.dt,
        extras={"C": C, "window_penalty": pen,
                "range_d": [float(r[1][2]) for r in runs]})


# -- multivariate pooling ------------------------------------------------------

def _equilibrium_profile(ts: TimeSeries, fit: ChangePointFit):
    """Profile log-likelihood of the equilibrium part of ``fit`` as a function of d."""
    if fit.kind == STEP:
        seg = ts.values[fit.tau_index:]
        return lambda d: fiproc.profile_fi(seg, d)
    w = fiproc.sigmoid_weight(ts.times, fit.alpha0, fit.alpha1)
    y = ts.values

    def prof(d):
        pi = fiproc.frac_weights(d, y.size - 1)
        a = fiproc.truncated_convolve(pi, w * y) + (1.0 - w) * y
        b = fiproc.truncated_convolve(pi, w) + (1.0 - w)
        return fiproc._profile_from_ab(a, b, weights=w)
    return prof


def _range_of(d: float):
    lo_rng, hi_rng = fiproc.D_RANGES
    return lo_rng if d <= 0.5 else hi_rng


def pool_shared_d(ms: MultiSeries, fits) -> MultiFit:
    """Stage two of the multivariate fit: one ``d`` for all series, per-series ``mu``/``nu2``."""
    fits = list(fits)
    ds = [f.d for f in fits]
    d_init = float(np.mean(ds))
    lo, hi = _range_of(d_init)
    profiles = [_equilibrium_profile(ts, f) for ts, f in zip(ms, fits)]
    d_shared, _ = fiproc.maximize_scalar(lambda d: sum(p(d)[0] for p in profiles), lo, hi)
    if d_shared is None:
        raise EstimationError("pooled d optimization failed")
    per = []
    for f, prof in zip(fits, profiles):
        ll, mu, nu2 = prof(d_shared)
        pen = f.extras.get("window_penalty", 0.0) if f.kind == SIGMOID else 0.0
        per.append(replace(f, equilibrium=FIFit(d_shared, mu, nu2, ll),
                           objective=f.trend_loglik + ll + pen))
    return MultiFit(base=fits[0].kind, d_shared=d_shared, per_series=tuple(per),
                    objective=float(sum(f.objective for f in per)), univariate_d=tuple(ds))


def fit_multivariate(ms: MultiSeries, base: str = STEP, cfg=None) -> MultiFit:
    """Univariate fits per series followed by pooling of the long-memory parameter."""
    if ms.p < 2:
        raise ValueError("multivariate fitting needs at least two series")
    if base == STEP:
        cfg = cfg or StepSearchConfig()
        fitter = fit_step
    elif base == SIGMOID:
        cfg = cfg or SigmoidConfig()
        fitter = fit_sigmoid
    else:
        raise ValueError(f"unknown base estimator {base!r}")
    fits = []
    for j, ts in enumerate(ms):
        try:
            fits.append(fitter(ts, cfg))
        except EstimationError as exc:
            raise EstimationError(f"series {ts.label or j}: {exc}") from exc
    return pool_shared_d(ms, fits)


def serialize_multifit(mf: MultiFit) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": "multivariate", "base": mf.base,
            "d_shared": float(mf.d_shared), "objective": float(mf.objective),
            "univariate_d": [float(d) for d in mf.univariate_d],
            "per_series": [serialize_fit(f) for f in mf.per_series]}


def deserialize_multifit(doc: dict) -> MultiFit:
    return MultiFit(base=doc["base"], d_shared=doc["d_shared"],
                    per_series=tuple(deserialize_fit(f) for f in doc["per_series"]),
                    objective=doc["objective"], univariate_d=tuple(doc["univariate_d"]))
