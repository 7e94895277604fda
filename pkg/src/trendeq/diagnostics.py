"""Tables behind fit overlays, standardized residual plots and benchmark figures.

Every table is a list of row dicts with a ``schema_version`` column so that it
can be written with :func:`write_table` and read back with :func:`read_table`.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import fiproc
from .core import SCHEMA_VERSION, SIGMOID, ChangePointFit, TimeSeries
from .splines import trend_design

KINDS = ("fit-overlay", "residuals", "transition", "benchmark")


def _check_series(fit: ChangePointFit, ts: TimeSeries):
    if abs(ts.dt - fit.dt) > 1e-9 * fit.dt or abs(ts.start_time - fit.start_time) > 1e-9:
        raise ValueError("series time grid does not match the fit")
    if fit.tau_index >= ts.T or fit.trend.stop > ts.T:
        raise ValueError("series is shorter than the fitted one")


def transition_weights(fit: ChangePointFit, times) -> np.ndarray:
    """``w(t)``: the fitted sigmoid, or the 0/1 step at the estimated change point."""
    times = np.asarray(times, dtype=float)
    if fit.kind == SIGMOID:
        return fiproc.sigmoid_weight(times, fit.alpha0, fit.alpha1)
    tau_time = fit.start_time + fit.tau_index * fit.dt
    return (times >= tau_time - 1e-9 * fit.dt).astype(float)


def equilibrium_residuals(fit: ChangePointFit, ts: TimeSeries) -> np.ndarray:
    """One-step residuals ``y_t - g_t`` on the whole series (NaN before a step change)."""
    eq = fit.equilibrium
    y = ts.values
    if fit.kind == SIGMOID:
        w = transition_weights(fit, ts.times)
        pi = fiproc.frac_weights(eq.d, y.size - 1)
        z = y - eq.mu
        # the lag-0 term of the convolution cancels against (1 - w) z
        return fiproc.truncated_convolve(pi, w * z) + (1.0 - w) * z
    out = np.full(y.size, np.nan)
    out[fit.tau_index:] = fiproc.fi_residuals(y, fit.tau_index, eq.mu, eq.d)
    return out


def _trend_parts(fit: ChangePointFit, ts: TimeSeries):
    """Fitted mean and log variance on the trend fit's index range (NaN elsewhere)."""
    lo, hi = fit.trend.start, fit.trend.stop
    mean = np.full(ts.T, np.nan)
    logvar = np.full(ts.T, np.nan)
    X, V = trend_design(fit.trend, ts.times[lo:hi])
    mean[lo:hi] = X @ fit.trend.beta
    logvar[lo:hi] = V @ fit.trend.theta
    return mean, logvar


def fit_overlay_table(fit: ChangePointFit, ts: TimeSeries) -> list[dict]:
    """Observed values with fitted trend, fitted equilibrium mean and ``w(t)``."""
    _check_series(fit, ts)
    mean, _ = _trend_parts(fit, ts)
    g = ts.values - equilibrium_residuals(fit, ts)
    w = transition_weights(fit, ts.times)
    return [{"schema_version": SCHEMA_VERSION, "time": float(t), "observed": float(y),
             "fitted_trend": float(m), "fitted_equilibrium": float(e), "w_t": float(wt)}
            for t, y, m, e, wt in zip(ts.times, ts.values, mean, g, w)]


def residual_table(fit: ChangePointFit, ts: TimeSeries) -> list[dict]:
    """Standardized residuals of both regimes.

    Trend residuals are divided by ``exp(v't theta / 2)``, equilibrium
    residuals by ``nu``. A point belongs to the equilibrium regime when
    ``w(t) >= 0.5``.
    """
    _check_series(fit, ts)
    mean, logvar = _trend_parts(fit, ts)
    trend_r = (ts.values - mean) / np.exp(0.5 * logvar)
    eq_r = equilibrium_residuals(fit, ts) / np.sqrt(fit.equilibrium.nu2)
    w = transition_weights(fit, ts.times)
    rows = []
    for t, wt, tr, er in zip(ts.times, w, trend_r, eq_r):
        regime = "equilibrium" if wt >= 0.5 else "trend"
        val = er if regime == "equilibrium" else tr
        rows.append({"schema_version": SCHEMA_VERSION, "time": float(t), "regime": regime,
                     "std_residual": float(val)})
    return rows


def transition_table(fit: ChangePointFit, ts: TimeSeries) -> list[dict]:
    _check_series(fit, ts)
    w = transition_weights(fit, ts.times)
    return [{"schema_version": SCHEMA_VERSION, "time": float(t), "w_t": float(v)}
            for t, v in zip(ts.times, w)]


_STATS = ("tau_err_q1", "tau_err_median", "tau_err_q3", "d_abserr_q1", "d_abserr_median",
          "d_abserr_q3", "runtime_mean_s", "n_reps", "n_fail")


def benchmark_long_table(report_rows: list[dict]) -> list[dict]:
    """Benchmark report reshaped to one ``(tau, d, method, statistic, value)`` row per number."""
    out = []
    for row in report_rows:
        for stat in _STATS:
            if stat in row and row[stat] != "":
                out.append({"schema_version": SCHEMA_VERSION, "tau_hours": row["tau_hours"],
                            "d": row["d"], "method": row["method"], "statistic": stat,
                            "value": float(row[stat])})
    return out


def write_table(rows: list[dict], path: str | Path, columns=None) -> None:
    columns = list(columns or (rows[0].keys() if rows else ["schema_version"]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in
                        (row.get(c, "") for c in columns)])


def read_table(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        conv = {}
        for k, v in row.items():
            try:
                conv[k] = int(v) if k == "schema_version" else float(v)
            except ValueError:
                conv[k] = v
        out.append(conv)
    return out
