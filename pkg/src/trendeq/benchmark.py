"""Simulation sweeps over change points, memory parameters and estimators.

Replicate ``r`` of cell ``(i_tau, i_d)`` is simulated from
``SeedSequence(seed, spawn_key=(i_tau, i_d, r))``, so a replicate's data do
not depend on which other cells, methods or workers are involved, and all
methods in a cell see paired data.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import SCHEMA_VERSION, CandidateWindow, EstimationError
from .detect import (FIXED_TAU_HOURS, SigmoidConfig, StepSearchConfig, TrendConfig,
                     fit_fixed_tau, fit_multivariate, fit_sigmoid, fit_step)
from .simgen import ScenarioSpec, gen_scenario

METHODS = ("step", "sigmoid", "fixedtau", "truetau")


@dataclass(frozen=True)
class SweepConfig:
    tau_hours: tuple[float, ...] = (15.0, 30.0, 45.0)
    d_values: tuple[float, ...] = (-0.25, 0.35, 0.95, 1.35)
    reps: int = 20
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    scenario: ScenarioSpec = ScenarioSpec()
    window: CandidateWindow = CandidateWindow(10.0, 50.0)
    C: float = 1000.0
    fixed_tau_hours: float = FIXED_TAU_HOURS
    trend: TrendConfig = TrendConfig()
    workers: int = 1

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")

    def cells(self):
        return [(i, j, t, d) for i, t in enumerate(self.tau_hours)
                for j, d in enumerate(self.d_values)]


def replicate_seed(seed: int, i_tau: int, i_d: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(i_tau, i_d, rep))


def fit_method(method: str, ts, true_tau: float, cfg: SweepConfig):
    if method == "step":
        return fit_step(ts, StepSearchConfig(window=cfg.window, trend=cfg.trend))
    if method == "sigmoid":
        return fit_sigmoid(ts, SigmoidConfig(window=cfg.window, C=cfg.C, trend=cfg.trend))
    if method == "fixedtau":
        return fit_fixed_tau(ts, cfg.fixed_tau_hours, cfg.trend)
    if method == "truetau":
        return fit_fixed_tau(ts, true_tau, cfg.trend)
    raise ValueError(method)


def run_replicate(task):
    """All methods on one simulated series; returns one record per method."""
    cfg, i_tau, i_d, rep = task
    tau, d = cfg.tau_hours[i_tau], cfg.d_values[i_d]
    spec = replace(cfg.scenario, tau_hours=(tau,), d=d, p=1)
    scen = gen_scenario(spec, seed=replicate_seed(cfg.seed, i_tau, i_d, rep))
    ts = scen.data[0]
    out = []
    for method in cfg.methods:
        rec = {"tau_hours": tau, "d": d, "rep": rep, "method": method,
               "tau_hat": float("nan"), "d_hat": float("nan"), "runtime_s": 0.0,
               "ok": True, "error": ""}
        t0 = time.perf_counter()
        try:
            fit = fit_method(method, ts, tau, cfg)
            rec["tau_hat"], rec["d_hat"] = float(fit.tau_hat), float(fit.d)
            if fit.alpha1 is not None:
                rec["slope"] = float(fit.alpha1)
        except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            rec["ok"], rec["error"] = False, f"{type(exc).__name__}: {exc}"
        rec["runtime_s"] = time.perf_counter() - t0
        out.append(rec)
    return out


def _map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, tasks, chunksize=1))
    return [fn(t) for t in tasks]


def run_sweep(cfg: SweepConfig) -> list[dict]:
    """Raw per-(cell, replicate, method) records in a fixed order."""
    tasks = [(cfg, i, j, r) for i, j, _, _ in cfg.cells() for r in range(cfg.reps)]
    records = [rec for part in _map(run_replicate, tasks, cfg.workers) for rec in part]
    order = {m: k for k, m in enumerate(cfg.methods)}
    records.sort(key=lambda r: (cfg.tau_hours.index(r["tau_hours"]),
                                cfg.d_values.index(r["d"]), order[r["method"]], r["rep"]))
    return records


def _quartiles(x):
    if len(x) == 0:
        return (float("nan"),) * 3
    q = np.quantile(np.sort(np.asarray(x, dtype=float)), [0.25, 0.5, 0.75])
    return tuple(float(v) for v in q)


REPORT_COLUMNS = ("schema_version", "tau_hours", "d", "method", "n_reps", "n_fail",
                  "tau_err_q1", "tau_err_median", "tau_err_q3",
                  "d_abserr_q1", "d_abserr_median", "d_abserr_q3",
                  "runtime_mean_s")


def aggregate(records: list[dict], cfg: SweepConfig, timing: bool = True) -> list[dict]:
    """Quartiles of ``tau_hat - tau`` (hours) and ``|d_hat - d|`` per cell and method."""
    rows = []
    for _, _, tau, d in cfg.cells():
        for method in cfg.methods:
            recs = [r for r in records
                    if r["tau_hours"] == tau and r["d"] == d and r["method"] == method]
            ok = [r for r in recs if r["ok"]]
            te = _quartiles([r["tau_hat"] - tau for r in ok])
            de = _quartiles([abs(r["d_hat"] - d) for r in ok])
            row = {"schema_version": SCHEMA_VERSION, "tau_hours": tau, "d": d,
                   "method": method, "n_reps": len(recs), "n_fail": len(recs) - len(ok),
                   "tau_err_q1": te[0], "tau_err_median": te[1], "tau_err_q3": te[2],
                   "d_abserr_q1": de[0], "d_abserr_median": de[1], "d_abserr_q3": de[2]}
            if timing:
                row["runtime_mean_s"] = float(np.mean([r["runtime_s"] for r in recs])) \
                    if recs else float("nan")
            rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows: list[dict], path: str | Path, columns=None) -> None:
    columns = list(columns or (rows[0].keys() if rows else REPORT_COLUMNS))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def read_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        conv = {}
        for k, v in row.items():
            try:
                conv[k] = int(v) if k in ("n_reps", "n_fail", "rep", "schema_version") else float(v)
            except (TypeError, ValueError):
                conv[k] = v
        out.append(conv)
    return out


# -- multivariate pooling study ---------------------------------------------------

@dataclass(frozen=True)
class MultiStudyConfig:
    d_values: tuple[float, ...] = (0.15, 0.95)
    tau_hours: tuple[float, ...] = (15.0, 25.0, 45.0)
    reps: int = 50
    seed: int = 0
    base: str = "step"
    scenario: ScenarioSpec = ScenarioSpec()
    window: CandidateWindow = CandidateWindow(10.0, 50.0)
    C: float = 1000.0
    trend: TrendConfig = TrendConfig()
    workers: int = 1


def run_multivariate_replicate(task):
    cfg, i_d, rep = task
    d = cfg.d_values[i_d]
    spec = replace(cfg.scenario, tau_hours=cfg.tau_hours, d=d, p=len(cfg.tau_hours))
    scen = gen_scenario(spec, seed=np.random.SeedSequence(cfg.seed, spawn_key=(i_d, rep)))
    if cfg.base == "step":
        fcfg = StepSearchConfig(window=cfg.window, trend=cfg.trend)
    else:
        fcfg = SigmoidConfig(window=cfg.window, C=cfg.C, trend=cfg.trend)
    rec = {"d": d, "rep": rep, "ok": True, "error": ""}
    t0 = time.perf_counter()
    try:
        mf = fit_multivariate(scen.data, cfg.base, fcfg)
        rec["d_shared"] = mf.d_shared
        rec["d_univariate"] = list(mf.univariate_d)
        rec["tau_hat"] = [f.tau_hat for f in mf.per_series]
    except EstimationError as exc:
        rec["ok"], rec["error"] = False, str(exc)
    rec["runtime_s"] = time.perf_counter() - t0
    return rec


def run_multivariate_study(cfg: MultiStudyConfig) -> list[dict]:
    tasks = [(cfg, i, r) for i in range(len(cfg.d_values)) for r in range(cfg.reps)]
    return _map(run_multivariate_replicate, tasks, cfg.workers)
