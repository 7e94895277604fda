"""Command-line entry point: ``trendeq {fit,simulate,benchmark,classify,plotdata}``.

Config files are flat ``key = value`` text (``#`` starts a comment, lists are
comma separated). Command-line flags override values read from a file.

Exit codes: 0 success, 1 input/output failure, 2 invalid input or estimation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import benchmark as bm
from . import classify as cl
from . import diagnostics as dg
from .core import (SCHEMA_VERSION, SIGMOID, STEP, CandidateWindow, EstimationError,
                   deserialize_fit, dump_json, load_json, read_series_csv, serialize_fit,
                   write_series_csv)
from .detect import (FIXED_TAU_HOURS, SigmoidConfig, StepSearchConfig, TrendConfig,
                     fit_fixed_tau, fit_multivariate, fit_sigmoid, fit_step,
                     serialize_multifit)
from .simgen import ScenarioSpec, gen_scenario, replicate_seeds

log = logging.getLogger("trendeq")

EXIT_OK, EXIT_IO, EXIT_DOMAIN = 0, 1, 2


class ConfigError(ValueError):
    pass


# -- config files ---------------------------------------------------------------

def parse_config(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; later duplicates override earlier ones."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{n}: empty key")
        out[key.replace("-", "_")] = value
    return out


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "random") else float(text)


SCENARIO_KEYS = {
    "T": int, "horizon_hours": float, "tau_hours": _floats, "d": float, "trend": str,
    "gp_variance": float, "gp_lengthscale": float, "equilibrium": str, "phi": _opt_float,
    "theta_ma": _opt_float, "eps_sd": float, "noise": str, "noise_sd": float, "p": int,
    "seed": int,
}
TREND_KEYS = {"degree": int, "knots_f": float, "knots_h": float, "knot_origin": float,
              "max_iters": int}
SWEEP_KEYS = {"d_values": _floats, "reps": int, "methods": str, "tau_a": float,
              "tau_b": float, "c_penalty": float, "fixed_tau": float, "workers": int}


def _convert(cfg: dict[str, str], schema: dict, where: str) -> dict:
    out = {}
    for key, text in cfg.items():
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            out[key] = schema[key](text)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    return out


def _scenario(values: dict) -> ScenarioSpec:
    fields = {k: v for k, v in values.items() if k in SCENARIO_KEYS}
    return ScenarioSpec(**fields)


def _trend_config(values: dict) -> TrendConfig:
    return TrendConfig(degree=values.get("degree", 3),
                       knot_spacing_f=values.get("knots_f", 1.0),
                       knot_spacing_h=values.get("knots_h", 5.0),
                       knot_origin=values.get("knot_origin", 0.0),
                       max_iters=values.get("max_iters", 10))


# -- commands ---------------------------------------------------------------------

def cmd_fit(args) -> int:
    ms = read_series_csv(args.input)
    values = _convert(parse_config(args.config), {**TREND_KEYS, **SWEEP_KEYS}, args.config) \
        if args.config else {}
    for key in ("tau_a", "tau_b", "degree", "knots_f", "knots_h", "c_penalty"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    trend = _trend_config(values)
    window = CandidateWindow(values.get("tau_a", 10.0), values.get("tau_b", 50.0))
    step_cfg = StepSearchConfig(window=window, trend=trend, workers=args.workers)
    sig_cfg = SigmoidConfig(window=window, C=values.get("c_penalty", 1000.0),
                            auto_C=args.auto_c, trend=trend)

    if args.multivariate:
        if args.method == "fixed":
            raise ConfigError("--multivariate supports the step and sigmoid methods only")
        if ms.p < 2:
            raise ConfigError("--multivariate needs at least two value columns")
        mf = fit_multivariate(ms, args.method, step_cfg if args.method == STEP else sig_cfg)
        doc = serialize_multifit(mf)
    else:
        if args.column is not None:
            labels = [ts.label for ts in ms]
            if args.column not in labels:
                raise ConfigError(f"no column {args.column!r} in {args.input}")
            ts = ms[labels.index(args.column)]
        elif ms.p == 1:
            ts = ms[0]
        else:
            raise ConfigError(f"{args.input} has {ms.p} value columns; "
                              "pass --column or --multivariate")
        if args.method == STEP:
            fit = fit_step(ts, step_cfg)
        elif args.method == SIGMOID:
            fit = fit_sigmoid(ts, sig_cfg)
        else:
            tau = args.tau if args.tau is not None else values.get("fixed_tau", FIXED_TAU_HOURS)
            fit = fit_fixed_tau(ts, tau, trend)
        doc = serialize_fit(fit)
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    values = _convert(parse_config(args.spec), SCENARIO_KEYS, args.spec)
    if args.seed is not None:
        values["seed"] = args.seed
    spec = _scenario(values)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for r, seq in enumerate(replicate_seeds(spec.seed, args.reps)):
        scen = gen_scenario(spec, seed=seq)
        name = f"series_{r:04d}.csv"
        write_series_csv(scen.data, out / name)
        records.append({"replicate": r, "file": name,
                        "series": [t.to_dict() for t in scen.truth]})
    dump_json({"schema_version": SCHEMA_VERSION, "spec": spec.to_dict(), "reps": args.reps,
               "replicates": records}, out / "truth.json")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    raw = parse_config(args.sweep) if args.sweep else {}
    values = _convert(raw, {**SCENARIO_KEYS, **TREND_KEYS, **SWEEP_KEYS},
                      args.sweep or "<flags>")
    for key in ("reps", "seed", "workers"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.methods is not None:
        values["methods"] = args.methods
    methods = tuple(m.strip() for m in values.get("methods", ",".join(bm.METHODS)).split(",")
                    if m.strip())
    scenario = _scenario({k: v for k, v in values.items()
                          if k in SCENARIO_KEYS and k not in ("tau_hours", "d", "p", "seed")})
    cfg = bm.SweepConfig(
        tau_hours=values.get("tau_hours", (15.0, 30.0, 45.0)),
        d_values=values.get("d_values", (-0.25, 0.35, 0.95, 1.35)),
        reps=values.get("reps", 20), methods=methods, seed=values.get("seed", 0),
        scenario=scenario,
        window=CandidateWindow(values.get("tau_a", 10.0), values.get("tau_b", 50.0)),
        C=values.get("c_penalty", 1000.0),
        fixed_tau_hours=values.get("fixed_tau", FIXED_TAU_HOURS),
        trend=_trend_config(values), workers=values.get("workers", 1))
    if cfg.reps < 0:
        raise ConfigError("reps must be non-negative")
    records = bm.run_sweep(cfg) if cfg.reps > 0 else []
    rows = bm.aggregate(records, cfg, timing=not args.no_timing) if records else []
    columns = [c for c in bm.REPORT_COLUMNS if not (args.no_timing and c == "runtime_mean_s")]
    bm.write_rows(rows, args.out, columns)
    if args.raw:
        raw_cols = ["tau_hours", "d", "rep", "method", "tau_hat", "d_hat", "ok", "error"]
        if not args.no_timing:
            raw_cols.append("runtime_s")
        bm.write_rows(records, args.raw, raw_cols)
    return EXIT_OK


def cmd_classify(args) -> int:
    data = cl.read_feature_csv(args.features)
    if args.columns:
        names = [c.strip() for c in args.columns.split(",")]
        missing = [n for n in names if n not in data[0].names]
        if missing:
            raise ConfigError(f"unknown feature columns {missing}")
        data = [fv.select(names) for fv in data]
    rhos = tuple(args.rho) if args.rho else (1.0, 0.0)
    report = cl.accuracy_report(data, rhos=rhos)
    _emit_json(report, args.out)
    return EXIT_OK


def cmd_plotdata(args) -> int:
    src = Path(args.input)
    if args.kind == "benchmark":
        if src.suffix.lower() != ".csv":
            raise ConfigError("--kind benchmark expects a benchmark report CSV")
        rows = dg.benchmark_long_table(bm.read_rows(src))
        dg.write_table(rows, args.out, ["schema_version", "tau_hours", "d", "method",
                                        "statistic", "value"])
        return EXIT_OK
    if src.suffix.lower() != ".json":
        raise ConfigError(f"--kind {args.kind} expects a fit result JSON")
    doc = load_json(src)
    if doc.get("kind") == "multivariate":
        fits = [deserialize_fit(f) for f in doc["per_series"]]
    elif "kind" in doc and "beta" in doc:
        fits = [deserialize_fit(doc)]
    else:
        raise ConfigError(f"{src} is not a fit result")
    if not args.series:
        raise ConfigError(f"--kind {args.kind} needs --series with the fitted data")
    ms = read_series_csv(args.series)
    if len(fits) > 1 and ms.p != len(fits):
        raise ConfigError("series file and multivariate fit disagree on the number of series")
    j = args.index
    if not 0 <= j < len(fits):
        raise ConfigError(f"--index {j} out of range")
    fit, ts = fits[j], ms[j if len(fits) > 1 else min(j, ms.p - 1)]
    table = {"fit-overlay": dg.fit_overlay_table, "residuals": dg.residual_table,
             "transition": dg.transition_table}[args.kind](fit, ts)
    dg.write_table(table, args.out)
    return EXIT_OK


def _emit_json(doc: dict, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        dump_json(doc, out)


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trendeq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="estimate the change point of a series CSV")
    f.add_argument("input")
    f.add_argument("--config")
    f.add_argument("--method", choices=("step", "sigmoid", "fixed"), default="step")
    f.add_argument("--tau-a", type=float)
    f.add_argument("--tau-b", type=float)
    f.add_argument("--tau", type=float, help="change point for --method fixed (hours)")
    f.add_argument("--knots-f", type=float, help="mean-spline knot spacing (hours)")
    f.add_argument("--knots-h", type=float, help="variance-spline knot spacing (hours)")
    f.add_argument("--degree", type=int)
    f.add_argument("--c-penalty", type=float)
    f.add_argument("--auto-c", action="store_true",
                   help="set C to the magnitude of the full-series trend log-likelihood")
    f.add_argument("--multivariate", action="store_true")
    f.add_argument("--column")
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--out", default="-")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="write simulated series and their truth records")
    s.add_argument("spec")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("benchmark", help="simulation sweep over change points and d")
    b.add_argument("sweep", nargs="?")
    b.add_argument("--methods")
    b.add_argument("--reps", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--raw", help="also write per-replicate records to this CSV")
    b.add_argument("--no-timing", action="store_true",
                   help="omit wall-clock columns so reruns are byte-identical")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_benchmark)

    c = sub.add_parser("classify", help="leave-one-group-out discriminant analysis")
    c.add_argument("features")
    c.add_argument("--rho", type=float, action="append",
                   help="1 for LDA, 0 for QDA; repeatable (default both)")
    c.add_argument("--columns", help="comma-separated feature subset")
    c.add_argument("--out", default="-")
    c.set_defaults(func=cmd_classify)

    d = sub.add_parser("plotdata", help="tables for fit overlays, residuals and benchmarks")
    d.add_argument("input")
    d.add_argument("--kind", choices=dg.KINDS, required=True)
    d.add_argument("--series", help="series CSV the fit was computed on")
    d.add_argument("--index", type=int, default=0, help="series index for multivariate fits")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"trendeq: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EstimationError, ValueError, KeyError, TypeError) as exc:
        print(f"trendeq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
