"""Command-line front end: simulate, fit, test, mc sweeps, empirical pipeline.

Every command is a pure function of its inputs, flags, and seed;
re-running writes byte-identical JSON (wall-clock time lives only in the
``mc`` manifest). Exit codes: 0 success, 2 usage, 3 data error, 4
numerical failure.
"""

from __future__ import annotations

import argparse
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import fdb_test
from .dgp import DEFAULT_BURN_IN, SystemParams, build_block_var, simulate, spec_to_config
from .errors import DataError, NumericalError
from .estimators import (
    bc_gd_fit,
    fgls_co_fit,
    fglsd_fit,
    gd_fit,
    ols_fit,
    select_lag_bic,
)
from .inference import (
    alpha_zero_restriction,
    grs_test,
    har_fixed_b_test,
    wald,
)
from .io import (
    SCHEMA_VERSION,
    dump_json,
    jsonable,
    load_csv_panel,
    load_panel_csv,
    save_panel_csv,
    schema_from_json,
    validate_report,
)
from .montecarlo import McConfig, run_accuracy, run_power, run_size
from .numerics import RngStream

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class _Parser(argparse.ArgumentParser):
    """argparse with machine-readable usage errors on stderr."""

    def error(self, message):
        sys.stderr.write(dump_json({"error": "usage", "message": message}))
        raise SystemExit(EXIT_USAGE)


def _resolve_p(panel, raw: str, p_max: int) -> int:
    if raw == "auto":
        return select_lag_bic(panel, p_max)
    return int(raw)


def _fit_by_name(panel, method: str, p: int, seed: int, b_bias: int):
    if method == "ols":
        return ols_fit(panel)
    if method == "fgls-co":
        return fgls_co_fit(panel, p)
    if method == "fgls-d":
        return fglsd_fit(panel, p)
    if method == "gd":
        return gd_fit(panel, p)
    if method == "bc-gd":
        return bc_gd_fit(panel, p, b_bias, RngStream(seed))
    raise ValueError(f"unknown method {method!r}")


def _cmd_simulate(args) -> int:
    spec = build_block_var(
        args.regime.upper(), args.r, args.n, rng=RngStream(args.seed).child(0)
    )
    alpha = np.zeros(args.n)
    alpha[0] = args.alpha1
    params = SystemParams(n=args.n, r=args.r, alpha=alpha, beta=np.ones(args.n * args.r))
    panel = simulate(spec, params, args.t, args.burn_in, rng=RngStream(args.seed).child(1))
    out = args.out or "panel.csv"
    save_panel_csv(panel, out)
    if args.dump_spec:
        Path(args.dump_spec).write_text(spec_to_config(spec), encoding="utf-8")
    print(f"wrote {panel.t}x({panel.n}+{panel.r}) panel to {out}")
    return 0


def _cmd_fit(args) -> int:
    panel = load_panel_csv(args.infile)
    p = 0 if args.method == "ols" else _resolve_p(panel, args.p, args.p_max)
    fit = _fit_by_name(panel, args.method, p, args.seed, args.b_bias)
    report = {
        "schema_version": SCHEMA_VERSION,
        "method": fit.method,
        "p_used": fit.p_used,
        "t_eff": fit.t_eff,
        "n": panel.n,
        "r": panel.r,
        "kappa_hat": jsonable(fit.kappa_hat),
        "alpha_hat": jsonable(fit.alpha_hat),
        "beta_hat": jsonable(fit.beta_hat),
        "sigma_uu_hat": jsonable(fit.sigma_uu_hat),
        "v_hat": jsonable(fit.v_hat) if fit.v_hat is not None else None,
        "seed": args.seed if args.method == "bc-gd" else None,
    }
    validate_report(report, "fit")
    _write_or_print(report, args.out)
    return 0


def _test_report(outcome, p_used: int | None, seed: int | None) -> dict:
    aux = {
        k: jsonable(v)
        for k, v in outcome.aux.items()
        if not isinstance(v, np.ndarray)
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "method": outcome.method,
        "statistic": float(outcome.statistic),
        "p_value": float(outcome.p_value),
        "df": outcome.reference.get("df") or outcome.reference.get("q"),
        "reference": jsonable(outcome.reference),
        "p_used": p_used,
        "aux": aux,
        "seed": seed,
    }


def _cmd_test(args) -> int:
    panel = load_panel_csv(args.infile)
    restr = alpha_zero_restriction(panel.n, panel.r)
    method = args.method
    seed = None
    if method in ("grs", "har"):
        p_used = None
    else:
        p_used = _resolve_p(panel, args.p, args.p_max)
    if method == "wald-gd":
        outcome = wald(gd_fit(panel, p_used), restr)
    elif method == "wald-fgls-d":
        outcome = wald(fglsd_fit(panel, p_used), restr)
    elif method == "wald-fgls-co":
        outcome = wald(fgls_co_fit(panel, p_used), restr)
    elif method == "grs":
        outcome = grs_test(panel)
    elif method == "har":
        outcome = har_fixed_b_test(panel, restr, b=args.b)
    elif method == "fdb":
        seed = args.seed
        outcome = fdb_test(panel, restr, p_used, args.b1, RngStream(args.seed))
        if args.dump_bootstrap:
            _dump_bootstrap_csv(outcome, args.dump_bootstrap)
    else:
        raise ValueError(f"unknown test {method!r}")
    report = _test_report(outcome, p_used, seed)
    validate_report(report, "test")
    _write_or_print(report, args.out)
    return 0


def _dump_bootstrap_csv(outcome, path) -> None:
    w_star = outcome.aux.get("w_star")
    w_inner = outcome.aux.get("w_inner")
    lines = ["b,w_star,w_inner"]
    for i, (a, b) in enumerate(zip(w_star, w_inner), start=1):
        lines.append(f"{i},{float(a)!r},{float(b)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_flat_config(path) -> dict:
    """Parse the flat key=value config grammar (see README)."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def _mc_configs(raw: dict, threads: int):
    t_values = [int(v) for v in str(raw.get("t", "400")).split(",")]
    kwargs = {
        "mode": raw.get("mode", "size"),
        "regime": raw.get("regime", "BD").upper(),
        "n": int(raw.get("n", 5)),
        "r": int(raw.get("r", 2)),
        "reps": int(raw.get("reps", 1000)),
        "seed": int(raw.get("seed", 0)),
        "p": raw.get("p", "bic") if raw.get("p", "bic") == "bic" else int(raw["p"]),
        "p_max": int(raw.get("p_max", 4)),
        "b1": int(raw.get("b1", 199)),
        "b_bias": int(raw.get("b_bias", 100)),
        "b_har": float(raw["b_har"]) if "b_har" in raw else None,
        "burn_in": int(raw.get("burn_in", DEFAULT_BURN_IN)),
        "alternative_alpha1": float(raw.get("alternative_alpha1", 0.2)),
        "redraw_factors": _coerce(str(raw.get("redraw_factors", "true"))),
        "threads": threads,
    }
    if "levels" in raw:
        kwargs["levels"] = tuple(float(v) for v in raw["levels"].split(","))
    if "estimators" in raw:
        kwargs["estimators"] = tuple(v.strip() for v in raw["estimators"].split(","))
    if "tests" in raw:
        kwargs["tests"] = tuple(v.strip() for v in raw["tests"].split(","))
    return [McConfig(t=t, **kwargs) for t in t_values]


def _git_describe() -> str | None:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
            check=False,
        )
    except OSError:
        return None
    return res.stdout.strip() or None if res.returncode == 0 else None


def _cmd_mc(args) -> int:
    raw = _parse_flat_config(args.config)
    configs = _mc_configs(raw, args.threads)
    mode = configs[0].mode
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    rows = []
    for cfg in configs:
        if mode == "accuracy":
            res = run_accuracy(cfg)
            row = {"t": cfg.t}
            for name in cfg.estimators:
                row[f"{name}_bias"] = res.bias[name]
                row[f"{name}_mse"] = res.mse[name]
                row[f"{name}_failed"] = res.n_failed[name]
                row[f"{name}_invalid"] = res.invalid[name]
        else:
            res = run_size(cfg) if mode == "size" else run_power(cfg)
            row = {"t": cfg.t}
            for name in cfg.tests:
                for level in cfg.levels:
                    row[f"{name}_{level:g}"] = res.rates[name][level]
                    row[f"{name}_{level:g}_hw"] = res.half_width[name][level]
                row[f"{name}_failed"] = res.n_failed[name]
                row[f"{name}_invalid"] = res.invalid[name]
        rows.append(row)
    table_path = outdir / f"{mode}.csv"
    _write_csv_rows(table_path, rows)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "seed": configs[0].seed,
        "config": {k: jsonable(_coerce(v)) for k, v in raw.items()},
        "git_describe": _git_describe(),
        "wall_time_s": time.time() - started,
        "tables": [table_path.name],
    }
    validate_report(manifest, "mc_manifest")
    dump_json(manifest, outdir / "manifest.json")
    print(f"wrote {table_path} and manifest.json")
    return 0


def _write_csv_rows(path, rows) -> None:
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for key in header:
            value = row[key]
            if isinstance(value, (float, np.floating)):
                value = repr(float(value))
            cells.append(str(value))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_empirical(args) -> int:
    schema = schema_from_json(args.schema)
    n_factors = 3 if args.model == "ff3" else 5
    if len(schema.factor_cols) < n_factors:
        raise DataError(
            f"schema lists {len(schema.factor_cols)} factors; {args.model} needs {n_factors}"
        )
    schema = _slice_factors(schema, n_factors)
    date_range = (args.date_start, args.date_end) if args.date_start and args.date_end else None
    panel, dates = load_csv_panel(args.data, schema, date_range)
    p_used = _resolve_p(panel, args.p, args.p_max)
    restr = alpha_zero_restriction(panel.n, panel.r)
    outcomes = [
        fdb_test(panel, restr, p_used, args.b1, RngStream(args.seed)),
        wald(gd_fit(panel, p_used), restr),
        wald(fglsd_fit(panel, p_used), restr),
        wald(fgls_co_fit(panel, p_used), restr),
    ]
    report = {
        "schema_version": SCHEMA_VERSION,
        "model": args.model,
        "n": panel.n,
        "r": panel.r,
        "t": panel.t,
        "p_used": p_used,
        "date_range": [dates[0], dates[-1]],
        "stationarity_screening": (
            "not performed: unit-root screening of the input series is out of scope; "
            "apply it upstream if required"
        ),
        "seed": args.seed,
        "b1": args.b1,
        "tests": [_test_report(o, p_used, args.seed if o.method == "fdb" else None) for o in outcomes],
    }
    validate_report(report, "empirical")
    _write_or_print(report, args.out)
    return 0


def _slice_factors(schema, n_factors: int):
    """Restrict a panel schema to the first ``n_factors`` factor columns."""
    from dataclasses import replace

    return replace(schema, factor_cols=schema.factor_cols[:n_factors])


def _write_or_print(report: dict, out) -> None:
    text = dump_json(report, out)
    if out is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gdsur", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a panel from a drawn block VAR")
    sim.add_argument("--regime", choices=["bd", "gexog", "ebd"], required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--r", type=int, required=True)
    sim.add_argument("--t", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN)
    sim.add_argument("--alpha1", type=float, default=0.0)
    sim.add_argument("--out", default=None)
    sim.add_argument("--dump-spec", default=None, help="also write the drawn VAR spec (flat config)")
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit one estimator to a panel CSV")
    fit.add_argument("--method", choices=["ols", "fgls-co", "fgls-d", "gd", "bc-gd"], required=True)
    fit.add_argument("--p", default="auto", help="lag order or 'auto' (BIC)")
    fit.add_argument("--p-max", type=int, default=4)
    fit.add_argument("--in", dest="infile", required=True)
    fit.add_argument("--out", default=None)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--b-bias", type=int, default=100)
    fit.set_defaults(func=_cmd_fit)

    tst = sub.add_parser("test", help="run one specification test on a panel CSV")
    tst.add_argument(
        "--method",
        choices=["wald-gd", "wald-fgls-d", "wald-fgls-co", "grs", "har", "fdb"],
        required=True,
    )
    tst.add_argument("--null", choices=["alpha-zero"], default="alpha-zero")
    tst.add_argument("--p", default="auto")
    tst.add_argument("--p-max", type=int, default=4)
    tst.add_argument("--b1", type=int, default=199)
    tst.add_argument("--b", type=float, default=None, help="fixed-b fraction (default: 1.3/sqrt(T))")
    tst.add_argument("--seed", type=int, default=0)
    tst.add_argument("--in", dest="infile", required=True)
    tst.add_argument("--out", default=None)
    tst.add_argument("--dump-bootstrap", default=None, help="CSV path for W*/W** diagnostics")
    tst.set_defaults(func=_cmd_test)

    mc = sub.add_parser("mc", help="Monte Carlo sweep from a flat config file")
    mc.add_argument("--config", required=True)
    mc.add_argument("--out", required=True)
    mc.add_argument("--threads", type=int, default=1)
    mc.set_defaults(func=_cmd_mc)

    emp = sub.add_parser("empirical", help="factor-model comparison on an external CSV")
    emp.add_argument("--data", required=True)
    emp.add_argument("--schema", required=True)
    emp.add_argument("--model", choices=["ff3", "ff5"], required=True)
    emp.add_argument("--p", default="auto")
    emp.add_argument("--p-max", type=int, default=4)
    emp.add_argument("--b1", type=int, default=199)
    emp.add_argument("--seed", type=int, default=0)
    emp.add_argument("--date-start", default=None)
    emp.add_argument("--date-end", default=None)
    emp.add_argument("--out", default=None)
    emp.set_defaults(func=_cmd_empirical)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, OSError) as exc:
        sys.stderr.write(dump_json({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_DATA
    except NumericalError as exc:
        sys.stderr.write(dump_json({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_NUMERICAL
    except ValueError as exc:
        sys.stderr.write(dump_json({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
