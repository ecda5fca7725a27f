"""Command-line entry point: ``hiercombine <command> ...``.

Commands
--------
estimate   classical pooled or regression estimates
fit-ubm    univariate hierarchical model fit (draws + summary)
fit-bbm    bivariate hierarchical model fit (draws + summary)
ppc        posterior predictive p-value of a bivariate fit
simulate   simulation study from a scenario file
weights    standardised per-source weights

Exit status is 0 on success, 2 for invalid input, 3 when the sampler fails
and 4 for internal errors.  Identical flags and inputs give byte-identical
output files; all randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bbm import PARAMETERIZATIONS, bbm_shrinkage, fit_bbm, params_from_draws
from .checking import ppc_pvalue
from .classical import (
    WeightMode,
    linear_fit,
    raw_mean,
    trimmed_weighted_mean,
    trimmed_weights,
    weighted_mean,
)
from .data import Dataset, from_arrays, load_csv
from .errors import (
    HierCombineError,
    MissingDrawsFile,
    SamplerError,
    SchemaError,
    ValidationError,
)
from .mcmc import DEFAULT_SEED, FitConfig, PosteriorDraws
from .mcmc.io import dump_json, read_draws, write_draws
from .simulation import (
    METRIC_COLUMNS,
    ScenarioSpec,
    scenario_catalogue,
    run_study,
    theta_recovery_report,
    theta_rows_to_csv,
)
from .ubm import fit_ubm, ubm_weights

#: Version of the JSON output layout (independent of the package version).
FORMAT_VERSION = "1"

EXIT_OK, EXIT_INPUT, EXIT_SAMPLER, EXIT_INTERNAL = 0, 2, 3, 4

SCHEMA_DIR = Path(__file__).parent / "schemas"

_COVARIATE_METHODS = {"raw": "lr", "weighted": "wlr", "trimmed": "twlr"}


# --- output helpers --------------------------------------------------------------


def _envelope(kind: str, args, **payload) -> dict:
    return {"schema": f"hiercombine/{kind}", "version": FORMAT_VERSION,
            "package_version": __version__, "command": args.command, "seed": args.seed,
            **payload}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in header])
    return buf.getvalue()


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def _out_dir(args, required: bool = False) -> Path | None:
    if args.out is None:
        return Path(".") if required else None
    return Path(args.out)


def _table(args, kind, header, rows, stem, out=None, **extra):
    """Write a table as CSV or as a JSON envelope to ``<out>/<stem>.<fmt>`` (or stdout)."""
    out = out if out is not None else _out_dir(args)
    path = None if out is None else out / f"{stem}.{args.format}"
    if args.format == "json":
        text = dump_json(_envelope(kind, args, columns=list(header), rows=rows, **extra))
    else:
        text = _csv_text(header, rows)
    _emit(text, path)
    return path


# --- data --------------------------------------------------------------------------


def _load(args, use_covariates: bool = True) -> Dataset:
    ds = load_csv(args.data, add_intercept=not getattr(args, "no_intercept", False))
    if not use_covariates and ds.has_covariates:
        ds = from_arrays(ds.y, ds.s, None, ds.source_ids)
    return ds


# --- estimate ----------------------------------------------------------------------


ESTIMATE_COLUMNS = ("method", "parameter", "point", "ci_low", "ci_high", "se")
WEIGHT_COLUMNS = ("source_id", "s", "weight", "lambda")


def _weight_rows(ds: Dataset, weights) -> list:
    w = np.asarray(weights, dtype=float)
    lam = w / w.sum()
    return [{"source_id": sid, "s": float(s), "weight": float(a), "lambda": float(b)}
            for sid, s, a, b in zip(ds.source_ids, ds.s, w, lam)]


def cmd_estimate(args) -> int:
    ds = _load(args, use_covariates=args.covariates)
    if args.covariates and not ds.has_covariates:
        raise ValidationError("--covariates given but the file has no x1..xp columns")
    names = ["raw", "weighted", "trimmed"] if args.method == "all" else [args.method]
    rows, weight_sets = [], {}
    for name in names:
        if args.covariates:
            mode = {"raw": WeightMode.UNWEIGHTED, "weighted": WeightMode.INVERSE_VARIANCE,
                    "trimmed": WeightMode.TRIMMED}[name]
            ests, wv = linear_fit(ds, mode, trim_factor=args.trim_factor,
                                  bootstrap_B=args.bootstrap, seed=args.seed)
            rows += [e.to_dict() for e in ests]
            if name != "raw":
                weight_sets[_COVARIATE_METHODS[name]] = wv.weights
        elif name == "raw":
            rows.append(raw_mean(ds).to_dict())
        elif name == "weighted":
            est, wv = weighted_mean(ds)
            rows.append(est.to_dict())
            weight_sets[name] = wv.weights
        else:
            est, wv = trimmed_weighted_mean(ds, args.trim_factor, args.bootstrap, args.seed)
            rows.append(est.to_dict())
            weight_sets[name] = wv.weights
    _table(args, "estimate", ESTIMATE_COLUMNS, rows, "estimate", n_sources=ds.n)
    out = _out_dir(args)
    if out is not None:
        for method, w in weight_sets.items():
            _table(args, "weights", WEIGHT_COLUMNS, _weight_rows(ds, w), f"weights_{method}",
                   method=method)
    return EXIT_OK


# --- fits --------------------------------------------------------------------------


def _parse_prior(text: str):
    if "=" not in text:
        raise ValidationError(f"--prior expects name=value, got {text!r}")
    name, value = text.split("=", 1)
    try:
        return name.strip(), float(value)
    except ValueError:
        raise ValidationError(f"--prior {name}: cannot parse {value!r} as a number") from None


def _fit_config(args) -> FitConfig:
    base = FitConfig.fast() if args.fast else FitConfig()
    changes = {"seed": args.seed}
    for flag, field in (("chains", "chains"), ("iter", "iterations"), ("warmup", "warmup"),
                        ("thin", "thin"), ("target_accept", "target_accept"),
                        ("max_tree_depth", "max_tree_depth")):
        v = getattr(args, flag)
        if v is not None:
            changes[field] = v
    if args.iter is not None and args.warmup is None and base.warmup >= args.iter:
        changes["warmup"] = args.iter // 2
    priors = dict(_parse_prior(p) for p in args.prior or [])
    if priors:
        changes["priors"] = priors
    return base.with_(**changes)


SUMMARY_COLUMNS = ("parameter", "mean", "sd", "ci_low", "ci_high", "rhat", "ess")


def _write_fit(args, draws: PosteriorDraws) -> None:
    out = _out_dir(args, required=True)
    out.mkdir(parents=True, exist_ok=True)
    write_draws(draws, out / "draws.csv")
    summ = draws.summary()
    rows = [{"parameter": k, **v} for k, v in summ.items()]
    extra = {
        "model": draws.model,
        "n_draws": draws.n_draws,
        "converged": draws.converged,
        "max_rhat": draws.max_rhat,
        "divergences": int(np.sum(draws.divergences)),
        "config": draws.config.to_dict(),
        "fixed": draws.fixed,
    }
    _table(args, "fit-summary", SUMMARY_COLUMNS, rows, "summary", out=out, **extra)
    if not draws.converged:
        print(f"warning: not converged (max R-hat {draws.max_rhat:.3f})", file=sys.stderr)


def _sigma_s_option(text):
    if text is None or text == "empirical":
        return text
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"--fix-sigma-s expects 'empirical' or a number, got {text!r}") \
            from None


def cmd_fit_ubm(args) -> int:
    ds = _load(args, use_covariates=not args.no_covariates)
    draws = fit_ubm(ds, _fit_config(args), tau=args.tau)
    _write_fit(args, draws)
    return EXIT_OK


def cmd_fit_bbm(args) -> int:
    ds = _load(args, use_covariates=not args.no_covariates)
    draws = fit_bbm(ds, _fit_config(args), fix_sigma_s=_sigma_s_option(args.fix_sigma_s),
                    parameterization=args.parameterization)
    _write_fit(args, draws)
    return EXIT_OK


# --- ppc and weights ---------------------------------------------------------------


def _read_model_draws(path, model: str) -> PosteriorDraws:
    if path is None:
        raise MissingDrawsFile(f"--method {model} needs --draws (a {model} draw file)")
    draws = read_draws(path)
    if draws.model != model:
        raise SchemaError(f"{path}: draws are from model {draws.model!r}, expected {model!r}")
    return draws


def _check_sources(ds: Dataset, draws: PosteriorDraws) -> None:
    if f"theta[{ds.n}]" not in draws or f"theta[{ds.n + 1}]" in draws:
        raise ValidationError(f"the draw file does not match the dataset's {ds.n} sources")


def cmd_ppc(args) -> int:
    ds = _load(args)
    draws = _read_model_draws(args.draws, "bbm")
    _check_sources(ds, draws)
    res = ppc_pvalue(ds, draws, seed=args.seed)
    if args.pairs:
        rows = [{"draw": k + 1, "t_obs": float(a), "t_rep": float(b)}
                for k, (a, b) in enumerate(zip(res.t_obs, res.t_rep))]
        _emit(_csv_text(("draw", "t_obs", "t_rep"), rows), Path(args.pairs))
    out = _out_dir(args)
    path = None if out is None else out / f"ppc.{args.format}"
    if args.format == "json":
        text = dump_json(_envelope("ppc", args, **res.to_dict()))
    else:
        text = _csv_text(("p_value", "n_draws"), [res.to_dict()])
    _emit(text, path)
    return EXIT_OK


def cmd_weights(args) -> int:
    ds = _load(args)
    method = args.method
    if method == "weighted":
        w = 1.0 / ds.s**2
    elif method == "trimmed":
        w = trimmed_weights(ds.s, args.trim_factor)
    elif method == "ubm":
        draws = _read_model_draws(args.draws, "ubm")
        _check_sources(ds, draws)
        tau = draws.mean("tau") if "tau" in draws else float(draws.fixed["tau"])
        w = ubm_weights(tau, ds.s)
    else:
        draws = _read_model_draws(args.draws, "bbm")
        _check_sources(ds, draws)
        w = bbm_shrinkage(ds, params_from_draws(draws, ds.n)).xi
    _table(args, "weights", WEIGHT_COLUMNS, _weight_rows(ds, w), f"weights_{method}",
           method=method)
    return EXIT_OK


# --- simulate ------------------------------------------------------------------------


def load_scenario_file(path) -> dict:
    """Read and validate a scenario file against ``scenario_config.schema.json``."""
    import jsonschema

    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    schema = json.loads((SCHEMA_DIR / "scenario_config.schema.json").read_text())
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{path}: {loc}: {exc.message}") from None
    return cfg


def _scenarios(cfg: dict, seed: int, n_reps: int | None) -> list:
    catalogue = None
    specs = []
    for entry in cfg["scenarios"]:
        if isinstance(entry, str):
            catalogue = catalogue or scenario_catalogue(seed=seed)
            if entry not in catalogue:
                raise ValidationError(f"unknown catalogue scenario {entry!r}")
            d = catalogue[entry].to_dict()
        else:
            d = {"seed": seed, **entry}
        if n_reps is not None:
            d["n_reps"] = n_reps
        specs.append(ScenarioSpec.from_dict(d))
    return specs


def cmd_simulate(args) -> int:
    cfg = load_scenario_file(args.config)
    n_reps = args.reps
    if args.paper_scale:
        n_reps = n_reps or 500
        fit = FitConfig(seed=args.seed)
    elif args.fast:
        fit = FitConfig.fast(seed=args.seed)
    else:
        fit = FitConfig(seed=args.seed).with_(**cfg.get("fit", {}))
    specs = _scenarios(cfg, args.seed, n_reps)
    fix = cfg.get("fix_sigma_s")
    if args.fix_sigma_s is not None:
        fix = _sigma_s_option(args.fix_sigma_s)

    def progress(k, total):
        print(f"\r{k}/{total} replicates", end="" if k < total else "\n", file=sys.stderr)

    study = run_study(specs, cfg["methods"], fit, fix_sigma_s=fix,
                      bootstrap_B=cfg.get("bootstrap_B", 1000), workers=args.workers,
                      progress=progress if args.progress else None)
    out = _out_dir(args, required=True)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{c: getattr(r, c) for c in METRIC_COLUMNS} for r in study.rows]
    _table(args, "metrics", METRIC_COLUMNS, rows, "metrics", out=out,
           scenarios=[s.to_dict() for s in specs], fit_config=fit.to_dict(),
           fix_sigma_s=fix)
    study.records_to_csv(out / "replicates.csv")
    if args.theta_report:
        for spec in specs:
            if not spec.regression:
                rows_t = theta_recovery_report(spec, fit, fix_sigma_s=fix)
                theta_rows_to_csv(rows_t, out / f"theta_{spec.name}.csv")
    return EXIT_OK


# --- parser --------------------------------------------------------------------------


def _add_fit_flags(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=int)
    g.add_argument("--iter", type=int, help="iterations per chain, warm-up included")
    g.add_argument("--warmup", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--target-accept", type=float)
    g.add_argument("--max-tree-depth", type=int)
    g.add_argument("--prior", action="append", metavar="NAME=VALUE",
                   help="override a prior setting (tau, r_theta, r_sigma, sigma_s, lkj_eta, "
                        "beta_sd, mu_sd); repeatable")
    g.add_argument("--fast", action="store_true",
                   help="2 chains x 1500 iterations, 500 warm-up, thin 1")
    p.add_argument("--no-covariates", action="store_true",
                   help="ignore x1..xp columns and fit the pooled-mean model")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"seed of every random stream (default {DEFAULT_SEED})")
    common.add_argument("--out", help="output directory (stdout for single tables when absent)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = argparse.ArgumentParser(prog="hiercombine", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="classical estimators")
    p.add_argument("data")
    p.add_argument("--method", choices=("raw", "weighted", "trimmed", "all"), default="all")
    p.add_argument("--covariates", action="store_true",
                   help="regress on x1..xp (LR, WLR, TWLR) instead of pooling")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--trim-factor", type=float, default=3.0)
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap resamples")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit-ubm", parents=[common], help="univariate hierarchical model")
    p.add_argument("data")
    _add_fit_flags(p)
    p.add_argument("--tau", type=float, help="hold the between-source sd fixed")
    p.set_defaults(func=cmd_fit_ubm)

    p = sub.add_parser("fit-bbm", parents=[common], help="bivariate hierarchical model")
    p.add_argument("data")
    _add_fit_flags(p)
    p.add_argument("--fix-sigma-s", metavar="empirical|VALUE",
                   help="hold sigma_s fixed at the sd of log s or at VALUE")
    p.add_argument("--parameterization", choices=PARAMETERIZATIONS, default="collapsed")
    p.set_defaults(func=cmd_fit_bbm)

    p = sub.add_parser("ppc", parents=[common], help="posterior predictive p-value")
    p.add_argument("data")
    p.add_argument("--draws", required=True, help="draw CSV written by fit-bbm")
    p.add_argument("--pairs", metavar="CSV", help="also write per-draw (t_obs, t_rep)")
    p.set_defaults(func=cmd_ppc)

    p = sub.add_parser("simulate", parents=[common], help="simulation study")
    p.add_argument("config", help="scenario file (JSON)")
    p.add_argument("--fast", action="store_true", help="fast sampler profile")
    p.add_argument("--paper-scale", action="store_true",
                   help="500 replicates with the full sampler profile")
    p.add_argument("--reps", type=int, help="override every scenario's n_reps")
    p.add_argument("--fix-sigma-s", metavar="empirical|VALUE")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--theta-report", action="store_true",
                   help="per-source theta table for each pooled scenario (replicate 0)")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("weights", parents=[common], help="standardised weights")
    p.add_argument("data")
    p.add_argument("--method", choices=("weighted", "trimmed", "ubm", "bbm"), required=True)
    p.add_argument("--draws", help="draw CSV (ubm and bbm)")
    p.add_argument("--trim-factor", type=float, default=3.0)
    p.set_defaults(func=cmd_weights)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except HierCombineError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 4
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
