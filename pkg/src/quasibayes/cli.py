"""Command-line entry point: simulate, fit, sweep, prior-check, diagnose.

Exit status is 0 on success, 2 for invalid configuration and 1 for runtime
failures. Every run echoes its fully resolved configuration next to its
outputs; feeding that file back through ``--config`` (or ``--plan`` for
sweeps) reproduces the run.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_chain,
    build_dgp,
    build_sweep,
    dump,
    read_ini,
    resolve_chain,
    resolve_dgp,
    resolve_prior_text,
    resolve_sweep,
)
from .experiments import run_consistency_sweep
from .io import atomic_write_text, read_dataset_csv, read_draws_csv, write_dataset_csv, write_draws_csv, write_json
from .moments import PartitionSpec, ResidualModel
from .oracle import sample_dataset, sample_quantile_dataset, sample_regression_dataset
from .priors import MixturePriorSpec, marginal_sd, parse_prior, sample_prior
from .sampler import effective_sample_size, make_rng, marginal_q, mc_standard_error, run_chain
from .sieve import BasisSpec, gram_matrix

OUT_ENV = "QUASIBAYES_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _default_out(args_out, leaf: str) -> Path:
    if args_out:
        return Path(args_out)
    base = os.environ.get(OUT_ENV)
    if not base:
        raise ConfigError(f"out: no output path given and {OUT_ENV} is not set")
    return Path(base) / leaf


def _overlay(section: dict, **flags) -> dict:
    """Command-line flags win over config-file values."""
    out = dict(section)
    for key, value in flags.items():
        if value is not None:
            out[key] = value
    return out


def _load(path) -> dict:
    return read_ini(path) if path else {}


# simulate

def cmd_simulate(args) -> int:
    sections = _load(args.config)
    if args.dgp:
        sections.setdefault("dgp", {}).update(read_ini(args.dgp).get("dgp", {}))
    dgp_section = sections.get("dgp", {})
    if args.lambdas is not None:
        dgp_section = _overlay(dgp_section, decay="custom", lambdas=args.lambdas)
    dgp_res = resolve_dgp(dgp_section)
    sim = _overlay(sections.get("simulate", {}), n=args.n, seed=args.seed, model=args.model,
                   gamma=args.gamma, out=args.out)
    n = _int_field(sim, "n", None, "simulate")
    if n is None or n < 1:
        raise ConfigError("simulate.n: required, must be a positive integer")
    seed = _int_field(sim, "seed", 0, "simulate")
    model = str(sim.get("model", "npiv"))
    if model not in ("npiv", "regression", "quantile"):
        raise ConfigError("simulate.model: must be npiv, regression or quantile")
    gamma = float(sim.get("gamma", 0.5))
    out = _default_out(sim.get("out"), "data.csv")
    dgp = build_dgp(dgp_res)
    rng = make_rng(seed)
    if model == "npiv":
        data = sample_dataset(dgp, n, rng)
    elif model == "regression":
        data = sample_regression_dataset(dgp, n, rng)
    else:
        data = sample_quantile_dataset(dgp, n, gamma, rng)
    resolved = {
        "simulate": {"n": n, "seed": seed, "model": model, "gamma": gamma, "out": str(out)},
        "dgp": dgp_res,
    }
    write_dataset_csv(data, out)
    atomic_write_text(str(out) + ".config.ini", dump(resolved))
    print(f"wrote {n} rows to {out}")
    return 0


def _int_field(section: dict, key: str, default, where: str):
    raw = section.get(key)
    if raw is None or raw == "":
        return default
    try:
        value = float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: cannot parse {raw!r}") from exc
    if value != int(value):
        raise ConfigError(f"{where}.{key}: must be an integer, got {raw!r}")
    return int(value)


# fit

def resolve_fit(sections: dict) -> dict:
    fit = sections.get("fit", {})
    w = "fit"
    data = fit.get("data")
    if not data:
        raise ConfigError("fit.data: a dataset path is required")
    if not Path(data).is_file():
        raise ConfigError(f"fit.data: file not found: {data}")
    model = fit.get("model", "npiv")
    if model not in ("regression", "npiv", "quantile"):
        raise ConfigError("fit.model: must be regression, npiv or quantile")
    k = _int_field(fit, "k", None, w)
    q = _int_field(fit, "q", None, w)
    q_max = _int_field(fit, "q_max", None, w)
    if k is None or k < 1:
        raise ConfigError("fit.k: required, must be a positive integer")
    if q_max is None and (q is None or q < 1):
        raise ConfigError("fit.q: required (or give q_max), must be a positive integer")
    if q_max is not None and q_max < 1:
        raise ConfigError("fit.q_max: must be a positive integer")
    basis = fit.get("basis", "cosine")
    if basis not in ("cosine", "legendre"):
        raise ConfigError("fit.basis: must be cosine or legendre")
    probit = str(fit.get("probit", "false")).lower() in ("1", "true", "yes", "on")
    try:
        gamma = float(fit.get("gamma", 0.5))
        weight = float(fit.get("likelihood_weight", 1.0))
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}") from exc
    return {
        "fit": {
            "data": str(data), "model": model, "gamma": gamma,
            "prior": resolve_prior_text(fit.get("prior", "uniform"), "fit.prior"),
            "k": k, "q": None if q_max is not None else q, "q_max": q_max, "basis": basis,
            "probit": probit, "likelihood_weight": weight, "out": fit.get("out"),
        },
        "chain": resolve_chain(sections.get("chain", {})),
    }


def cmd_fit(args) -> int:
    sections = _load(args.config)
    sections["fit"] = _overlay(sections.get("fit", {}), data=args.data, model=args.model, prior=args.prior,
                               k=args.k, q=args.q, q_max=args.q_max, basis=args.basis, gamma=args.gamma,
                               out=args.out, probit="true" if args.probit else None)
    sections["chain"] = _overlay(sections.get("chain", {}), n_steps=args.steps, burn_in=args.burn_in,
                                 thin=args.thin, seed=args.seed)
    sections["chain"] = {k: str(v) for k, v in sections["chain"].items()}
    resolved = resolve_fit(sections)
    fit = resolved["fit"]
    out = _default_out(fit["out"], "fit")
    fit["out"] = str(out)
    config = build_chain(resolved["chain"])
    prior = parse_prior(fit["prior"])
    if fit["q_max"] is not None:
        try:
            prior = MixturePriorSpec(fit["q_max"], prior)
        except ValueError as exc:
            raise ConfigError(f"fit.prior: {exc}") from exc
    data = read_dataset_csv(fit["data"], probit=fit["probit"])
    model = ResidualModel(fit["model"], fit["gamma"])
    basis = BasisSpec(fit["basis"], data.dx)
    sample = run_chain(config, data, model, PartitionSpec(fit["k"], data.d), prior, basis,
                       q=fit["q"], likelihood_weight=fit["likelihood_weight"])
    write_draws_csv(sample, out / "draws.csv")
    summary = {
        "diagnostics": sample.diagnostics,
        "coef_mean": np.nanmean(sample.coeffs, axis=0),
        "coef_sd": np.nanstd(sample.coeffs, axis=0, ddof=1) if sample.n_draws > 1 else None,
        "marginal_q": marginal_q(sample),
    }
    write_json(out / "summary.json", summary)
    atomic_write_text(out / "config.ini", dump(resolved))
    print(f"wrote {sample.n_draws} draws to {out / 'draws.csv'}")
    return 0


# sweep

def cmd_sweep(args) -> int:
    sections = read_ini(args.plan)
    if args.threads is not None:
        sections["sweep"] = _overlay(sections.get("sweep", {}), threads=str(args.threads))
    if args.seed is not None:
        sections["sweep"] = _overlay(sections.get("sweep", {}), master_seed=str(args.seed))
    resolved = resolve_sweep(sections)
    plan, dgp = build_sweep(resolved)
    out = _default_out(args.out, "sweep")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.ini", dump(resolved))
    report = run_consistency_sweep(plan, dgp, out)
    failed = sum(1 for rec in report.records if rec["error"])
    print(f"wrote {len(report.records)} cells to {out / 'report.csv'} ({failed} failed)")
    return 0


# prior-check

def cmd_prior_check(args) -> int:
    params = {k: getattr(args, k) for k in ("B", "sigma", "beta", "r") if getattr(args, k) is not None}
    text = args.family + (":" + ",".join(f"{k}={v!r}" for k, v in params.items()) if params else "")
    spec = parse_prior(text)
    if args.draws < 2:
        raise ConfigError("prior-check.draws: must be at least 2")
    if args.q < 1:
        raise ConfigError("prior-check.q: must be a positive integer")
    rng = make_rng(args.seed)
    draws = sample_prior(spec, args.q, rng, size=args.draws)
    report = {"prior": spec.describe(), "q": args.q, "draws": args.draws, "seed": args.seed}
    if spec.kind == "thin_tail":
        norms = np.linalg.norm(draws, axis=1)
        rows = []
        for u in args.u:
            expected = math.exp(-((spec.beta * u) ** spec.r))
            empirical = float(np.mean(norms > u))
            se = math.sqrt(expected * (1.0 - expected) / args.draws)
            rows.append({"u": u, "empirical": empirical, "expected": expected, "se": se,
                         "within_3se": abs(empirical - expected) <= 3.0 * se})
        report["tail"] = rows
    else:
        sd = marginal_sd(spec, args.q)
        means = draws.mean(axis=0)
        variances = draws.var(axis=0, ddof=1)
        mean_se = sd / math.sqrt(args.draws)
        rows = []
        for j in range(args.q):
            rows.append({"coordinate": j + 1, "mean": float(means[j]), "expected_mean": 0.0,
                         "mean_se": mean_se, "sd": float(math.sqrt(variances[j])), "expected_sd": sd,
                         "within_3se": abs(float(means[j])) <= 3.0 * mean_se})
        report["moments"] = rows
    text_out = json.dumps(report, indent=2)
    if args.out:
        atomic_write_text(args.out, text_out + "\n")
    print(text_out)
    return 0


# diagnose

def cmd_diagnose(args) -> int:
    if args.what == "basis":
        if args.q is None or args.q < 1:
            raise ConfigError("diagnose.q: required, must be a positive integer")
        gram = gram_matrix(BasisSpec(args.kind, args.dim), args.q)
        dev = float(np.max(np.abs(gram - np.eye(args.q))))
        report = {"kind": args.kind, "dim": args.dim, "q": args.q,
                  "max_abs_gram_deviation": dev, "orthonormal": dev < 1e-8}
    else:
        if not args.draws or not Path(args.draws).is_file():
            raise ConfigError("diagnose.draws: an existing draws CSV is required")
        sample = read_draws_csv(args.draws)
        report = {"n_draws": sample.n_draws, "marginal_q": marginal_q(sample)}
        if sample.is_fixed_q:
            report["coefficients"] = [
                {"name": f"b_{j + 1}", "mean": float(np.mean(sample.coeffs[:, j])),
                 "ess": effective_sample_size(sample.coeffs[:, j]),
                 "mcse": mc_standard_error(sample.coeffs[:, j])}
                for j in range(sample.q_max)
            ]
        else:
            report["ess_q"] = effective_sample_size(sample.qs.astype(float))
    print(json.dumps(report, indent=2, default=float))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quasibayes", description="Quasi-Bayesian sieve estimation for conditional moment models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--config", help="INI file with [simulate] and [dgp] sections")
    p.add_argument("--dgp", help="INI file with a [dgp] section")
    p.add_argument("--lambdas", help="comma-separated custom spectrum (overrides the dgp decay)")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=("npiv", "regression", "quantile"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--out", help=f"output CSV (default ${OUT_ENV}/data.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="sample the quasi-posterior for a dataset")
    p.add_argument("--config", help="INI file with [fit] and [chain] sections")
    p.add_argument("--data")
    p.add_argument("--model", choices=("regression", "npiv", "quantile"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--prior", help="e.g. uniform:B=2, truncated_normal:sigma=1,B=3, thin_tail:beta=1,r=20, normal:sigma=2")
    p.add_argument("--k", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--q-max", dest="q_max", type=int)
    p.add_argument("--basis", choices=("cosine", "legendre"))
    p.add_argument("--steps", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--probit", action="store_true", default=None,
                   help="map raw instrument columns through the standard normal CDF")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/fit)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="run a consistency sweep")
    p.add_argument("--plan", required=True, help="INI file with [sweep], [rates], [chain] and [dgp] sections")
    p.add_argument("--threads", type=int, help="maximum worker processes")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/sweep)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("prior-check", help="Monte Carlo check of a prior family")
    p.add_argument("family", choices=("uniform", "truncated_normal", "thin_tail", "normal"))
    p.add_argument("--B", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--u", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    p.add_argument("--draws", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prior_check)

    p = sub.add_parser("diagnose", help="basis orthonormality or chain diagnostics")
    p.add_argument("what", choices=("basis", "draws"))
    p.add_argument("--kind", choices=("cosine", "legendre"), default="cosine")
    p.add_argument("--q", type=int)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--draws")
    p.set_defaults(func=cmd_diagnose)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
