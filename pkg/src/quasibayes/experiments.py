"""Tuning schedules, oracle posterior summaries and Monte Carlo consistency sweeps."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .io import atomic_open, fmt, write_draws_csv, write_json
from .moments import PartitionSpec, ResidualModel
from .oracle import (
    NpivDgp,
    coefficient_gaps,
    dist_to_identified,
    distinguishing_bound,
    functional_h,
    sample_dataset,
    sample_regression_dataset,
    strong_norm,
    weak_norm_sq,
)
from .priors import MixturePriorSpec, PriorSpec
from .sampler import ChainConfig, InitializationError, PosteriorSample, make_rng, marginal_q, run_chain
from .sieve import BasisSpec


@dataclass(frozen=True)
class RateSpec:
    """Growth-rate indices feeding the tuning schedules.

    ``p`` is the partition exponent (``k ~ n^p``), ``b_exp`` the truncation
    exponent (``B^2 ~ n^b_exp``), ``alpha`` the ill-posedness index, ``v`` the
    sieve approximation index and ``margin`` shaves every growth exponent to
    stand in for the little-o requirements.
    """

    d: int = 1
    p: float = 0.2
    b_exp: float = 0.1
    alpha: float = 2.0
    v: float = 1.0
    r: float = 20.0
    margin: float = 0.9
    decay: str = "mild"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be a positive integer")
        if not 0 < self.p <= 1.0 / (3 * self.d + 2):
            raise ValueError(f"p must lie in (0, 1/(3d+2)] = (0, {1.0 / (3 * self.d + 2):.6g}], got {self.p}")
        if not 0 < self.margin < 1:
            raise ValueError("margin must lie in (0, 1)")
        if self.alpha <= 0 or self.v <= 0:
            raise ValueError("alpha and v must be positive")
        if self.decay not in ("mild", "severe"):
            raise ValueError("decay must be 'mild' or 'severe'")


@dataclass(frozen=True)
class Schedule:
    k: int
    q: int
    B: float | None


def tuning_schedule(n: int, rates: RateSpec, prior_kind: str) -> Schedule:
    """Partition size ``k``, sieve dimension ``q`` and truncation ``B`` for sample size ``n``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    k = math.ceil(n**rates.p)
    a, v, m = rates.alpha, rates.v, rates.margin
    severe_q = max(2, math.floor(math.log(n) ** (m / (2 * a * v))))
    B = None
    if prior_kind in ("uniform", "truncated_normal"):
        if not 0 < rates.b_exp < rates.p:
            raise ValueError(f"truncated-prior schedule requires 0 < b_exp < p, got b_exp={rates.b_exp}, p={rates.p}")
        B = math.sqrt(n**rates.b_exp)
        expo = m * (rates.p - rates.b_exp) / (2 + 2 * a * v)
    elif prior_kind == "thin_tail":
        r = rates.r
        if not r > 6 * rates.d + 4:
            raise ValueError(f"thin-tail schedule requires r > 6d + 4 = {6 * rates.d + 4}, got r={r}")
        if not rates.p * r > 2:
            raise ValueError(f"thin-tail schedule requires p*r > 2, got p*r={rates.p * r}")
        expo = m * (rates.p * r - 2) / (2 * r + 2 * a * v * (r - 2))
    elif prior_kind == "normal":
        expo = m * rates.p / (3 * (1 + 2 * a * v))
    else:
        raise ValueError(f"unknown prior kind {prior_kind!r}")
    q = severe_q if rates.decay == "severe" else max(2, math.floor(n**expo))
    return Schedule(k=k, q=q, B=B)


def oracle_metrics(dgp: NpivDgp, coeffs, model_kind: str = "npiv"):
    """Per-draw oracle risk ``G`` and distance to the identified region.

    For the regression design (``W = X``) every direction is identified, so
    ``G`` is the squared strong norm of the gap and ``d`` the strong norm.
    """
    gaps = coefficient_gaps(dgp, coeffs)
    if model_kind == "regression":
        dist = strong_norm(dgp, gaps)
        return dist**2, dist
    if model_kind != "npiv":
        raise ValueError("closed-form oracle metrics exist for the npiv and regression designs")
    return weak_norm_sq(dgp, gaps), dist_to_identified(dgp, coeffs)


def default_eps(dgp: NpivDgp) -> float:
    return 0.25 * float(np.linalg.norm(dgp.true_coeffs))


def default_delta(dgp: NpivDgp, q: int, eps: float) -> float:
    return distinguishing_bound(dgp, q, eps) / 2.0


def _column_stats(coeffs: np.ndarray, which: str) -> list:
    """Per-coefficient mean or sd over the draws that carry it (NaN when fewer than two)."""
    out = []
    for col in coeffs.T:
        col = col[~np.isnan(col)]
        if which == "mean":
            out.append(float(col.mean()) if col.size else float("nan"))
        else:
            out.append(float(col.std(ddof=1)) if col.size > 1 else float("nan"))
    return out


def posterior_summary(sample: PosteriorSample, dgp: NpivDgp, eps: float, delta: float,
                      h_weights=None, model_kind: str = "npiv") -> dict:
    G, dist = oracle_metrics(dgp, sample.coeffs, model_kind)
    out = {
        "n_draws": sample.n_draws,
        "p_d_lt_eps": float(np.mean(dist < eps)),
        "p_G_lt_delta": float(np.mean(G < delta)),
        "d_median": float(np.median(dist)),
        "d_q10": float(np.quantile(dist, 0.1)),
        "d_q90": float(np.quantile(dist, 0.9)),
        "G_median": float(np.median(G)),
        "G_q10": float(np.quantile(G, 0.1)),
        "G_q90": float(np.quantile(G, 0.9)),
        "sqrtG_median": float(np.median(np.sqrt(G))),
        "coef_sd": _column_stats(sample.coeffs, "sd"),
        "coef_mean": _column_stats(sample.coeffs, "mean"),
        "marginal_q": marginal_q(sample),
    }
    if h_weights is not None:
        h = functional_h(h_weights, sample.coeffs)
        out["h_mean"] = float(np.mean(h))
        out["h_sd"] = float(np.std(h, ddof=1)) if sample.n_draws > 1 else 0.0
        out["h_true"] = float(functional_h(h_weights, dgp.true_coeffs))
    return out


@dataclass(frozen=True)
class PriorChoice:
    """Prior family for a sweep; ``B`` is filled from the schedule for truncated kinds."""

    kind: str
    sigma: float = 2.0
    beta: float = 1.0
    r: float = 20.0
    B: float | None = None

    def build(self, schedule_B: float | None) -> PriorSpec:
        B = self.B if self.B is not None else (schedule_B if schedule_B is not None else 5.0)
        return PriorSpec(self.kind, B=B, sigma=self.sigma, beta=self.beta, r=self.r)


@dataclass(frozen=True)
class SweepPlan:
    ns: tuple = (500, 2000, 8000)
    replications: int = 10
    priors: tuple = (PriorChoice("uniform"),)
    rates: RateSpec = RateSpec()
    master_seed: int = 0
    model: str = "npiv"
    chain: ChainConfig = ChainConfig()
    q: int | None = None
    k: int | None = None
    q_max: int | None = None
    eps: float | None = None
    delta: float | None = None
    h_weights: tuple | None = None
    likelihood_weight: float = 1.0
    threads: int = 1
    save_draws: bool = False

    def __post_init__(self):
        if not self.ns or any(int(n) < 2 for n in self.ns):
            raise ValueError("ns must be a nonempty list of sample sizes >= 2")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.model not in ("npiv", "regression"):
            raise ValueError("sweeps support the npiv and regression designs")
        kinds = [p.kind for p in self.priors]
        if not kinds or len(set(kinds)) != len(kinds):
            raise ValueError(f"sweep priors must be distinct nonempty kinds, got {kinds}")


@dataclass
class SweepReport:
    records: list
    metadata: dict = field(default_factory=dict)

    def cell(self, n: int, replication: int, prior: str) -> dict:
        for rec in self.records:
            if (rec["n"], rec["replication"], rec["prior"]) == (n, replication, prior):
                return rec
        raise KeyError((n, replication, prior))

    def without_timing(self) -> list:
        return [{k: v for k, v in rec.items() if k != "wall_time"} for rec in self.records]

    def metric(self, name: str, prior: str) -> np.ndarray:
        """``(replications, len(ns))`` array of one scalar metric for one prior."""
        ns = sorted({rec["n"] for rec in self.records})
        reps = sorted({rec["replication"] for rec in self.records})
        out = np.full((len(reps), len(ns)), np.nan)
        for rec in self.records:
            if rec["prior"] == prior and name in rec:
                out[reps.index(rec["replication"]), ns.index(rec["n"])] = rec[name]
        return out


CSV_FIELDS = (
    "n", "replication", "prior", "k", "q", "q_max", "B", "seed", "error",
    "p_d_lt_eps", "p_G_lt_delta", "eps", "delta", "d_median", "sqrtG_median", "G_median",
    "h_mean", "h_sd", "h_true", "acceptance_within", "marginal_q", "wall_time",
)


def _cell_seed(master_seed: int, n: int, rep: int, prior_index: int) -> int:
    return int(np.random.SeedSequence([master_seed, n, rep, prior_index, 1]).generate_state(1, np.uint64)[0] >> 1)


def run_cell(dgp: NpivDgp, plan: SweepPlan, n: int, rep: int, prior_index: int) -> tuple:
    """One (n, replication, prior) cell; returns ``(record, sample_or_None)``."""
    started = time.perf_counter()
    choice = plan.priors[prior_index]
    rates = replace(plan.rates, r=choice.r) if choice.kind == "thin_tail" else plan.rates
    sched = tuning_schedule(n, rates, choice.kind)
    k = plan.k or sched.k
    q = plan.q or sched.q
    prior = choice.build(sched.B)
    rng = make_rng(plan.master_seed, n, rep)
    if plan.model == "regression":
        data = sample_regression_dataset(dgp, n, rng)
    else:
        data = sample_dataset(dgp, n, rng)
    eps = plan.eps if plan.eps is not None else default_eps(dgp)
    q_fit = plan.q_max or q
    delta = plan.delta if plan.delta is not None else default_delta(dgp, min(q_fit, dgp.J_max + 1), eps)
    seed = _cell_seed(plan.master_seed, n, rep, prior_index)
    config = replace(plan.chain, seed=seed)
    record = {
        "n": n, "replication": rep, "prior": prior.kind if plan.q_max is None else f"mixture-{prior.kind}",
        "k": k, "q": q, "q_max": plan.q_max, "B": prior.B if prior.is_truncated else None,
        "seed": seed, "eps": eps, "delta": delta, "error": None,
    }
    sample = None
    try:
        fit_prior = MixturePriorSpec(plan.q_max, prior) if plan.q_max else prior
        sample = run_chain(config, data, ResidualModel(plan.model), PartitionSpec(k, 1), fit_prior,
                           BasisSpec("cosine", 1), q=None if plan.q_max else q,
                           likelihood_weight=plan.likelihood_weight)
        summary = posterior_summary(sample, dgp, eps, delta, plan.h_weights, plan.model)
        record.update(summary)
        record["acceptance_within"] = sample.diagnostics["acceptance"]["within"]
    except InitializationError as exc:
        record["error"] = str(exc)
    record["wall_time"] = time.perf_counter() - started
    return record, sample


def _run_cell_job(args):
    dgp, plan, n, rep, idx = args
    record, sample = run_cell(dgp, plan, n, rep, idx)
    return record, (sample if plan.save_draws else None)


def _record_key(rec) -> tuple:
    return (rec["n"], rec["replication"], rec["prior"])


def run_consistency_sweep(plan: SweepPlan, dgp: NpivDgp, out_dir=None) -> SweepReport:
    """Run every (n, replication, prior) cell and aggregate into a report.

    Cells are independent; each derives its data and chain streams from the
    master seed, so results do not depend on execution order or the number of
    workers. With ``out_dir`` finished cells are appended to
    ``cells.partial.jsonl`` as they complete.
    """
    jobs = [(dgp, plan, int(n), rep, idx)
            for n in plan.ns for rep in range(plan.replications) for idx in range(len(plan.priors))]
    partial = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        partial = open(out_dir / "cells.partial.jsonl", "w")
    records = []
    try:
        if plan.threads > 1:
            with ProcessPoolExecutor(max_workers=plan.threads) as pool:
                results = pool.map(_run_cell_job, jobs)
                for record, sample in results:
                    records.append(record)
                    _flush(partial, out_dir, record, sample)
        else:
            for job in jobs:
                record, sample = _run_cell_job(job)
                records.append(record)
                _flush(partial, out_dir, record, sample)
    finally:
        if partial is not None:
            partial.close()
    records.sort(key=_record_key)
    report = SweepReport(records=records, metadata=sweep_metadata(plan, dgp))
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _flush(fh, out_dir, record, sample) -> None:
    if fh is None:
        return
    fh.write(json.dumps(_plain(record)) + "\n")
    fh.flush()
    if sample is not None:
        name = f"draws_n{record['n']}_rep{record['replication']}_{record['prior']}.csv"
        write_draws_csv(sample, out_dir / "draws" / name)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def sweep_metadata(plan: SweepPlan, dgp: NpivDgp) -> dict:
    plan_dict = asdict(plan)
    return {
        "version": __version__,
        "numpy": np.__version__,
        "master_seed": plan.master_seed,
        "dgp": dgp.to_dict(),
        "plan": _plain(plan_dict),
    }


def write_report(report: SweepReport, out_dir) -> None:
    out_dir = Path(out_dir)
    write_json(out_dir / "metadata.json", report.metadata)
    with atomic_open(out_dir / "report.csv") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for rec in report.records:
            row = []
            for name in CSV_FIELDS:
                value = rec.get(name)
                if name == "marginal_q" and value is not None:
                    value = json.dumps({str(k): v for k, v in value.items()}, sort_keys=True)
                    row.append(value)
                elif isinstance(value, str):
                    row.append(value)
                else:
                    row.append(fmt(value))
            writer.writerow(row)
    metrics = ("p_d_lt_eps", "p_G_lt_delta", "d_median", "sqrtG_median", "G_median", "h_mean")
    with atomic_open(out_dir / "trend.csv") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "replication", "prior", "metric", "value"])
        for rec in report.records:
            for name in metrics:
                if rec.get(name) is not None:
                    writer.writerow([rec["n"], rec["replication"], rec["prior"], name, fmt(rec[name])])
