"""MCMC for the quasi-posterior ``pi(b) L(g_b)``.

Within-dimension moves are Gaussian random-walk Metropolis steps whose
per-coordinate scales and correlation shape adapt during burn-in and are frozen
afterwards. When the sieve dimension is random, nested birth/death moves
append or drop the last coefficient, proposing new coefficients from the
component prior so that the acceptance ratio reduces to a likelihood ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .moments import Dataset, LimitedInformationLikelihood, PartitionSpec, ResidualModel
from .priors import (
    MixturePriorSpec,
    PriorSpec,
    log_prior,
    marginal_sd,
    mixture_log_prior,
    sample_marginal,
    sample_prior,
)
from .sieve import BasisSpec

MOVES = ("within", "birth", "death")


class TargetError(RuntimeError):
    """The log-target returned NaN."""


class InitializationError(RuntimeError):
    """No starting point with finite log-posterior was found."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based stream for ``(seed, *keys)``; independent of call order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass
class Proposal:
    scale: np.ndarray
    chol: np.ndarray


@dataclass
class ChainState:
    q: int
    b: np.ndarray
    log_post: float
    log_lik: float
    proposals: dict = field(default_factory=dict)
    accept_stats: dict = field(default_factory=lambda: {m: [0, 0] for m in MOVES})
    last_accept_prob: float = float("nan")

    @property
    def step_scale(self) -> np.ndarray:
        return self.proposals[self.q].scale

    def record(self, move: str, accepted: bool) -> None:
        stats = self.accept_stats[move]
        stats[0] += 1
        stats[1] += int(accepted)


class PosteriorTarget:
    """``log pi(b) + log L(b)`` for a fixed prior or a dimension mixture."""

    def __init__(self, loglik: Callable[[np.ndarray], float], prior: PriorSpec | MixturePriorSpec):
        self.loglik = loglik
        self.prior = prior

    @property
    def is_mixture(self) -> bool:
        return isinstance(self.prior, MixturePriorSpec)

    @property
    def component(self) -> PriorSpec:
        return self.prior.component if self.is_mixture else self.prior

    def log_prior(self, b) -> float:
        if self.is_mixture:
            return mixture_log_prior(self.prior, len(b), b)
        return log_prior(self.prior, b)

    def evaluate(self, b) -> tuple[float, float]:
        """Return ``(log_post, log_lik)``; the likelihood is skipped off-support."""
        lp = self.log_prior(b)
        if lp == -math.inf:
            return -math.inf, -math.inf
        ll = self.loglik(b)
        return lp + ll, ll

    def __call__(self, b) -> float:
        return self.evaluate(b)[0]


def _check(value: float) -> float:
    if math.isnan(value):
        raise TargetError("log-target evaluated to NaN")
    return value


def _default_proposal(target: PosteriorTarget, q: int) -> Proposal:
    sd = marginal_sd(target.component, q)
    return Proposal(scale=np.full(q, 0.1 * sd), chol=np.eye(q))


def rwm_step(state: ChainState, target, rng: np.random.Generator) -> ChainState:
    """One Gaussian random-walk Metropolis step at the current dimension.

    ``target`` maps ``b`` to the log-posterior, or is a :class:`PosteriorTarget`
    (which also caches the log-likelihood). The state is updated in place and
    returned; ``state.last_accept_prob`` holds ``min(1, exp(delta))``.
    """
    prop = state.proposals[state.q]
    xi = rng.standard_normal(state.q)
    b_new = state.b + prop.scale * (prop.chol @ xi)
    if isinstance(target, PosteriorTarget):
        lp_new, ll_new = target.evaluate(b_new)
    else:
        lp_new, ll_new = target(b_new), float("nan")
    _check(lp_new)
    delta = lp_new - state.log_post
    accept_prob = 1.0 if delta >= 0 else math.exp(delta)
    accepted = delta >= 0 or rng.random() < accept_prob
    if accepted:
        state.b = b_new
        state.log_post = lp_new
        state.log_lik = ll_new
    state.last_accept_prob = accept_prob
    state.record("within", accepted)
    return state


def move_probabilities(q: int, q_max: int, move_probs) -> tuple[float, float, float]:
    """``(within, birth, death)`` at dimension ``q``; blocked moves fold into ``within``."""
    _, pb, pd = move_probs
    pb = pb if q < q_max else 0.0
    pd = pd if q > 1 else 0.0
    return 1.0 - pb - pd, pb, pd


def birth_death_step(state: ChainState, target: PosteriorTarget, mix: MixturePriorSpec,
                     rng: np.random.Generator, move_probs=(0.5, 0.25, 0.25)) -> ChainState:
    """One trans-dimensional move, birth or death in proportion to their probabilities.

    Birth appends ``u ~ pi_c`` (the component prior's marginal); with a uniform
    prior on ``q`` the prior and proposal densities cancel, leaving the
    likelihood ratio times the reverse/forward move-probability ratio.
    With ``q_max == 1`` this degenerates to :func:`rwm_step`.
    """
    if mix.q_max == 1:
        return rwm_step(state, target, rng)
    q = state.q
    _, pb, pd = move_probabilities(q, mix.q_max, move_probs)
    if pb + pd <= 0:
        return rwm_step(state, target, rng)
    birth = rng.random() < pb / (pb + pd)
    if birth:
        u = sample_marginal(mix.component, 1, rng)
        b_new = np.concatenate([state.b, u])
        ll_new = _check(target.loglik(b_new))
        _, _, pd_rev = move_probabilities(q + 1, mix.q_max, move_probs)
        log_ratio = ll_new - state.log_lik + math.log(pd_rev / pb)
        move = "birth"
    else:
        b_new = state.b[:-1].copy()
        ll_new = _check(target.loglik(b_new))
        _, pb_rev, _ = move_probabilities(q - 1, mix.q_max, move_probs)
        log_ratio = ll_new - state.log_lik + math.log(pb_rev / pd)
        move = "death"
    accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
    accepted = log_ratio >= 0 or rng.random() < accept_prob
    if accepted:
        state.q = b_new.shape[0]
        state.b = b_new
        state.log_lik = ll_new
        state.log_post = target.log_prior(b_new) + ll_new
        if state.q not in state.proposals:
            state.proposals[state.q] = _default_proposal(target, state.q)
    state.last_accept_prob = accept_prob
    state.record(move, accepted)
    return state


@dataclass(frozen=True)
class ChainConfig:
    n_steps: int = 20000
    burn_in: int = 5000
    thin: int = 1
    adapt_window: int = 200
    target_accept: float = 0.3
    seed: int = 0
    move_probs: tuple = (0.5, 0.25, 0.25)
    debug_check_every: int = 0

    def __post_init__(self):
        if self.n_steps < 1 or not 0 <= self.burn_in < self.n_steps:
            raise ValueError("need 0 <= burn_in < n_steps")
        if self.thin < 1 or self.adapt_window < 1:
            raise ValueError("thin and adapt_window must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        probs = tuple(float(p) for p in self.move_probs)
        if len(probs) != 3 or min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("move_probs must be three nonnegative numbers summing to 1")
        object.__setattr__(self, "move_probs", probs)


class _Adapter:
    """Burn-in adaptation for one dimension: Robbins-Monro on a global log-scale
    plus a periodically refreshed empirical covariance shape."""

    def __init__(self, proposal: Proposal, target_accept: float, window: int):
        self.proposal = proposal
        self.base = proposal.scale.copy()
        self.log_s = 0.0
        self.t = 0
        self.target_accept = target_accept
        self.window = window
        self.trace: list[np.ndarray] = []

    def update(self, accept_prob: float, b: np.ndarray) -> None:
        self.t += 1
        self.log_s += (self.t ** -0.6) * (accept_prob - self.target_accept)
        self.log_s = min(max(self.log_s, -30.0), 30.0)
        self.trace.append(b)
        q = b.shape[0]
        if self.t % self.window == 0 and len(self.trace) >= 4 * (q + 1):
            recent = np.asarray(self.trace[len(self.trace) // 2:])
            cov = np.atleast_2d(np.cov(recent, rowvar=False))
            sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
            if np.all(sd > 0):
                corr = cov / np.outer(sd, sd) + 1e-6 * np.eye(q)
                try:
                    chol = np.linalg.cholesky(corr / (1.0 + 1e-6))
                except np.linalg.LinAlgError:
                    chol = np.eye(q)
                new_base = 2.38 / math.sqrt(q) * sd
                # keep the current overall step size when swapping in the new shape
                self.log_s += float(np.mean(np.log(self.base / new_base)))
                self.base = new_base
                self.proposal.chol = chol
        self.proposal.scale = math.exp(self.log_s) * self.base


@dataclass
class PosteriorSample:
    """Post-burn-in, thinned draws; ``coeffs`` is NaN-padded to ``q_max`` columns."""

    steps: np.ndarray
    qs: np.ndarray
    coeffs: np.ndarray
    log_posts: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.qs.shape[0] == 0:
            raise ValueError("a posterior sample needs at least one draw")

    @property
    def n_draws(self) -> int:
        return self.qs.shape[0]

    @property
    def q_max(self) -> int:
        return self.coeffs.shape[1]

    @property
    def draws(self) -> list:
        return [(int(q), self.coeffs[i, :q].copy()) for i, q in enumerate(self.qs)]

    @property
    def is_fixed_q(self) -> bool:
        return bool(np.all(self.qs == self.qs[0]))


def marginal_q(sample: PosteriorSample) -> dict:
    """Visit-frequency estimate of ``p(q | data)``."""
    values, counts = np.unique(sample.qs, return_counts=True)
    total = counts.sum()
    return {int(v): float(c / total) for v, c in zip(values, counts)}


def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS via Geyer's initial monotone positive sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 4 or np.all(x == x[0]):
        return float(n)
    rho = autocorrelation(x)
    pairs = rho[: 2 * ((n - 1) // 2)].reshape(-1, 2).sum(axis=1)
    positive = np.flatnonzero(pairs <= 0)
    pairs = pairs[: positive[0]] if positive.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(min(n, n / max(tau, 1e-12)))


def mc_standard_error(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(effective_sample_size(x)))


def _initial_state(target: PosteriorTarget, q: int | None, rng: np.random.Generator,
                   max_tries: int = 100) -> ChainState:
    for _ in range(max_tries):
        q0 = int(rng.integers(1, target.prior.q_max + 1)) if q is None else q
        b0 = sample_prior(target.component, q0, rng)
        lp, ll = target.evaluate(b0)
        if np.isfinite(lp):
            return ChainState(q=q0, b=b0, log_post=lp, log_lik=ll,
                              proposals={q0: _default_proposal(target, q0)})
    raise InitializationError(f"no finite log-posterior among {max_tries} prior draws")


def run_sampler(config: ChainConfig, target: PosteriorTarget, q: int | None = None) -> PosteriorSample:
    """Run one chain on an assembled :class:`PosteriorTarget`.

    ``q`` fixes the sieve dimension for a plain prior; it must be ``None`` for
    a mixture prior, in which case births and deaths are interleaved with
    within-dimension moves according to ``config.move_probs``.
    """
    rng = make_rng(config.seed)
    mixture = target.is_mixture
    if mixture and q is not None:
        raise ValueError("q must not be fixed for a mixture prior")
    if not mixture and (q is None or q < 1):
        raise ValueError("a fixed-dimension run needs q >= 1")
    q_max = target.prior.q_max if mixture else q
    state = _initial_state(target, None if mixture else q, rng)
    adapters: dict[int, _Adapter] = {}
    kept = range(config.burn_in, config.n_steps, config.thin)
    n_keep = len(kept)
    steps = np.empty(n_keep, dtype=np.int64)
    qs = np.empty(n_keep, dtype=np.int64)
    coeffs = np.full((n_keep, q_max), np.nan)
    log_posts = np.empty(n_keep)
    post_stats = {m: [0, 0] for m in MOVES}
    slot = 0
    for step in range(config.n_steps):
        if step == config.burn_in:
            # only post-burn-in moves count toward reported acceptance
            state.accept_stats = post_stats
        if mixture:
            pw, pb, pd = move_probabilities(state.q, q_max, config.move_probs)
            within = rng.random() < pw
        else:
            within = True
        if within:
            rwm_step(state, target, rng)
            if step < config.burn_in:
                adapter = adapters.get(state.q)
                if adapter is None:
                    adapter = adapters[state.q] = _Adapter(
                        state.proposals[state.q], config.target_accept, config.adapt_window
                    )
                adapter.update(state.last_accept_prob, state.b)
        else:
            birth_death_step(state, target, target.prior, rng, config.move_probs)
        if config.debug_check_every and step % config.debug_check_every == 0:
            fresh = target.evaluate(state.b)[0]
            if not math.isclose(fresh, state.log_post, rel_tol=1e-9, abs_tol=1e-9):
                raise AssertionError(f"cached log_post {state.log_post} != fresh {fresh} at step {step}")
        if step >= config.burn_in and (step - config.burn_in) % config.thin == 0:
            steps[slot] = step
            qs[slot] = state.q
            coeffs[slot, : state.q] = state.b
            log_posts[slot] = state.log_post
            slot += 1
    sample = PosteriorSample(steps=steps, qs=qs, coeffs=coeffs, log_posts=log_posts)
    sample.diagnostics = chain_diagnostics(sample, post_stats)
    sample.diagnostics["final_step_scale"] = {
        int(k): [float(v) for v in p.scale] for k, p in sorted(state.proposals.items())
    }
    return sample


def chain_diagnostics(sample: PosteriorSample, accept_stats: dict) -> dict:
    rates = {
        m: (a / p if p else None) for m, (p, a) in accept_stats.items()
    }
    ess = {"log_post": effective_sample_size(sample.log_posts)}
    if sample.is_fixed_q:
        for j in range(int(sample.qs[0])):
            ess[f"b_{j + 1}"] = effective_sample_size(sample.coeffs[:, j])
    else:
        ess["q"] = effective_sample_size(sample.qs.astype(float))
    return {
        "n_draws": sample.n_draws,
        "acceptance": rates,
        "proposed": {m: p for m, (p, _) in accept_stats.items()},
        "ess": ess,
    }


def run_chain(config: ChainConfig, data: Dataset, model: ResidualModel, part: PartitionSpec,
              prior: PriorSpec | MixturePriorSpec, basis: BasisSpec, q: int | None = None,
              likelihood_weight: float = 1.0) -> PosteriorSample:
    """Build the feasible likelihood for ``data`` and sample the quasi-posterior.

    ``likelihood_weight=0`` switches the likelihood off (prior recovery runs).
    """
    q_max = prior.q_max if isinstance(prior, MixturePriorSpec) else q
    if q_max is None:
        raise ValueError("q is required for a fixed-dimension prior")
    lil = LimitedInformationLikelihood(data, model, part, basis, q_max, weight=likelihood_weight)
    return run_sampler(config, PosteriorTarget(lil, prior), q=None if isinstance(prior, MixturePriorSpec) else q)
