"""Priors on sieve coefficients.

Four families are supported: uniform on the box ``[-B, B]^q``, a normal
truncated to that box, the spherically symmetric thin-tail prior whose radial
law is ``||b||^r ~ Exponential(mean beta^-r)``, and an untruncated normal. A
discrete-uniform mixture over the sieve dimension is layered on top of the
product-form families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

PRIOR_KINDS = ("uniform", "truncated_normal", "thin_tail", "normal")
PRODUCT_KINDS = ("uniform", "truncated_normal", "normal")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class PriorSpec:
    """Tagged union over the prior families; unused parameters are ignored.

    Defaults (``B=5``, ``sigma=2``, ``beta=1``, ``r=20``) keep ``r > 6d + 4``
    for ``d = 1`` with room to spare.
    """

    kind: str = "uniform"
    B: float = 5.0
    sigma: float = 2.0
    beta: float = 1.0
    r: float = 20.0

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"prior kind must be one of {PRIOR_KINDS}, got {self.kind!r}")
        if self.kind in ("uniform", "truncated_normal"):
            _positive("B", self.B)
        if self.kind in ("truncated_normal", "normal"):
            _positive("sigma", self.sigma)
        if self.kind == "thin_tail":
            _positive("beta", self.beta)
            _positive("r", self.r)
        for name in ("B", "sigma", "beta", "r"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def is_product(self) -> bool:
        return self.kind in PRODUCT_KINDS

    @property
    def is_truncated(self) -> bool:
        return self.kind in ("uniform", "truncated_normal")

    def params(self) -> dict:
        keys = {
            "uniform": ("B",),
            "truncated_normal": ("sigma", "B"),
            "thin_tail": ("beta", "r"),
            "normal": ("sigma",),
        }[self.kind]
        return {k: getattr(self, k) for k in keys}

    def describe(self) -> str:
        return self.kind + ":" + ",".join(f"{k}={v!r}" for k, v in self.params().items())


def uniform(B: float = 5.0) -> PriorSpec:
    return PriorSpec("uniform", B=B)


def truncated_normal(sigma: float = 2.0, B: float = 5.0) -> PriorSpec:
    return PriorSpec("truncated_normal", B=B, sigma=sigma)


def thin_tail(beta: float = 1.0, r: float = 20.0) -> PriorSpec:
    return PriorSpec("thin_tail", beta=beta, r=r)


def normal(sigma: float = 2.0) -> PriorSpec:
    return PriorSpec("normal", sigma=sigma)


def parse_prior(text: str) -> PriorSpec:
    """Parse ``"kind"`` or ``"kind:key=value,key=value"``."""
    kind, _, rest = text.strip().partition(":")
    kwargs = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in ("B", "sigma", "beta", "r"):
            raise ValueError(f"bad prior parameter {item!r}; expected B, sigma, beta or r")
        kwargs[key.strip()] = float(value)
    return PriorSpec(kind.strip(), **kwargs)


@dataclass(frozen=True)
class MixturePriorSpec:
    """Uniform prior on ``q in {1..q_max}`` with a product-form prior given ``q``."""

    q_max: int
    component: PriorSpec

    def __post_init__(self):
        if int(self.q_max) != self.q_max or self.q_max < 1:
            raise ValueError(f"q_max must be a positive integer, got {self.q_max!r}")
        if not self.component.is_product:
            raise ValueError(
                f"random-dimension mixtures need a product-form component {PRODUCT_KINDS}, "
                f"got {self.component.kind!r}"
            )


def log_sphere_area(q: int) -> float:
    """Log surface area of the unit (q-1)-sphere in R^q."""
    return math.log(2.0) + 0.5 * q * math.log(math.pi) - math.lgamma(0.5 * q)


def _trunc_log_mass(spec: PriorSpec) -> float:
    # log P(|Z| <= B), Z ~ N(0, sigma^2)
    return math.log(special.erf(spec.B / (spec.sigma * math.sqrt(2.0))))


def marginal_logpdf(spec: PriorSpec, x: float) -> float:
    """One-coordinate log-density of a product-form prior."""
    if spec.kind == "uniform":
        return -math.log(2.0 * spec.B) if abs(x) <= spec.B else -math.inf
    if spec.kind == "normal":
        return -0.5 * (x / spec.sigma) ** 2 - math.log(spec.sigma) - _LOG_SQRT_2PI
    if spec.kind == "truncated_normal":
        if abs(x) > spec.B:
            return -math.inf
        return -0.5 * (x / spec.sigma) ** 2 - math.log(spec.sigma) - _LOG_SQRT_2PI - _trunc_log_mass(spec)
    raise ValueError(f"{spec.kind} is not a product-form prior")


def log_prior(spec: PriorSpec, b) -> float:
    """Normalized log-density of ``b`` (``-inf`` outside the support)."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    q = b.shape[0]
    if q < 1:
        raise ValueError("coefficient vector must be nonempty")
    if not np.all(np.isfinite(b)):
        raise ValueError("coefficients must be finite")
    if spec.kind == "uniform":
        if np.max(np.abs(b)) > spec.B:
            return -math.inf
        return -q * math.log(2.0 * spec.B)
    if spec.kind in ("normal", "truncated_normal"):
        if spec.kind == "truncated_normal" and np.max(np.abs(b)) > spec.B:
            return -math.inf
        value = -0.5 * float(b @ b) / spec.sigma**2 - q * (math.log(spec.sigma) + _LOG_SQRT_2PI)
        if spec.kind == "truncated_normal":
            value -= q * _trunc_log_mass(spec)
        return value
    norm = math.sqrt(float(b @ b))
    r, beta = spec.r, spec.beta
    if norm == 0.0:
        # pole (r < q) or zero (r > q) of the density; only r == q is finite
        if r != q:
            return -math.inf
        return math.log(r) + r * math.log(beta) - log_sphere_area(q)
    return (
        math.log(r)
        + (r - q) * math.log(norm)
        + r * math.log(beta)
        - (beta * norm) ** r
        - log_sphere_area(q)
    )


def log_prior_rows(spec: PriorSpec, b) -> np.ndarray:
    """Vectorized :func:`log_prior` over the rows of an ``(m, q)`` array."""
    b = np.asarray(b, dtype=float)
    if b.ndim != 2 or b.shape[1] < 1:
        raise ValueError("expected an (m, q) array with q >= 1")
    q = b.shape[1]
    out = np.empty(b.shape[0])
    if spec.kind == "thin_tail":
        norm = np.sqrt(np.einsum("ij,ij->i", b, b))
        with np.errstate(divide="ignore"):
            out[:] = (math.log(spec.r) + (spec.r - q) * np.log(norm) + spec.r * math.log(spec.beta)
                      - (spec.beta * norm) ** spec.r - log_sphere_area(q))
        zero = norm == 0
        if np.any(zero):
            out[zero] = log_prior(spec, np.zeros(q))
        return out
    if spec.kind == "uniform":
        out[:] = -q * math.log(2.0 * spec.B)
    else:
        out[:] = -0.5 * np.einsum("ij,ij->i", b, b) / spec.sigma**2 - q * (math.log(spec.sigma) + _LOG_SQRT_2PI)
        if spec.kind == "truncated_normal":
            out -= q * _trunc_log_mass(spec)
    if spec.is_truncated:
        out[np.max(np.abs(b), axis=1) > spec.B] = -math.inf
    return out


def thin_tail_radius(spec: PriorSpec, e):
    """Radius ``E^(1/r) / beta`` for ``E ~ Exponential(1)`` (inverse-CDF map)."""
    return np.asarray(e, dtype=float) ** (1.0 / spec.r) / spec.beta


def sample_marginal(spec: PriorSpec, size, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. draws from one coordinate of a product-form prior."""
    if spec.kind == "uniform":
        return rng.uniform(-spec.B, spec.B, size=size)
    if spec.kind == "normal":
        return spec.sigma * rng.standard_normal(size=size)
    if spec.kind == "truncated_normal":
        # inverse CDF on the truncated interval, using the upper-half symmetry
        # to keep precision when B/sigma is large
        z = spec.B / spec.sigma
        half = special.ndtr(z) - 0.5
        u = rng.uniform(-half, half, size=size)
        return np.sign(u) * spec.sigma * special.ndtri(0.5 + np.abs(u))
    raise ValueError(f"{spec.kind} is not a product-form prior")


def sample_prior(spec: PriorSpec, q: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Exact draw(s) of a length-``q`` coefficient vector.

    Returns shape ``(q,)`` or ``(size, q)`` when ``size`` is given.
    """
    if int(q) != q or q < 1:
        raise ValueError("q must be a positive integer")
    shape = (q,) if size is None else (int(size), q)
    if spec.is_product:
        return sample_marginal(spec, shape, rng)
    direction = rng.standard_normal(size=shape)
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    radius = thin_tail_radius(spec, rng.standard_exponential(size=shape[:-1] or None))
    return direction * np.asarray(radius)[..., None]


def tail_mass(spec: PriorSpec, u: float) -> float:
    """Prior mass outside the ball of radius ``u``: ``exp(-(beta u)^r)``."""
    if spec.kind != "thin_tail":
        raise ValueError("tail_mass is defined for the thin-tail prior")
    if not u >= 0:
        raise ValueError(f"radius must be nonnegative, got {u!r}")
    return math.exp(-((spec.beta * u) ** spec.r))


def mixture_log_prior(mix: MixturePriorSpec, q: int, b) -> float:
    if int(q) != q or not 1 <= q <= mix.q_max:
        raise ValueError(f"q must lie in 1..{mix.q_max}, got {q!r}")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape[0] != q:
        raise ValueError(f"expected {q} coefficients, got {b.shape[0]}")
    return -math.log(mix.q_max) + log_prior(mix.component, b)


def marginal_sd(spec: PriorSpec, q: int = 1) -> float:
    """Standard deviation of one coefficient under the prior at dimension ``q``."""
    if spec.kind == "uniform":
        return spec.B / math.sqrt(3.0)
    if spec.kind == "normal":
        return spec.sigma
    if spec.kind == "truncated_normal":
        z = spec.B / spec.sigma
        return float(stats.truncnorm(-z, z, scale=spec.sigma).std())
    # E||b||^2 = Gamma(1 + 2/r) / beta^2 spread evenly over q coordinates
    return math.sqrt(math.gamma(1.0 + 2.0 / spec.r) / (spec.beta**2 * q))
