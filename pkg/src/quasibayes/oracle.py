"""Synthetic NPIV designs with a closed-form conditional-expectation operator.

The joint density of ``(X, W)`` on the unit square is

    f(x, w) = 1 + sum_{j=1}^{J} lambda_j phi_j(x) phi_j(w)

with the cosine basis ``phi_j``. Both marginals are uniform and
``E[phi_j(X) | W] = lambda_j phi_j(W)``, so the cosine sieve diagonalizes the
operator. For a coefficient gap ``delta = b - b0`` the risk is
``G = sum_j lambda_j^2 delta_j^2`` (with ``lambda_0 = 1``) and directions with
``lambda_j = 0`` span the null space of the operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .moments import Dataset
from .sieve import BasisSpec, SieveFunction, basis_matrix

DECAY_KINDS = ("mild", "severe", "custom")
POSITIVITY_CHECKS = ("bound", "grid")

SQRT2 = math.sqrt(2.0)


class DgpError(ValueError):
    """Invalid synthetic design."""


@dataclass(frozen=True, eq=False)
class NpivDgp:
    """Cosine-eigensystem NPIV design.

    ``lambdas[j - 1]`` is the operator eigenvalue of ``phi_j`` (``j >= 1``),
    ``true_coeffs[j]`` the cosine coefficient of ``g0`` (``j >= 0``). The
    structural error is ``c (phi_1(X) - lambda_1 phi_1(W)) + nu`` with
    ``nu ~ N(0, noise_sd^2)``.
    """

    lambdas: np.ndarray
    true_coeffs: np.ndarray
    endog_strength: float = 0.5
    noise_sd: float = 0.5
    decay: str = "custom"
    alpha: float | None = None
    scale: float | None = None
    positivity: str = "bound"
    density_floor: float = field(default=float("nan"), compare=False)

    @property
    def J_max(self) -> int:
        return self.lambdas.shape[0]

    @property
    def full_lambdas(self) -> np.ndarray:
        """Eigenvalues indexed from ``j = 0`` (``lambda_0 = 1``)."""
        return np.concatenate([[1.0], self.lambdas])

    @property
    def lambda1(self) -> float:
        return float(self.lambdas[0]) if self.J_max else 0.0

    @property
    def basis(self) -> BasisSpec:
        return BasisSpec("cosine", 1)

    @property
    def g0(self) -> SieveFunction:
        return SieveFunction(self.basis, tuple(self.true_coeffs))

    @property
    def envelope(self) -> float:
        return 1.0 + 2.0 * float(np.sum(np.abs(self.lambdas)))

    def to_dict(self) -> dict:
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "true_coeffs": [float(v) for v in self.true_coeffs],
            "endog_strength": float(self.endog_strength),
            "noise_sd": float(self.noise_sd),
            "decay": self.decay,
            "alpha": self.alpha,
            "scale": self.scale,
            "positivity": self.positivity,
        }

    # sampler protocol used by population_risk_mc
    def sample_instruments(self, m: int, rng) -> np.ndarray:
        return rng.uniform(size=(m, 1))

    def sample_given_instruments(self, w, mz: int, rng):
        w = np.asarray(w, dtype=float).reshape(-1)
        ww = np.repeat(w, mz)
        x = sample_x_given_w(self, ww, rng)
        y = eval_g0(self, x) + structural_error(self, x, ww, rng)
        return y.reshape(w.shape[0], mz), x.reshape(w.shape[0], mz)


@dataclass(frozen=True)
class IdentifiedRegionSpec:
    """``Theta_I = g0 + span{phi_j : j in zero_set or j > J_max}``."""

    zero_set: tuple
    J_max: int


def _density_grid_floor(lambdas: np.ndarray, m: int = 1025) -> float:
    """Certified lower bound on ``f`` from an ``m x m`` grid plus a Lipschitz margin."""
    t = np.linspace(0.0, 1.0, m)
    js = np.arange(1, lambdas.shape[0] + 1)
    c = SQRT2 * np.cos(np.pi * np.outer(t, js))
    f = 1.0 + (c * lambdas) @ c.T
    lipschitz = float(np.sum(np.abs(lambdas) * 2.0 * np.pi * js))
    # nearest grid node is within h/2 along each axis
    return float(f.min()) - lipschitz * (1.0 / (m - 1))


def make_npiv_dgp(lambdas, true_coeffs, endog_strength: float = 0.5, noise_sd: float = 0.5,
                  decay: str = "custom", alpha: float | None = None, scale: float | None = None,
                  positivity: str = "bound") -> NpivDgp:
    """Validate and build an :class:`NpivDgp`.

    ``positivity="bound"`` enforces ``sum |lambda_j| < 1/2``, which makes the
    joint density positive everywhere. ``positivity="grid"`` instead accepts
    any spectrum whose density is certified positive on a fine grid with a
    Lipschitz margin; the rejection sampler then has acceptance
    ``1 / (1 + 2 sum |lambda_j|)``.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float)).copy()
    coeffs = np.atleast_1d(np.asarray(true_coeffs, dtype=float)).copy()
    if lam.ndim != 1 or coeffs.ndim != 1:
        raise DgpError("lambdas and true_coeffs must be 1-D sequences")
    if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(coeffs)):
        raise DgpError("lambdas and true_coeffs must be finite")
    if coeffs.shape[0] > lam.shape[0] + 1:
        raise DgpError(
            f"true_coeffs has {coeffs.shape[0]} entries but the spectrum only covers j = 0..{lam.shape[0]}"
        )
    coeffs = np.concatenate([coeffs, np.zeros(lam.shape[0] + 1 - coeffs.shape[0])])
    if not (np.isfinite(noise_sd) and noise_sd > 0):
        raise DgpError(f"noise_sd must be positive, got {noise_sd!r}")
    if not np.isfinite(endog_strength):
        raise DgpError("endog_strength must be finite")
    if decay not in DECAY_KINDS:
        raise DgpError(f"decay must be one of {DECAY_KINDS}, got {decay!r}")
    if positivity not in POSITIVITY_CHECKS:
        raise DgpError(f"positivity check must be one of {POSITIVITY_CHECKS}, got {positivity!r}")
    total = float(np.sum(np.abs(lam)))
    floor = float("nan")
    if positivity == "bound":
        if not total < 0.5:
            raise DgpError(
                f"positivity bound violated: sum |lambda_j| = {total!r} must be < 1/2 "
                "for the joint density 1 + sum lambda_j phi_j(x) phi_j(w) to stay positive"
            )
        floor = 1.0 - 2.0 * total
    else:
        floor = _density_grid_floor(lam)
        if not floor > 0:
            raise DgpError(
                f"joint density not certified positive (grid lower bound {floor:.4g}); "
                f"sum |lambda_j| = {total!r} exceeds the positivity bound 1/2"
            )
    return NpivDgp(
        lambdas=lam,
        true_coeffs=coeffs,
        endog_strength=float(endog_strength),
        noise_sd=float(noise_sd),
        decay=decay,
        alpha=None if alpha is None else float(alpha),
        scale=None if scale is None else float(scale),
        positivity=positivity,
        density_floor=floor,
    )


def mild_lambdas(alpha: float, J_max: int, scale: float | None = None, total: float = 0.45) -> np.ndarray:
    """``lambda_j = scale * j^(-alpha/2)``; ``scale`` defaults to hitting ``sum = total``."""
    js = np.arange(1, J_max + 1, dtype=float)
    shape = js ** (-alpha / 2.0)
    if scale is None:
        scale = total / shape.sum()
    return scale * shape


def severe_lambdas(alpha: float, J_max: int, scale: float | None = None, total: float = 0.45) -> np.ndarray:
    """``lambda_j = scale * exp(-j^alpha)``."""
    js = np.arange(1, J_max + 1, dtype=float)
    shape = np.exp(-(js**alpha))
    if scale is None:
        scale = total / shape.sum()
    return scale * shape


def power_law_coeffs(head, J_max: int, v: float = 1.0, amplitude: float = 0.1) -> np.ndarray:
    """Coefficients ``head`` followed by a tail ``amplitude * (-1)^j j^-(v + 1/2)``.

    The tail's l2 norm beyond ``q`` then decays like ``q^-v``.
    """
    head = np.atleast_1d(np.asarray(head, dtype=float))
    out = np.zeros(J_max + 1)
    out[: head.shape[0]] = head
    js = np.arange(head.shape[0], J_max + 1, dtype=float)
    out[head.shape[0]:] = amplitude * (-1.0) ** js * js ** (-(v + 0.5))
    return out


def make_mild_dgp(alpha: float = 2.0, J_max: int = 24, true_coeffs=None, zero_set=(),
                  scale: float | None = None, total: float = 0.45, **kwargs) -> NpivDgp:
    """Polynomially decaying spectrum; ``zero_set`` switches chosen eigenvalues off.

    Without an explicit ``scale`` the surviving eigenvalues sum to ``total``.
    """
    shape = mild_lambdas(alpha, J_max, scale=1.0)
    shape[[j - 1 for j in zero_set]] = 0.0
    if scale is None:
        scale = total / shape.sum()
    if true_coeffs is None:
        true_coeffs = power_law_coeffs([0.6, 0.8], J_max)
    return make_npiv_dgp(scale * shape, true_coeffs, decay="mild", alpha=alpha, scale=scale, **kwargs)


def make_severe_dgp(alpha: float = 1.0, J_max: int = 24, true_coeffs=None, zero_set=(),
                    scale: float = 0.4, **kwargs) -> NpivDgp:
    shape = severe_lambdas(alpha, J_max, scale=1.0)
    shape[[j - 1 for j in zero_set]] = 0.0
    if true_coeffs is None:
        true_coeffs = power_law_coeffs([0.6, 0.8], J_max)
    return make_npiv_dgp(scale * shape, true_coeffs, decay="severe", alpha=alpha, scale=scale, **kwargs)


def identified_region(dgp: NpivDgp) -> IdentifiedRegionSpec:
    zero = tuple(int(j) for j in np.flatnonzero(dgp.lambdas == 0) + 1)
    return IdentifiedRegionSpec(zero_set=zero, J_max=dgp.J_max)


def eval_g0(dgp: NpivDgp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return basis_matrix(dgp.basis, dgp.J_max + 1, x.reshape(-1)).dot(dgp.true_coeffs).reshape(x.shape)


def _cos_multiples(t: np.ndarray, J: int) -> np.ndarray:
    """``cos(j pi t)`` for ``j = 1..J`` stacked on a trailing axis (Chebyshev recurrence)."""
    out = np.empty(t.shape + (J,))
    c1 = np.cos(np.pi * t)
    out[..., 0] = c1
    if J > 1:
        out[..., 1] = 2.0 * c1 * c1 - 1.0
    for j in range(2, J):
        out[..., j] = 2.0 * c1 * out[..., j - 1] - out[..., j - 2]
    return out


def joint_density(dgp: NpivDgp, x, w) -> np.ndarray:
    x, w = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(w, dtype=float))
    J = dgp.J_max
    if not J:
        return np.ones(x.shape)
    return 1.0 + 2.0 * np.einsum("...j,...j->...", _cos_multiples(x, J) * dgp.lambdas, _cos_multiples(w, J))


def conditional_cdf(dgp: NpivDgp, x, w) -> np.ndarray:
    """``P(X <= x | W = w)`` in closed form."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    js = np.arange(1, dgp.J_max + 1)
    if not js.size:
        return np.broadcast_to(x, np.broadcast(x, w).shape).copy()
    sx = np.sin(np.pi * x[..., None] * js) / (np.pi * js)
    cw = np.cos(np.pi * w[..., None] * js)
    return x + 2.0 * np.sum(dgp.lambdas * sx * cw, axis=-1)


def sample_x_given_w(dgp: NpivDgp, w, rng) -> np.ndarray:
    """Rejection sampling from ``f(x | w)`` with the constant envelope ``1 + 2 sum |lambda_j|``."""
    w = np.asarray(w, dtype=float).reshape(-1)
    x = np.empty_like(w)
    pending = np.arange(w.shape[0])
    env = dgp.envelope
    while pending.size:
        prop = rng.uniform(size=pending.size)
        u = rng.uniform(size=pending.size)
        ok = u * env <= joint_density(dgp, prop, w[pending])
        x[pending[ok]] = prop[ok]
        pending = pending[~ok]
    return x


def structural_error(dgp: NpivDgp, x, w, rng) -> np.ndarray:
    phi1 = lambda t: SQRT2 * np.cos(np.pi * t)  # noqa: E731
    nu = dgp.noise_sd * rng.standard_normal(size=np.shape(x))
    return dgp.endog_strength * (phi1(x) - dgp.lambda1 * phi1(w)) + nu


def sample_dataset(dgp: NpivDgp, n: int, rng) -> Dataset:
    """Draw ``n`` observations: ``W ~ U[0,1]``, ``X | W`` by rejection, ``Y = g0(X) + eps``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    w = rng.uniform(size=n)
    x = sample_x_given_w(dgp, w, rng)
    y = eval_g0(dgp, x) + structural_error(dgp, x, w, rng)
    return Dataset(y=y, x=x, w=w)


def sample_regression_dataset(dgp: NpivDgp, n: int, rng) -> Dataset:
    """Exogenous regression design with ``W = X ~ U[0,1]`` and ``Y = g0(X) + nu``."""
    if dgp.endog_strength != 0:
        raise DgpError("regression data need an exogenous design (endog_strength = 0)")
    x = rng.uniform(size=n)
    y = eval_g0(dgp, x) + dgp.noise_sd * rng.standard_normal(size=n)
    return Dataset(y=y, x=x, w=x.copy())


def _logistic_scale(dgp: NpivDgp) -> float:
    return dgp.noise_sd * math.sqrt(3.0) / math.pi


def _quantile_error(dgp: NpivDgp, x, w, gamma: float, rng) -> np.ndarray:
    c = dgp.endog_strength
    if not 0.0 <= c <= 1.0:
        raise DgpError("the quantile design reads endog_strength as a mixing probability in [0, 1]")
    # V = F(X | W) is uniform and independent of W; mixing it into the error
    # rank keeps the conditional gamma-quantile given W at zero
    v = np.clip(conditional_cdf(dgp, x, w), 0.0, 1.0)
    fresh = rng.uniform(size=np.shape(x))
    u = np.where(rng.uniform(size=np.shape(x)) < c, v, fresh)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    logit = lambda p: np.log(p) - np.log1p(-p)  # noqa: E731
    return _logistic_scale(dgp) * (logit(u) - logit(gamma))


def sample_quantile_dataset(dgp: NpivDgp, n: int, gamma: float, rng) -> Dataset:
    """Quantile IV design: the conditional ``gamma``-quantile of ``Y - g0(X)`` given ``W`` is 0.

    Errors are logistic with standard deviation ``noise_sd``; endogeneity
    comes from tying the error rank to the rank of ``X`` given ``W`` with
    probability ``endog_strength``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if n < 1:
        raise ValueError("n must be at least 1")
    w = rng.uniform(size=n)
    x = sample_x_given_w(dgp, w, rng)
    y = eval_g0(dgp, x) + _quantile_error(dgp, x, w, gamma, rng)
    return Dataset(y=y, x=x, w=w)


@dataclass(frozen=True)
class QuantileSampler:
    """Adapter exposing the quantile design to :func:`population_risk_mc`."""

    dgp: NpivDgp
    gamma: float

    def sample_instruments(self, m: int, rng) -> np.ndarray:
        return rng.uniform(size=(m, 1))

    def sample_given_instruments(self, w, mz: int, rng):
        w = np.asarray(w, dtype=float).reshape(-1)
        ww = np.repeat(w, mz)
        x = sample_x_given_w(self.dgp, ww, rng)
        y = eval_g0(self.dgp, x) + _quantile_error(self.dgp, x, ww, self.gamma, rng)
        return y.reshape(w.shape[0], mz), x.reshape(w.shape[0], mz)


# ---------------------------------------------------------------- oracle norms


def coefficient_gaps(dgp: NpivDgp, coeffs) -> np.ndarray:
    """Gap ``b - b0`` on ``j = 0..J_max`` (``b_j = 0`` for ``j >= q``).

    ``coeffs`` is one vector of length ``q`` or an ``(m, q)`` array; NaN
    entries (padding of lower-dimensional draws) count as zero.
    """
    b = np.asarray(coeffs, dtype=float)
    single = b.ndim == 1
    b = np.atleast_2d(b)
    q = b.shape[1]
    if q > dgp.J_max + 1:
        raise ValueError(f"sieve dimension {q} exceeds the constructed spectrum (J_max + 1 = {dgp.J_max + 1})")
    full = np.zeros((b.shape[0], dgp.J_max + 1))
    full[:, :q] = np.nan_to_num(b, nan=0.0)
    gaps = full - dgp.true_coeffs
    return gaps[0] if single else gaps


def weak_norm_sq(dgp: NpivDgp, delta) -> float | np.ndarray:
    """``sum_j lambda_j^2 delta_j^2`` with ``lambda_0 = 1``; equals ``G`` for the NPIV residual.

    Entries beyond ``J_max`` carry zero weight (the operator annihilates them).
    """
    d = np.asarray(delta, dtype=float)
    lam2 = dgp.full_lambdas**2
    m = min(d.shape[-1], lam2.shape[0])
    return np.sum(lam2[:m] * d[..., :m] ** 2, axis=-1)


def strong_norm(dgp: NpivDgp, delta) -> float | np.ndarray:
    """``||g||_s`` for a cosine-coefficient vector under the uniform X-marginal."""
    d = np.asarray(delta, dtype=float)
    return np.sqrt(np.sum(d**2, axis=-1))


def _identified_mask(dgp: NpivDgp) -> np.ndarray:
    return dgp.full_lambdas != 0


def dist_to_identified(dgp: NpivDgp, g) -> float | np.ndarray:
    """Strong-norm distance from ``g`` (or coefficient draws) to the identified region."""
    coeffs = g.coeffs if isinstance(g, SieveFunction) else g
    gaps = coefficient_gaps(dgp, coeffs)
    return np.sqrt(np.sum((gaps * _identified_mask(dgp)) ** 2, axis=-1))


def distinguishing_bound(dgp: NpivDgp, q: int, eps: float) -> float:
    """``inf {G(g) : g - g0 in H_q, d(g, Theta_I) >= eps}``.

    All deviation sits in the weakest identified sieve direction, giving
    ``eps^2 min{lambda_j^2 : j < q, lambda_j != 0}``. Returns ``inf`` when no
    sieve direction is identified.
    """
    if int(q) != q or q < 1:
        raise ValueError("q must be a positive integer")
    if q > dgp.J_max + 1:
        raise ValueError(f"q = {q} exceeds J_max + 1 = {dgp.J_max + 1}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    lam2 = dgp.full_lambdas[:q] ** 2
    lam2 = lam2[lam2 > 0]
    if not lam2.size:
        return math.inf
    return float(eps**2 * lam2.min())


def functional_h(weights, g) -> float | np.ndarray:
    """Linear functional ``sum_j c_j b_j``; the shorter vector is zero-padded."""
    c = np.asarray(weights, dtype=float)
    coeffs = g.coeffs if isinstance(g, SieveFunction) else g
    b = np.nan_to_num(np.asarray(coeffs, dtype=float), nan=0.0)
    m = min(c.shape[0], b.shape[-1])
    return b[..., :m] @ c[:m]


def cosine_coefficients(omega, J_max: int, order: int = 512) -> np.ndarray:
    """Coefficients of a weight function ``omega`` on ``phi_0..phi_J_max`` by quadrature."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (nodes + 1.0)
    phi = basis_matrix(BasisSpec("cosine", 1), J_max + 1, t)
    return phi.T @ (0.5 * weights * omega(t))


def sine_weight(J_max: int) -> np.ndarray:
    """Cosine coefficients of ``omega(x) = sin(pi x)`` (odd indices vanish)."""
    c = np.zeros(J_max + 1)
    c[0] = 2.0 / math.pi
    for j in range(2, J_max + 1, 2):
        c[j] = SQRT2 * 2.0 / (math.pi * (1.0 - j * j))
    return c
