"""Binned moment conditions and the limited-information likelihood.

The instrument space [0, 1]^d is cut into ``k^d`` congruent cells. For a
candidate function ``g`` the binned moment vector is

    mbar_j(g) = (1/n) sum_i rho(Z_i, g) 1{W_i in R_j},

bin weights are ``vhat_j = count_j / n`` and the sample risk is
``Gbar = sum_j mbar_j^2 / vhat_j``. The feasible log-likelihood is
``-(n/2) Gbar``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .sieve import BasisSpec, DomainError, SieveFunction, basis_matrix, eval_sieve

RESIDUAL_KINDS = ("regression", "npiv", "quantile")


@dataclass(frozen=True)
class PartitionSpec:
    k: int
    d: int = 1

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")

    @property
    def n_cells(self) -> int:
        return self.k**self.d


@dataclass(frozen=True)
class ResidualModel:
    kind: str = "npiv"
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in RESIDUAL_KINDS:
            raise ValueError(f"residual kind must be one of {RESIDUAL_KINDS}, got {self.kind!r}")
        if self.kind == "quantile" and not 0.0 < self.gamma < 1.0:
            raise ValueError(f"quantile level gamma must lie in (0, 1), got {self.gamma}")

    @property
    def is_linear(self) -> bool:
        return self.kind != "quantile"


def _as_2d(a, n: int, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != n:
        raise ValueError(f"{name} must have {n} rows")
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observations ``(y_i, x_i, w_i)``; ``x`` is ``(n, dx)`` and ``w`` is ``(n, d)``."""

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.shape[0]
        if n < 1:
            raise ValueError("a dataset needs at least one row")
        x = _as_2d(self.x, n, "x")
        w = _as_2d(self.w, n, "w")
        for name, arr in (("y", y), ("x", x), ("w", w)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(x < 0) or np.any(x > 1):
            raise DomainError("x components must lie in [0, 1]")
        if np.any(w < 0) or np.any(w > 1):
            raise DomainError("w components must lie in [0, 1]; apply probit_transform to raw instruments")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dx(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    def rows(self):
        for i in range(self.n):
            yield self.y[i], self.x[i], self.w[i]


@dataclass(frozen=True)
class MomentSummary:
    mbar: np.ndarray
    vhat: np.ndarray
    counts: np.ndarray = field(repr=False)


def probit_transform(w_raw) -> np.ndarray:
    """Map real-valued instruments to [0, 1] componentwise with the normal CDF."""
    return stats.norm.cdf(np.asarray(w_raw, dtype=float))


def bin_indices(w, part: PartitionSpec) -> np.ndarray:
    """Zero-based flat cell index for every row of ``w`` (shape ``(n, d)``)."""
    pts = np.asarray(w, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if part.d == 1 else pts[None, :]
    if pts.shape[1] != part.d:
        raise ValueError(f"instrument points must have {part.d} component(s)")
    if np.any(~np.isfinite(pts)) or np.any(pts < 0) or np.any(pts > 1):
        raise DomainError("instrument components must lie in [0, 1]")
    axis = np.minimum(np.floor(pts * part.k).astype(np.int64), part.k - 1)
    flat = np.zeros(pts.shape[0], dtype=np.int64)
    for col in range(part.d):
        flat = flat * part.k + axis[:, col]
    return flat


def bin_index(w, part: PartitionSpec) -> int:
    """One-based flat cell index of a single instrument point (row-major)."""
    pts = np.atleast_1d(np.asarray(w, dtype=float))
    if pts.shape != (part.d,):
        raise ValueError(f"instrument point must have {part.d} component(s)")
    return int(bin_indices(pts[None, :], part)[0]) + 1


def _rho(model: ResidualModel, y, gvals):
    if model.kind == "quantile":
        return (y <= gvals).astype(float) - model.gamma
    return y - gvals


def residual(model: ResidualModel, row, g: SieveFunction) -> float:
    """``rho(Z, g)`` for one observation ``row = (y, x, w)``.

    The regression residual evaluates ``g`` at the conditioning variable ``w``.
    """
    y, x, w = row
    point = np.atleast_1d(np.asarray(w if model.kind == "regression" else x, dtype=float))
    value = eval_sieve(g, point if g.basis.dimension_of_x > 1 else point[0])
    return float(_rho(model, np.float64(y), value))


def dataset_residuals(data: Dataset, g: SieveFunction, model: ResidualModel) -> np.ndarray:
    point = data.w if model.kind == "regression" else data.x
    gvals = basis_matrix(g.basis, g.q, point) @ np.asarray(g.coeffs)
    return _rho(model, data.y, gvals)


def summarize_residuals(rho: np.ndarray, bins: np.ndarray, n_cells: int) -> MomentSummary:
    n = rho.shape[0]
    counts = np.bincount(bins, minlength=n_cells)
    mbar = np.bincount(bins, weights=rho, minlength=n_cells) / n
    vhat = counts / n
    return MomentSummary(mbar=mbar, vhat=vhat, counts=counts)


def moment_summary(data: Dataset, g: SieveFunction, model: ResidualModel,
                   part: PartitionSpec) -> MomentSummary:
    if data.d != part.d:
        raise ValueError(f"dataset has {data.d} instrument column(s), partition expects {part.d}")
    rho = dataset_residuals(data, g, model)
    return summarize_residuals(rho, bin_indices(data.w, part), part.n_cells)


def sample_risk(summary: MomentSummary) -> float:
    """``sum_j mbar_j^2 / vhat_j``; empty cells contribute nothing."""
    occupied = summary.vhat > 0
    return float(np.sum(summary.mbar[occupied] ** 2 / summary.vhat[occupied]))


def log_lil(data: Dataset, g: SieveFunction, model: ResidualModel, part: PartitionSpec) -> float:
    return -0.5 * data.n * sample_risk(moment_summary(data, g, model, part))


class LimitedInformationLikelihood:
    """Fast log-likelihood ``b -> -(n/2) Gbar(g_b)`` for repeated evaluation.

    For the linear residuals (regression, npiv) the binned moments are affine
    in ``b``: ``mbar(b) = a - A[:, :q] b``, so each call costs ``O(k^d q)``.
    The quantile residual is re-evaluated on the full sample. ``weight``
    scales the log-likelihood; ``weight=0`` gives a flat likelihood.
    """

    def __init__(self, data: Dataset, model: ResidualModel, part: PartitionSpec,
                 basis: BasisSpec, q_max: int, weight: float = 1.0):
        if data.d != part.d:
            raise ValueError(f"dataset has {data.d} instrument column(s), partition expects {part.d}")
        self.model = model
        self.part = part
        self.basis = basis
        self.q_max = int(q_max)
        self.weight = float(weight)
        self.n = data.n
        self.bins = bin_indices(data.w, part)
        self.counts = np.bincount(self.bins, minlength=part.n_cells)
        self.vhat = self.counts / self.n
        self._occupied = self.vhat > 0
        self._inv_v = 1.0 / self.vhat[self._occupied]
        point = data.w if model.kind == "regression" else data.x
        self.phi = basis_matrix(basis, self.q_max, point)
        self.y = data.y
        if model.is_linear:
            K = part.n_cells
            self.a = np.bincount(self.bins, weights=self.y, minlength=K)[self._occupied] / self.n
            self.A = np.stack(
                [np.bincount(self.bins, weights=self.phi[:, j], minlength=K) for j in range(self.q_max)],
                axis=1,
            )[self._occupied] / self.n

    def mbar(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        q = b.shape[0]
        if q > self.q_max:
            raise ValueError(f"coefficient vector longer than q_max={self.q_max}")
        if self.model.is_linear:
            return self.a - self.A[:, :q] @ b
        rho = (self.y <= self.phi[:, :q] @ b).astype(float) - self.model.gamma
        K = self.part.n_cells
        return np.bincount(self.bins, weights=rho, minlength=K)[self._occupied] / self.n

    def sample_risk(self, b) -> float:
        m = self.mbar(b)
        return float(m @ (m * self._inv_v))

    def __call__(self, b) -> float:
        if self.weight == 0.0:
            return 0.0
        return -0.5 * self.n * self.weight * self.sample_risk(b)


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    se: float


def population_risk_mc(sampler, g: SieveFunction, model: ResidualModel, mw: int, mz: int,
                       seed=None, chunk: int = 256) -> RiskEstimate:
    """Nested Monte Carlo estimate of ``G(g) = E_W[E(rho(Z, g) | W)^2]``.

    ``sampler`` must provide ``sample_instruments(m, rng)`` returning an
    ``(m, d)`` array and ``sample_given_instruments(w, mz, rng)`` returning
    ``(y, x)`` arrays of shape ``(m, mz)``. Each squared inner mean is
    corrected by ``s^2 / mz`` so the estimator is unbiased; with ``mz == 1``
    no correction is possible and the raw squared residual is used.
    """
    if mw < 1 or mz < 1:
        raise ValueError("mw and mz must be at least 1")
    rng = np.random.default_rng(seed)
    w = np.asarray(sampler.sample_instruments(mw, rng), dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    terms = np.empty(mw)
    coeffs = np.asarray(g.coeffs)
    for start in range(0, mw, chunk):
        wc = w[start : start + chunk]
        y, x = sampler.sample_given_instruments(wc, mz, rng)
        m = wc.shape[0]
        if model.kind == "regression":
            gvals = np.repeat((basis_matrix(g.basis, g.q, wc[:, :g.basis.dimension_of_x]) @ coeffs)[:, None], mz, axis=1)
        else:
            gvals = (basis_matrix(g.basis, g.q, x.reshape(m * mz, -1)) @ coeffs).reshape(m, mz)
        rho = _rho(model, y, gvals)
        inner = rho.mean(axis=1)
        if mz > 1:
            terms[start : start + m] = inner**2 - rho.var(axis=1, ddof=1) / mz
        else:
            terms[start : start + m] = inner**2
    se = float(terms.std(ddof=1) / np.sqrt(mw)) if mw > 1 else float("nan")
    return RiskEstimate(float(terms.mean()), se)
