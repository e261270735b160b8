"""Orthonormal sieve bases on [0, 1]^d and sieve-function evaluation.

Two 1-D families are provided:

* ``cosine``: ``phi_0 = 1`` and ``phi_j(x) = sqrt(2) cos(j pi x)``;
* ``legendre``: shifted Legendre polynomials ``sqrt(2j + 1) P_j(2x - 1)``.

Both are orthonormal under Uniform[0, 1]. For ``dimension_of_x > 1`` the
basis is the tensor product of the 1-D elements, enumerated in graded order
(total degree first, then lexicographically).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

BASIS_KINDS = ("cosine", "legendre")


class DomainError(ValueError):
    """A point lies outside the unit cube."""


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "cosine"
    dimension_of_x: int = 1

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ValueError(f"basis kind must be one of {BASIS_KINDS}, got {self.kind!r}")
        if int(self.dimension_of_x) < 1:
            raise ValueError("dimension_of_x must be a positive integer")


@dataclass(frozen=True)
class SieveFunction:
    """The function ``g_b = sum_j b_j phi_j`` for a finite coefficient vector."""

    basis: BasisSpec
    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.atleast_1d(np.asarray(self.coeffs, dtype=float)))
        if len(coeffs) < 1:
            raise ValueError("a sieve function needs at least one coefficient")
        if not all(np.isfinite(coeffs)):
            raise ValueError("sieve coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def q(self) -> int:
        return len(self.coeffs)

    def __call__(self, x):
        return eval_sieve(self, x)

    def combine(self, a: float, other: "SieveFunction") -> "SieveFunction":
        """Coefficient-wise ``a * self + other`` (shorter vector zero-padded)."""
        if other.basis != self.basis:
            raise ValueError("cannot combine sieve functions over different bases")
        q = max(self.q, other.q)
        mine = np.zeros(q)
        theirs = np.zeros(q)
        mine[: self.q] = self.coeffs
        theirs[: other.q] = other.coeffs
        return SieveFunction(self.basis, tuple(a * mine + theirs))


@lru_cache(maxsize=64)
def multi_indices(dimension: int, q: int) -> tuple:
    """First ``q`` multi-indices of a ``dimension``-fold tensor basis in graded order."""
    if dimension == 1:
        return tuple((j,) for j in range(q))
    out = []
    degree = 0
    while len(out) < q:
        block = [
            idx
            for idx in itertools.product(range(degree + 1), repeat=dimension)
            if sum(idx) == degree
        ]
        out.extend(sorted(block, reverse=True))
        degree += 1
    return tuple(out[:q])


def _check_unit(x: np.ndarray) -> None:
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("points must lie in [0, 1]")


def _basis_1d(kind: str, j: int, x: np.ndarray) -> np.ndarray:
    if j == 0:
        return np.ones_like(x, dtype=float)
    if kind == "cosine":
        return np.sqrt(2.0) * np.cos(j * np.pi * x)
    coef = np.zeros(j + 1)
    coef[j] = np.sqrt(2.0 * j + 1.0)
    return npleg.legval(2.0 * x - 1.0, coef)


def _basis_1d_matrix(kind: str, degree: int, x: np.ndarray) -> np.ndarray:
    """Columns ``phi_0..phi_degree`` evaluated at the 1-D points ``x``."""
    n = x.shape[0]
    out = np.empty((n, degree + 1))
    if kind == "cosine":
        out[:, 0] = 1.0
        if degree:
            out[:, 1:] = np.sqrt(2.0) * np.cos(np.pi * np.outer(x, np.arange(1, degree + 1)))
        return out
    t = 2.0 * x - 1.0
    out[:, 0] = 1.0
    if degree:
        out[:, 1] = t
    # Bonnet recursion on the unnormalized polynomials
    for j in range(2, degree + 1):
        out[:, j] = ((2 * j - 1) * t * out[:, j - 1] - (j - 1) * out[:, j - 2]) / j
    return out * np.sqrt(2.0 * np.arange(degree + 1) + 1.0)


def eval_basis(spec: BasisSpec, j: int, x) -> float:
    """Evaluate the ``j``-th basis element at a point ``x`` of [0, 1]^d."""
    if int(j) != j or j < 0:
        raise ValueError(f"basis index must be a nonnegative integer, got {j!r}")
    point = np.atleast_1d(np.asarray(x, dtype=float))
    if point.shape != (spec.dimension_of_x,):
        raise ValueError(f"expected a point of dimension {spec.dimension_of_x}")
    _check_unit(point)
    idx = multi_indices(spec.dimension_of_x, int(j) + 1)[int(j)]
    value = 1.0
    for axis, deg in enumerate(idx):
        value *= float(_basis_1d(spec.kind, deg, point[axis : axis + 1])[0])
    return value


def basis_matrix(spec: BasisSpec, q: int, x) -> np.ndarray:
    """Design matrix ``Phi[i, j] = phi_j(x_i)`` of shape ``(n, q)``.

    ``x`` is either a 1-D array of points (when ``dimension_of_x == 1``) or an
    ``(n, dimension_of_x)`` array.
    """
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[1] != spec.dimension_of_x:
        raise ValueError(f"points must have {spec.dimension_of_x} column(s)")
    _check_unit(pts)
    idx = multi_indices(spec.dimension_of_x, q)
    if spec.dimension_of_x == 1:
        return _basis_1d_matrix(spec.kind, q - 1, pts[:, 0])
    max_deg = max(max(i) for i in idx)
    per_axis = [_basis_1d_matrix(spec.kind, max_deg, pts[:, a]) for a in range(spec.dimension_of_x)]
    out = np.ones((pts.shape[0], q))
    for col, multi in enumerate(idx):
        for axis, deg in enumerate(multi):
            if deg:
                out[:, col] *= per_axis[axis][:, deg]
    return out


def eval_sieve(g: SieveFunction, x):
    """Evaluate ``g`` at a single point (returns float) or an array of points."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and g.basis.dimension_of_x > 1)
    if single:
        pts = arr.reshape(1, -1) if g.basis.dimension_of_x > 1 else arr.reshape(1)
        return float((basis_matrix(g.basis, g.q, pts) @ np.asarray(g.coeffs))[0])
    return basis_matrix(g.basis, g.q, arr) @ np.asarray(g.coeffs)


def gram_matrix(spec: BasisSpec, q: int, quad_order: int | None = None) -> np.ndarray:
    """Gauss-Legendre approximation of ``int phi_i phi_j`` over [0, 1]^d.

    The default order is ``16 * q`` nodes per axis.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    order = 16 * q if quad_order is None else int(quad_order)
    if order < 1:
        raise ValueError("quad_order must be positive")
    nodes, weights = npleg.leggauss(order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    d = spec.dimension_of_x
    if d == 1:
        pts, w = nodes, weights
    else:
        grids = np.meshgrid(*([nodes] * d), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod(np.stack(np.meshgrid(*([weights] * d), indexing="ij")).reshape(d, -1), axis=0)
    phi = basis_matrix(spec, q, pts)
    return phi.T @ (phi * w[:, None])
