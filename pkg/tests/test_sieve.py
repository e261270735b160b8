import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasibayes.sieve import (
    BasisSpec,
    DomainError,
    SieveFunction,
    basis_matrix,
    eval_basis,
    eval_sieve,
    gram_matrix,
    multi_indices,
)

COS = BasisSpec("cosine", 1)
LEG = BasisSpec("legendre", 1)


def test_cosine_closed_form_values():
    assert eval_basis(COS, 0, 0.37) == 1.0
    assert eval_basis(COS, 2, 0.5) == pytest.approx(-math.sqrt(2), abs=1e-15)
    assert eval_basis(COS, 1, 0.25) == pytest.approx(1.0, abs=1e-15)


def test_legendre_matches_numpy_legendre():
    x = np.linspace(0, 1, 11)
    for j in range(7):
        ref = math.sqrt(2 * j + 1) * np.polynomial.legendre.Legendre.basis(j)(2 * x - 1)
        assert np.allclose(basis_matrix(LEG, j + 1, x)[:, j], ref, atol=1e-12)


def test_domain_and_argument_errors():
    with pytest.raises(DomainError):
        eval_basis(COS, 1, 1.2)
    with pytest.raises(DomainError):
        eval_basis(LEG, 1, -0.01)
    with pytest.raises(ValueError):
        eval_basis(COS, -1, 0.5)
    with pytest.raises(ValueError):
        BasisSpec("wavelet", 1)
    with pytest.raises(ValueError):
        SieveFunction(COS, (1.0, float("nan")))
    with pytest.raises(ValueError):
        SieveFunction(COS, ())


def test_eval_sieve_examples():
    assert eval_sieve(SieveFunction(COS, (2.5, 0.0, 0.0)), 0.9) == pytest.approx(2.5)
    assert eval_sieve(SieveFunction(COS, (0.0, 0.0)), 0.3) == 0.0
    assert eval_sieve(SieveFunction(COS, (1.0, 1.0)), 0.0) == pytest.approx(1 + math.sqrt(2))


def test_gram_examples():
    assert gram_matrix(COS, 1, 8) == pytest.approx(np.array([[1.0]]), abs=1e-15)
    assert np.max(np.abs(gram_matrix(COS, 4, 256) - np.eye(4))) < 1e-10
    assert np.max(np.abs(gram_matrix(LEG, 3, 64) - np.eye(3))) < 1e-12


@pytest.mark.parametrize("kind", ["cosine", "legendre"])
def test_orthonormality_q8(kind):
    assert np.max(np.abs(gram_matrix(BasisSpec(kind, 1), 8, 512) - np.eye(8))) < 1e-8


def test_tensor_basis_orthonormal_in_two_dimensions():
    spec = BasisSpec("cosine", 2)
    idx = multi_indices(2, 6)
    assert idx[0] == (0, 0) and set(idx[1:3]) == {(0, 1), (1, 0)}
    assert [sum(i) for i in idx] == sorted(sum(i) for i in idx)
    assert np.max(np.abs(gram_matrix(spec, 6, 32) - np.eye(6))) < 1e-10


def test_parseval_cosine():
    rng = np.random.default_rng(3)
    nodes, weights = np.polynomial.legendre.leggauss(2048)
    x = 0.5 * (nodes + 1)
    for q in (1, 5, 16):
        b = rng.normal(size=q)
        g = SieveFunction(COS, tuple(b))
        integral = 0.5 * np.sum(weights * eval_sieve(g, x) ** 2)
        assert integral == pytest.approx(float(b @ b), rel=1e-6)


coef = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(coef, min_size=1, max_size=6),
    st.lists(coef, min_size=1, max_size=6),
    st.floats(-5, 5),
    st.floats(0, 1),
)
def test_linearity(c1, c2, a, x):
    g1, g2 = SieveFunction(COS, tuple(c1)), SieveFunction(COS, tuple(c2))
    lhs = eval_sieve(g1.combine(a, g2), x)
    rhs = a * eval_sieve(g1, x) + eval_sieve(g2, x)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(a)) * 10)
