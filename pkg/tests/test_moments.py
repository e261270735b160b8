import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasibayes.moments import (
    Dataset,
    LimitedInformationLikelihood,
    MomentSummary,
    PartitionSpec,
    ResidualModel,
    bin_index,
    bin_indices,
    log_lil,
    moment_summary,
    population_risk_mc,
    probit_transform,
    residual,
    sample_risk,
    summarize_residuals,
)
from quasibayes.oracle import make_npiv_dgp, weak_norm_sq
from quasibayes.sieve import BasisSpec, DomainError, SieveFunction

COS = BasisSpec()


def const(c, q=1):
    return SieveFunction(COS, (c,) + (0.0,) * (q - 1))


def test_bin_index_examples():
    assert bin_index((0.26, 0.74), PartitionSpec(4, 2)) == 7
    assert bin_index((0.0,), PartitionSpec(4, 1)) == 1
    assert bin_index((1.0,), PartitionSpec(4, 1)) == 4
    assert bin_index((0.25,), PartitionSpec(4, 1)) == 2
    with pytest.raises(DomainError):
        bin_index((1.01,), PartitionSpec(4, 1))
    with pytest.raises(ValueError):
        PartitionSpec(0)


def test_bin_indices_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    w = rng.uniform(size=(50, 2))
    part = PartitionSpec(5, 2)
    assert list(bin_indices(w, part) + 1) == [bin_index(row, part) for row in w]


def test_residual_examples():
    assert residual(ResidualModel("regression"), (2.0, 0.3, 0.7), const(0.5)) == 1.5
    assert residual(ResidualModel("npiv"), (1.0, 0.3, 0.7), const(1.0)) == 0.0
    assert residual(ResidualModel("quantile", 0.5), (1.0, 0.3, 0.7), const(2.0)) == 0.5
    with pytest.raises(ValueError):
        ResidualModel("quantile", 1.0)


def test_regression_residual_evaluates_at_w():
    g = SieveFunction(COS, (0.0, 1.0))
    row = (0.0, 0.0, 1.0)
    assert residual(ResidualModel("regression"), row, g) == pytest.approx(math.sqrt(2))
    assert residual(ResidualModel("npiv"), row, g) == pytest.approx(-math.sqrt(2))


def test_moment_summary_hand_example():
    summary = summarize_residuals(np.array([1.0, -1.0, 2.0, 0.0]), np.array([0, 0, 1, 1]), 2)
    assert summary.mbar.tolist() == [0.0, 0.5]
    assert summary.vhat.tolist() == [0.5, 0.5]
    assert sample_risk(summary) == 0.5
    data = Dataset(y=[1.0, -1.0, 2.0, 0.0], x=[0.5] * 4, w=[0.1, 0.2, 0.7, 0.9])
    s2 = moment_summary(data, const(0.0), ResidualModel("npiv"), PartitionSpec(2))
    assert s2.mbar.tolist() == [0.0, 0.5] and s2.counts.tolist() == [2, 2]
    assert log_lil(data, const(0.0), ResidualModel("npiv"), PartitionSpec(2)) == -1.0


def test_sample_risk_edge_cases():
    assert sample_risk(MomentSummary(np.zeros(3), np.array([0.2, 0.3, 0.5]), np.array([2, 3, 5]))) == 0.0
    s = MomentSummary(np.array([0.0, 0.3]), np.array([0.0, 1.0]), np.array([0, 4]))
    assert sample_risk(s) == pytest.approx(0.09)


def test_all_w_in_one_cell():
    data = Dataset(y=[1.0, 2.0], x=[0.1, 0.2], w=[0.05, 0.1])
    s = moment_summary(data, const(0.0), ResidualModel("npiv"), PartitionSpec(3))
    assert s.vhat.tolist() == [1.0, 0.0, 0.0]


def test_dataset_validation():
    with pytest.raises(DomainError):
        Dataset(y=[1.0], x=[0.5], w=[1.5])
    with pytest.raises(ValueError):
        Dataset(y=[], x=[], w=[])


def test_probit_transform_maps_into_unit_interval():
    out = probit_transform(np.array([[-3.0], [0.0], [3.0]]))
    assert out[1, 0] == 0.5 and 0 < out[0, 0] < out[2, 0] < 1


def test_log_lil_doubles_with_n():
    data = Dataset(y=[1.0, 0.2], x=[0.3, 0.6], w=[0.2, 0.8])
    data2 = Dataset(y=[1.0, 0.2] * 2, x=[0.3, 0.6] * 2, w=[0.2, 0.8] * 2)
    g, m, p = const(0.1), ResidualModel("npiv"), PartitionSpec(2)
    assert log_lil(data2, g, m, p) == pytest.approx(2 * log_lil(data, g, m, p))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 6), st.integers(0, 10_000))
def test_summary_invariants(n, k, seed):
    rng = np.random.default_rng(seed)
    data = Dataset(y=rng.normal(size=n), x=rng.uniform(size=n), w=rng.uniform(size=n))
    g = SieveFunction(COS, tuple(rng.normal(size=3)))
    s = moment_summary(data, g, ResidualModel("npiv"), PartitionSpec(k))
    assert math.isclose(s.vhat.sum(), 1.0, rel_tol=0, abs_tol=1e-12)
    assert np.all(s.mbar[s.counts == 0] == 0)
    assert sample_risk(s) >= 0
    # exactness of the log-likelihood definition
    assert log_lil(data, g, ResidualModel("npiv"), PartitionSpec(k)) == -(n / 2) * sample_risk(s)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["npiv", "regression", "quantile"]))
def test_fast_likelihood_matches_direct(seed, kind):
    rng = np.random.default_rng(seed)
    n = 40
    data = Dataset(y=rng.normal(size=n), x=rng.uniform(size=n), w=rng.uniform(size=n))
    model, part = ResidualModel(kind, 0.3), PartitionSpec(3)
    lil = LimitedInformationLikelihood(data, model, part, COS, 4)
    b = rng.normal(size=4)
    g = SieveFunction(COS, tuple(b))
    assert lil(b) == pytest.approx(log_lil(data, g, model, part), rel=1e-10, abs=1e-12)
    assert lil.sample_risk(b[:2]) == pytest.approx(
        sample_risk(moment_summary(data, SieveFunction(COS, tuple(b[:2])), model, part)), rel=1e-10, abs=1e-12
    )


def test_zero_weight_likelihood_is_flat():
    data = Dataset(y=[1.0, 2.0], x=[0.1, 0.2], w=[0.05, 0.9])
    lil = LimitedInformationLikelihood(data, ResidualModel(), PartitionSpec(2), COS, 2, weight=0.0)
    assert lil(np.array([3.0, -1.0])) == 0.0


def _small_dgp():
    # eigenvalues (1, 0.5, 0.25) with lambda_0 = 1 implicit
    return make_npiv_dgp([0.5, 0.25], [0.3, 0.2, -0.1], positivity="grid")


def test_population_risk_mc_closed_form_example():
    dgp = _small_dgp()
    gap = np.array([0.0, 1.0, 2.0])
    g = SieveFunction(COS, tuple(dgp.true_coeffs + gap))
    est = population_risk_mc(dgp, g, ResidualModel("npiv"), 400, 400, seed=11)
    assert weak_norm_sq(dgp, gap) == pytest.approx(0.5)
    assert abs(est.value - 0.5) <= 3 * est.se


def test_population_risk_mc_zero_in_identified_region():
    dgp = _small_dgp()
    est = population_risk_mc(dgp, dgp.g0, ResidualModel("npiv"), 400, 200, seed=5)
    assert abs(est.value) <= 3 * est.se


def test_population_risk_mc_variance_scales_with_mw():
    dgp = _small_dgp()
    g = SieveFunction(COS, tuple(dgp.true_coeffs + np.array([0.5, 0.5, 0.5])))
    se_small = population_risk_mc(dgp, g, ResidualModel("npiv"), 200, 200, seed=1).se
    se_big = population_risk_mc(dgp, g, ResidualModel("npiv"), 1800, 200, seed=1).se
    assert se_big / se_small == pytest.approx(1 / 3, rel=0.25)
