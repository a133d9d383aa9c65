import json
import math

import numpy as np
import pytest
from scipy import stats

from rmkit.measurement import x_exact_batch
from rmkit.mlp import MLPModel
from rmkit.samplers import (FLOOR_EPSILON, ExactLimit, ExactSampler, MetropolisChain,
                            MLPSampler, PurityEstimate, SimulatedMeasurements, UniformSampler,
                            calibrate, estimate_normalization, estimate_purity_is,
                            metropolis_sample)
from rmkit.states import make_ghz, make_maximally_mixed, make_product
from rmkit.unitaries import UnitaryAngles, sample_haar_angles, sample_haar_batch


def constant_mlp(n, value):
    widths = (2 * n, 4, 1)
    Ws = [np.zeros((2 * n, 4)), np.zeros((4, 1))]
    bs = [np.zeros(4), np.array([value])]
    return MLPModel(widths, Ws, bs)


def product_density(xi):
    return (1 + 3 * (1 - 2 * xi) ** 2) / 2


def product_cdf(xi):
    # integral of the density above from 0 to xi
    return (xi + ((2 * xi - 1) ** 3 + 1) / 2) / 2


def test_evaluate_backends(rng):
    ang = sample_haar_angles(3, rng)
    assert UniformSampler(3).evaluate(ang) == 1.0
    ident = UnitaryAngles(np.zeros(3), np.zeros(3))
    assert ExactSampler(make_product(3)).evaluate(ident) == pytest.approx(8.0)
    assert MLPSampler(constant_mlp(3, 0.7)).evaluate(ang) == pytest.approx(0.7)
    assert MLPSampler(constant_mlp(3, -2.0)).evaluate(ang) == FLOOR_EPSILON
    with pytest.raises(ValueError):
        UniformSampler(2).evaluate(ang)


def test_normalizations(rng):
    assert estimate_normalization(UniformSampler(4), rng=rng) == (1.0, 0.0)
    z, se = estimate_normalization(ExactSampler(make_product(2)), 20_000, rng)
    assert abs(z - 1) < 3 * se
    z, se = estimate_normalization(ExactSampler(make_maximally_mixed(3)), 1000, rng)
    assert z == pytest.approx(1 / 8) and se < 1e-12
    with pytest.raises(ValueError):
        estimate_normalization(ExactSampler(make_product(2)), 50, rng)


def test_exact_sampler_normalization_is_purity():
    assert ExactSampler(make_ghz(3)).normalization == pytest.approx(1.0)
    assert UniformSampler(3).normalization == 1.0
    assert MLPSampler(constant_mlp(2, 1.0)).normalization is None


def test_normalization_consistency_across_seeds():
    model = ExactSampler(make_ghz(3))
    z1, s1 = estimate_normalization(model, 20_000, np.random.default_rng(1))
    z2, s2 = estimate_normalization(model, 20_000, np.random.default_rng(2))
    assert abs(z1 - z2) < 3 * math.hypot(s1, s2)


def test_uniform_chain_accepts_everything(rng):
    chain = metropolis_sample(UniformSampler(3), 300, 50, rng)
    assert chain.acceptance_rate == 1.0
    assert np.all(chain.counts == 1)
    assert chain.n_samples == 250


@pytest.mark.parametrize("proposal", ["independent", "single_qubit"])
@pytest.mark.parametrize("n_total,burn_in", [(10, 0), (100, 50), (501, 500)])
def test_chain_bookkeeping(proposal, n_total, burn_in, rng):
    chain = metropolis_sample(ExactSampler(make_ghz(2)), n_total, burn_in, rng, proposal)
    assert chain.n_samples == n_total - burn_in
    assert np.all(chain.counts >= 1)
    assert 0 <= chain.acceptance_rate <= 1
    # consecutive distinct entries really differ
    assert np.all(np.any(chain.xi[1:] != chain.xi[:-1], axis=1))


def test_chain_argument_errors(rng):
    with pytest.raises(ValueError):
        metropolis_sample(UniformSampler(1), 10, 10, rng)
    with pytest.raises(ValueError):
        metropolis_sample(UniformSampler(1), 0, 0, rng)
    with pytest.raises(ValueError):
        metropolis_sample(UniformSampler(1), 10, 0, rng, proposal="gibbs")


def test_chain_json_round_trip(rng):
    chain = metropolis_sample(ExactSampler(make_ghz(2)), 60, 10, rng)
    back = MetropolisChain.from_json(chain.to_json())
    np.testing.assert_array_equal(back.xi, chain.xi)
    np.testing.assert_array_equal(back.counts, chain.counts)
    assert back.acceptance_rate == chain.acceptance_rate
    assert set(json.loads(chain.to_json())) >= {"angles", "counts", "acceptance_rate"}


def test_exact_single_qubit_chain_chi_square():
    chain = metropolis_sample(ExactSampler(make_product(1)), 100_050, 50, np.random.default_rng(5))
    xi = chain.expanded_xi()[:, 0]
    edges = np.linspace(0, 1, 21)
    observed, _ = np.histogram(xi, edges)
    expected = xi.size * np.diff(product_cdf(edges))
    # Metropolis repeats inflate the variance; thin by the integrated autocorrelation
    tau = 1 / chain.acceptance_rate
    chi2 = np.sum((observed - expected) ** 2 / expected) / (2 * tau - 1)
    assert stats.chi2.sf(chi2, df=19) > 0.01


def test_single_qubit_proposal_stationary():
    chain = metropolis_sample(ExactSampler(make_product(1)), 40_050, 50,
                              np.random.default_rng(8), proposal="single_qubit")
    xi = chain.expanded_xi()[:, 0]
    assert stats.kstest(xi, product_cdf).statistic < 0.02


def test_analytic_cdf_matches_density():
    from scipy.integrate import quad
    for x in (0.1, 0.5, 0.9, 1.0):
        assert product_cdf(x) == pytest.approx(quad(product_density, 0, x)[0], abs=1e-12)


def test_uniform_estimate_is_plain_mean(rng):
    st = make_ghz(3)
    chain = metropolis_sample(UniformSampler(3), 80, 0, np.random.default_rng(3))
    est = estimate_purity_is(UniformSampler(3), chain, SimulatedMeasurements(st, 20),
                             np.random.default_rng(4))
    src = SimulatedMeasurements(st, 20)
    x = src.x_values(chain.xi, chain.phi, np.random.default_rng(4))
    assert est.p2_hat == pytest.approx(x.mean(), rel=1e-12)
    assert est.stderr == pytest.approx(x.std(ddof=1) / np.sqrt(x.size), rel=1e-10)


@pytest.mark.parametrize("n", range(1, 9))
def test_zero_variance_limit(n, rng):
    model = ExactSampler(make_product(n))
    chain = metropolis_sample(model, 80, 20, rng)
    est = estimate_purity_is(model, chain, ExactLimit(make_product(n)), rng)
    assert est.p2_hat == 1.0 and est.stderr == 0.0
    assert est.renyi2 == 0.0


def test_ghz_exact_sampler_estimate():
    st = make_ghz(3)
    model = ExactSampler(st)
    rng = np.random.default_rng(21)
    est = estimate_purity_is(model, metropolis_sample(model, 100, 50, rng),
                             SimulatedMeasurements(st, 200), rng)
    assert est.n_s == 50
    assert abs(est.p2_hat - 1) < 3 * est.stderr


def test_scale_invariance():
    st = make_ghz(3)
    base = ExactSampler(st)
    ref = None
    for c in (1.0, 0.37, 8.0, 1e3):
        model = base.scaled(c)
        rng = np.random.default_rng(99)
        chain = metropolis_sample(model, 150, 50, rng)
        est = estimate_purity_is(model, chain, SimulatedMeasurements(st, 30), rng)
        if ref is None:
            ref = (chain, est)
            continue
        np.testing.assert_array_equal(chain.xi, ref[0].xi)
        np.testing.assert_array_equal(chain.counts, ref[0].counts)
        assert est.p2_hat == pytest.approx(ref[1].p2_hat, rel=1e-12)


def test_normalization_uncertainty_enters_stderr(rng):
    model = calibrate(MLPSampler(constant_mlp(2, 0.5)), 200, rng)
    assert model.normalization == pytest.approx(0.5) and model.normalization_stderr == 0.0
    model.normalization_stderr = 0.05
    chain = metropolis_sample(model, 60, 10, rng)
    est = estimate_purity_is(model, chain, ExactLimit(make_product(2)), rng)
    ratios = est.ratios
    base_se = np.std(np.repeat(ratios, chain.counts), ddof=1) / np.sqrt(chain.n_samples)
    assert est.stderr == pytest.approx(math.hypot(base_se, est.p2_hat * 0.1), rel=1e-9)


def test_uncalibrated_model_rejected(rng):
    model = MLPSampler(constant_mlp(2, 1.0))
    chain = metropolis_sample(model, 20, 0, rng)
    with pytest.raises(ValueError):
        estimate_purity_is(model, chain, ExactLimit(make_product(2)), rng)


def test_renyi_flags():
    assert not PurityEstimate(-0.1, 0.2, 5, 5, 10).renyi2_valid
    assert math.isnan(PurityEstimate(-0.1, 0.2, 5, 5, 10).renyi2)
    assert PurityEstimate(-0.1, 0.2, 5, 5, 10).to_dict()["renyi2"] is None
    assert PurityEstimate(0.25, 0.0, 1, 1, None).renyi2 == pytest.approx(math.log(4))
    assert PurityEstimate(0.25, 0.0, 1, 1, None, log_base=2).renyi2 == pytest.approx(2.0)


@pytest.mark.parametrize("make_model", [lambda st: UniformSampler(st.n_qubits), ExactSampler])
def test_unbiased_small_pipeline(make_model):
    st = make_ghz(2)
    model = make_model(st)
    rng = np.random.default_rng(31)
    est = np.array([estimate_purity_is(model, metropolis_sample(model, 30, 10, rng),
                                       SimulatedMeasurements(st, 10), rng).p2_hat
                    for _ in range(600)])
    assert abs(est.mean() - 1.0) < 3 * est.std(ddof=1) / np.sqrt(est.size)


def test_exact_sampler_haar_integral_matches_purity(rng):
    st = make_ghz(2)
    xi, phi = sample_haar_batch(2, 50_000, rng)
    x = x_exact_batch(st, xi, phi)
    assert abs(x.mean() - ExactSampler(st).normalization) < 3 * x.std() / np.sqrt(x.size)
