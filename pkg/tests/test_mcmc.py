"""Tests for the Metropolis-within-Gibbs validation sampler."""

import numpy as np
import pytest
from scipy import sparse

from spatbeta.beta import link_invert
from spatbeta.inference import FitControls, FitError, fit_laplace, fit_mcmc
from spatbeta.model import ModelData, ModelSpec, PriorSpec


def path_precision(n):
    Q = np.zeros((n, n))
    for i in range(n - 1):
        Q[i, i] += 1.0
        Q[i + 1, i + 1] += 1.0
        Q[i, i + 1] -= 1.0
        Q[i + 1, i] -= 1.0
    return sparse.csr_matrix(Q)


def simulate(rng, n=60, beta=(-0.6, 0.8), phi=60.0, link="logit"):
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    eta = X @ np.asarray(beta)
    mu = link_invert(link, eta)
    y = np.clip(rng.beta(mu * phi, (1.0 - mu) * phi), 1e-6, 1.0 - 1e-6)
    return ModelData(y=y, X=X, areas=np.arange(n), train=np.ones(n, dtype=bool), n_nodes=n)


class TestMechanics:
    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(201)
        data = simulate(rng, n=40)
        spec = ModelSpec(kind="BetaReg", link="logit")
        a = fit_mcmc(spec, data, iterations=600, burn_in=300, seed=5)
        b = fit_mcmc(spec, data, iterations=600, burn_in=300, seed=5)
        np.testing.assert_array_equal(a.beta, b.beta)
        np.testing.assert_array_equal(a.phi, b.phi)

    def test_different_seeds_differ(self):
        rng = np.random.default_rng(202)
        data = simulate(rng, n=40)
        spec = ModelSpec(kind="BetaReg", link="logit")
        a = fit_mcmc(spec, data, iterations=600, burn_in=300, seed=0)
        b = fit_mcmc(spec, data, iterations=600, burn_in=300, seed=1)
        assert not np.array_equal(a.beta, b.beta)

    def test_draw_counts_and_thinning(self):
        rng = np.random.default_rng(203)
        data = simulate(rng, n=30)
        spec = ModelSpec(kind="BetaReg", link="logit")
        samples = fit_mcmc(spec, data, iterations=500, burn_in=200, thin=3)
        assert samples.beta.shape == (100, 2)
        assert samples.phi.shape == (100,)
        assert samples.iterations == 500
        assert samples.burn_in == 200

    def test_block_layout_per_kind(self):
        rng = np.random.default_rng(204)
        data = simulate(rng, n=30)
        Q = path_precision(30)
        cases = {
            "BetaReg": ({"beta", "phi"}, False, False),
            "BetaRE": ({"beta", "phi", "psi1", "v"}, False, True),
            "BetaBesag": ({"beta", "phi", "psi2", "u"}, True, False),
            "BetaBYM": ({"beta", "phi", "psi1", "psi2", "u", "v"}, True, True),
        }
        for kind, (blocks, has_u, has_v) in cases.items():
            spec = ModelSpec(kind=kind, link="logit")
            samples = fit_mcmc(
                spec, data, Q=Q if has_u else None, iterations=200, burn_in=100
            )
            assert set(samples.acceptance) == blocks
            assert (samples.psi2 is not None) is has_u
            assert (samples.psi1 is not None) is has_v
            assert samples.u is None
            assert samples.v is None

    def test_store_latent_returns_fields(self):
        rng = np.random.default_rng(205)
        data = simulate(rng, n=25)
        spec = ModelSpec(kind="BetaBYM", link="logit")
        samples = fit_mcmc(
            spec,
            data,
            Q=path_precision(25),
            iterations=300,
            burn_in=150,
            store_latent=True,
        )
        assert samples.u.shape == (150, 25)
        assert samples.v.shape == (150, 25)
        np.testing.assert_allclose(samples.u.mean(axis=1), 0.0, atol=1e-10)

    def test_duplicate_training_areas_rejected(self):
        rng = np.random.default_rng(206)
        n = 20
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        data = ModelData(
            y=rng.uniform(0.2, 0.8, size=n),
            X=X,
            areas=np.repeat(np.arange(n // 2), 2),
            train=np.ones(n, dtype=bool),
            n_nodes=n // 2,
        )
        with pytest.raises(FitError, match="distinct"):
            fit_mcmc(ModelSpec(kind="BetaReg", link="logit"), data, iterations=100, burn_in=50)

    def test_burn_in_bounds(self):
        rng = np.random.default_rng(207)
        data = simulate(rng, n=20)
        with pytest.raises(ValueError):
            fit_mcmc(
                ModelSpec(kind="BetaReg", link="logit"),
                data,
                iterations=100,
                burn_in=100,
            )

    def test_spatial_kind_requires_precision(self):
        rng = np.random.default_rng(208)
        data = simulate(rng, n=20)
        with pytest.raises(FitError, match="precision"):
            fit_mcmc(
                ModelSpec(kind="BetaBesag", link="logit"),
                data,
                iterations=100,
                burn_in=50,
            )


class TestStatisticalBehavior:
    def test_acceptance_rates_in_working_band(self):
        rng = np.random.default_rng(209)
        data = simulate(rng, n=60)
        spec = ModelSpec(kind="BetaReg", link="logit")
        samples = fit_mcmc(spec, data, iterations=4000, burn_in=2000, seed=2)
        for block in ("beta", "phi"):
            assert 0.1 <= samples.acceptance[block] <= 0.6, (
                block,
                samples.acceptance[block],
            )

    def test_posterior_concentrates_near_truth(self):
        rng = np.random.default_rng(210)
        beta_true = np.array([-0.6, 0.8])
        data = simulate(rng, n=100, beta=beta_true, phi=80.0)
        spec = ModelSpec(kind="BetaReg", link="logit")
        samples = fit_mcmc(spec, data, iterations=6000, burn_in=3000, seed=3)
        post_mean = samples.beta.mean(axis=0)
        post_sd = samples.beta.std(axis=0, ddof=1)
        np.testing.assert_array_less(np.abs(post_mean - beta_true), 4.0 * post_sd)
        assert 30.0 < samples.phi.mean() < 220.0

    def test_agrees_with_laplace_on_shared_problem(self):
        rng = np.random.default_rng(211)
        data = simulate(rng, n=100, phi=60.0)
        spec = ModelSpec(kind="BetaReg", link="logit")
        fit = fit_laplace(spec, data, controls=FitControls(n_draws=200))
        samples = fit_mcmc(spec, data, iterations=6000, burn_in=3000, seed=4)
        np.testing.assert_allclose(
            samples.beta.mean(axis=0), fit.beta_mean, atol=0.05
        )

    def test_zero_likelihood_scale_recovers_prior(self):
        """With the likelihood switched off the dispersion draws follow
        their prior; a tight prior makes the check sharp."""
        rng = np.random.default_rng(212)
        data = simulate(rng, n=30)
        priors = PriorSpec(phi_shape=20.0, phi_rate=10.0)
        spec = ModelSpec(kind="BetaReg", link="logit", priors=priors)
        samples = fit_mcmc(
            spec,
            data,
            iterations=12000,
            burn_in=2000,
            seed=6,
            likelihood_scale=0.0,
        )
        # prior is Gamma(20, 10): mean 2.0, sd ~0.447
        assert abs(samples.phi.mean() - 2.0) < 0.25
        assert abs(np.median(samples.phi) - 1.967) < 0.25
