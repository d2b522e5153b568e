"""Tests for the Beta density in mean/dispersion form and its links."""

import numpy as np
import pytest
from scipy import integrate, stats

from spatbeta.beta import (
    LINKS,
    beta_logpdf,
    beta_variance,
    link_apply,
    link_invert,
    link_mu_eta,
    link_mu_eta2,
    shapes_from,
)


class TestShapes:
    def test_mean_dispersion_parameterization(self):
        p, q = shapes_from(0.3, 10.0)
        np.testing.assert_allclose(p, 3.0)
        np.testing.assert_allclose(q, 7.0)

    def test_shapes_recover_mean(self):
        rng = np.random.default_rng(3)
        mu = rng.uniform(0.05, 0.95, size=50)
        phi = rng.uniform(0.5, 200.0, size=50)
        p, q = shapes_from(mu, phi)
        np.testing.assert_allclose(p / (p + q), mu, rtol=1e-12)
        np.testing.assert_allclose(p + q, phi, rtol=1e-12)


class TestLogpdf:
    def test_frozen_values(self):
        """Log-densities match values frozen from an independent source."""
        np.testing.assert_allclose(
            beta_logpdf(0.25, 0.3, 5.0), 0.6855101039467191, rtol=1e-12
        )
        np.testing.assert_allclose(
            beta_logpdf(0.64, 0.7, 40.0), 1.2839982939441121, rtol=1e-12
        )
        np.testing.assert_allclose(
            beta_logpdf(0.02, 0.05, 12.0), 2.406142856106101, rtol=1e-12
        )
        np.testing.assert_allclose(beta_logpdf(0.9, 0.5, 2.0), 0.0, atol=1e-14)

    def test_matches_reference_density(self):
        rng = np.random.default_rng(11)
        mu = rng.uniform(0.05, 0.95, size=200)
        phi = rng.uniform(0.5, 300.0, size=200)
        y = rng.uniform(0.01, 0.99, size=200)
        expected = stats.beta.logpdf(y, mu * phi, (1.0 - mu) * phi)
        np.testing.assert_allclose(beta_logpdf(y, mu, phi), expected, rtol=1e-10)

    def test_density_integrates_to_one(self):
        for mu, phi in [(0.2, 3.0), (0.5, 50.0), (0.85, 8.0)]:
            total, _ = integrate.quad(
                lambda t: np.exp(beta_logpdf(t, mu, phi)), 0.0, 1.0
            )
            np.testing.assert_allclose(total, 1.0, atol=1e-9)

    def test_vectorizes(self):
        y = np.array([0.2, 0.4, 0.6])
        out = beta_logpdf(y, 0.4, 9.0)
        assert out.shape == (3,)
        for i, yi in enumerate(y):
            np.testing.assert_allclose(out[i], beta_logpdf(yi, 0.4, 9.0))


class TestVariance:
    def test_closed_form(self):
        """Var = mu (1 - mu) / (1 + phi)."""
        np.testing.assert_allclose(beta_variance(0.3, 5.0), 0.035, rtol=1e-12)
        np.testing.assert_allclose(
            beta_variance(0.5, 2.0), 0.08333333333333333, rtol=1e-12
        )

    def test_matches_reference_variance(self):
        rng = np.random.default_rng(5)
        mu = rng.uniform(0.05, 0.95, size=50)
        phi = rng.uniform(0.5, 100.0, size=50)
        expected = stats.beta.var(mu * phi, (1.0 - mu) * phi)
        np.testing.assert_allclose(beta_variance(mu, phi), expected, rtol=1e-10)


class TestLinks:
    def test_all_five_present(self):
        assert list(LINKS) == ["logit", "probit", "loglog", "cloglog", "cauchy"]

    def test_frozen_inverse_values(self):
        np.testing.assert_allclose(
            link_invert("loglog", 1.2), 0.7399340547836062, rtol=1e-12
        )
        np.testing.assert_allclose(
            link_invert("cloglog", -0.3), 0.5232763092854059, rtol=1e-12
        )
        np.testing.assert_allclose(
            link_invert("cauchy", 2.0), 0.8524163823495667, rtol=1e-12
        )
        np.testing.assert_allclose(
            link_apply("probit", 0.8), 0.8416212335729143, rtol=1e-12
        )

    def test_center_values(self):
        np.testing.assert_allclose(link_apply("logit", 0.5), 0.0, atol=1e-14)
        np.testing.assert_allclose(link_invert("probit", 0.0), 0.5, atol=1e-14)
        np.testing.assert_allclose(link_invert("cauchy", 0.0), 0.5, atol=1e-14)
        np.testing.assert_allclose(
            link_invert("cloglog", 0.0), 1.0 - np.exp(-1.0), rtol=1e-12
        )
        np.testing.assert_allclose(
            link_invert("loglog", 0.0), np.exp(-1.0), rtol=1e-12
        )

    @pytest.mark.parametrize("link", LINKS)
    def test_round_trip(self, link):
        rng = np.random.default_rng(17)
        mu = rng.uniform(0.02, 0.98, size=100)
        np.testing.assert_allclose(
            link_invert(link, link_apply(link, mu)), mu, rtol=1e-9
        )

    @pytest.mark.parametrize("link", LINKS)
    def test_inverse_strictly_increasing(self, link):
        # Stay away from the tails where the clamp flattens the curve.
        eta = np.linspace(-3.0, 3.0, 400)
        mu = link_invert(link, eta)
        assert np.all(np.diff(mu) > 0)
        assert np.all(mu > 0.0)
        assert np.all(mu < 1.0)

    @pytest.mark.parametrize("link", LINKS)
    def test_first_derivative_matches_differences(self, link):
        eta = np.linspace(-2.0, 2.0, 41)
        h = 1e-6
        numeric = (link_invert(link, eta + h) - link_invert(link, eta - h)) / (2 * h)
        np.testing.assert_allclose(
            link_mu_eta(link, eta), numeric, rtol=1e-5, atol=1e-10
        )

    @pytest.mark.parametrize("link", LINKS)
    def test_second_derivative_matches_differences(self, link):
        eta = np.linspace(-2.0, 2.0, 41)
        h = 1e-6
        numeric = (link_mu_eta(link, eta + h) - link_mu_eta(link, eta - h)) / (2 * h)
        np.testing.assert_allclose(
            link_mu_eta2(link, eta), numeric, rtol=1e-5, atol=1e-9
        )

    def test_extreme_eta_stays_inside_unit_interval(self):
        for link in LINKS:
            lo = link_invert(link, -80.0)
            hi = link_invert(link, 80.0)
            assert 0.0 < lo < hi < 1.0

    def test_unknown_link_rejected(self):
        with pytest.raises((KeyError, ValueError)):
            link_apply("identity", 0.5)
