"""Beta distribution in mean/dispersion form and the link catalog.

The density is parameterized by its mean ``mu`` in (0, 1) and a dispersion
``phi > 0`` instead of the usual shape pair; the shapes are recovered as
``p = mu * phi`` and ``q = (1 - mu) * phi``.  Under this parameterization

    E[y] = mu,    Var[y] = mu * (1 - mu) / (1 + phi),

so ``phi`` acts as a precision: larger values concentrate the distribution
around its mean.

Five link functions connect the mean to a linear predictor ``eta``: logit,
probit, log-log, complementary log-log, and Cauchy.  ``link_invert`` clamps
its output to the open interval so downstream likelihood evaluations stay
finite even for extreme predictors.
"""

import numpy as np
from scipy import special

__all__ = [
    "LINKS",
    "MU_EPS",
    "shapes_from",
    "beta_logpdf",
    "beta_variance",
    "link_apply",
    "link_invert",
    "link_mu_eta",
    "link_mu_eta2",
]

LINKS = ("logit", "probit", "loglog", "cloglog", "cauchy")

# Clamp for inverse links: keeps mu inside the open unit interval.
MU_EPS = 1e-12

# exp() guard: avoids inf*0 -> nan in the loglog/cloglog chain rules.
_ETA_MAX = 700.0


def _check_link(link):
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}; expected one of {LINKS}")


def shapes_from(mu, phi):
    """Return the classical Beta shapes ``(p, q)`` for mean/dispersion input.

    Parameters
    ----------
    mu : array_like
        Mean, strictly inside (0, 1).
    phi : array_like
        Dispersion, strictly positive.

    Returns
    -------
    p, q : ndarray
        Shape parameters ``mu * phi`` and ``(1 - mu) * phi``.
    """
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise ValueError("mu must lie strictly inside (0, 1)")
    if np.any(phi <= 0.0):
        raise ValueError("phi must be strictly positive")
    return mu * phi, (1.0 - mu) * phi


def beta_logpdf(y, mu, phi):
    """Log-density of the mean/dispersion Beta distribution.

    Parameters
    ----------
    y : array_like
        Observations, strictly inside (0, 1).
    mu, phi : array_like
        Mean and dispersion; broadcast against ``y``.

    Returns
    -------
    ndarray
        Elementwise log-density.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        raise ValueError("y must lie strictly inside (0, 1)")
    p, q = shapes_from(mu, phi)
    phi = np.asarray(phi, dtype=float)
    return (
        special.gammaln(phi)
        - special.gammaln(p)
        - special.gammaln(q)
        + (p - 1.0) * np.log(y)
        + (q - 1.0) * np.log1p(-y)
    )


def beta_variance(mu, phi):
    """Variance ``mu * (1 - mu) / (1 + phi)`` of the mean/dispersion Beta."""
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise ValueError("mu must lie strictly inside (0, 1)")
    if np.any(phi <= 0.0):
        raise ValueError("phi must be strictly positive")
    return mu * (1.0 - mu) / (1.0 + phi)


def link_apply(link, mu):
    """Map a mean in (0, 1) to the linear-predictor scale."""
    _check_link(link)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise ValueError("mu must lie strictly inside (0, 1)")
    if link == "logit":
        return special.logit(mu)
    if link == "probit":
        return special.ndtri(mu)
    if link == "loglog":
        return -np.log(-np.log(mu))
    if link == "cloglog":
        return np.log(-np.log1p(-mu))
    return np.tan(np.pi * (mu - 0.5))


def link_invert(link, eta):
    """Map a linear predictor to a mean, clamped inside the open interval.

    The clamp keeps the result in ``[MU_EPS, 1 - MU_EPS]`` so that a Beta
    log-density evaluated at the output is always finite.
    """
    _check_link(link)
    eta = np.asarray(eta, dtype=float)
    if link == "logit":
        mu = special.expit(eta)
    elif link == "probit":
        mu = special.ndtr(eta)
    elif link == "loglog":
        mu = np.exp(-np.exp(-np.clip(eta, -_ETA_MAX, _ETA_MAX)))
    elif link == "cloglog":
        mu = -np.expm1(-np.exp(np.clip(eta, -_ETA_MAX, _ETA_MAX)))
    else:
        mu = 0.5 + np.arctan(eta) / np.pi
    return np.clip(mu, MU_EPS, 1.0 - MU_EPS)


def link_mu_eta(link, eta):
    """First derivative d(mu)/d(eta) of the inverse link."""
    _check_link(link)
    eta = np.asarray(eta, dtype=float)
    if link == "logit":
        mu = special.expit(eta)
        return mu * (1.0 - mu)
    if link == "probit":
        return np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
    if link == "loglog":
        t = np.exp(-np.clip(eta, -_ETA_MAX, _ETA_MAX))
        return t * np.exp(-t)
    if link == "cloglog":
        s = np.exp(np.clip(eta, -_ETA_MAX, _ETA_MAX))
        return s * np.exp(-s)
    return 1.0 / (np.pi * (1.0 + eta * eta))


def link_mu_eta2(link, eta):
    """Second derivative d2(mu)/d(eta)2 of the inverse link."""
    _check_link(link)
    eta = np.asarray(eta, dtype=float)
    if link == "logit":
        mu = special.expit(eta)
        return mu * (1.0 - mu) * (1.0 - 2.0 * mu)
    if link == "probit":
        return -eta * np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
    if link == "loglog":
        t = np.exp(-np.clip(eta, -_ETA_MAX, _ETA_MAX))
        return t * np.exp(-t) * (t - 1.0)
    if link == "cloglog":
        s = np.exp(np.clip(eta, -_ETA_MAX, _ETA_MAX))
        return s * np.exp(-s) * (1.0 - s)
    return -2.0 * eta / (np.pi * (1.0 + eta * eta) ** 2)
