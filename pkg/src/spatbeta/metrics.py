"""Model comparison criteria and prediction quality metrics.

DIC and WAIC consume a pointwise log-likelihood matrix of posterior
draws (S draws by n observations) together with the deviance evaluated
at the posterior mean; lower is better for both. CCC is Lin's
concordance correlation between observations and predictions; RSE is
the root mean squared error.
"""

import warnings

import numpy as np

__all__ = ["dic", "waic", "ccc", "rse"]


def dic(pointwise_loglik, deviance_at_mean):
    """Deviance information criterion.

    Parameters
    ----------
    pointwise_loglik : ndarray
        (S, n) log-likelihood of each observation under each draw.
    deviance_at_mean : float
        -2 log-likelihood at the posterior mean parameters.

    Returns
    -------
    dic, p_d : float
        The criterion and its effective number of parameters
        p_d = mean(deviance over draws) - deviance_at_mean.
    """
    pll = np.asarray(pointwise_loglik, dtype=float)
    if pll.ndim != 2:
        raise ValueError("pointwise_loglik must be (S, n)")
    deviances = -2.0 * pll.sum(axis=1)
    p_d = float(deviances.mean() - deviance_at_mean)
    return float(deviance_at_mean + 2.0 * p_d), p_d


def waic(pointwise_loglik, deviance_at_mean):
    """Watanabe-Akaike information criterion.

    The effective parameter count p_w sums the per-observation variances
    of the pointwise log-likelihood across draws (sample variance,
    divisor S - 1). Returns (waic, p_w) with
    waic = deviance_at_mean + 2 p_w.
    """
    pll = np.asarray(pointwise_loglik, dtype=float)
    if pll.ndim != 2:
        raise ValueError("pointwise_loglik must be (S, n)")
    if pll.shape[0] < 2:
        raise ValueError("need at least two draws to estimate variances")
    p_w = float(pll.var(axis=0, ddof=1).sum())
    return float(deviance_at_mean + 2.0 * p_w), p_w


def ccc(observed, predicted):
    """Lin's concordance correlation coefficient.

    Uses population moments (divisor n). Degenerate inputs (either
    sequence constant) yield 0 with a warning: agreement with a constant
    is not measurable.
    """
    x = np.asarray(observed, dtype=float)
    y = np.asarray(predicted, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("observed and predicted must be equal-length vectors")
    if len(x) == 0:
        raise ValueError("empty input")
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    if vx == 0.0 or vy == 0.0:
        warnings.warn("constant sequence in ccc; returning 0", RuntimeWarning)
        return 0.0
    cov = ((x - mx) * (y - my)).mean()
    return float(2.0 * cov / (vx + vy + (mx - my) ** 2))


def rse(observed, predicted):
    """Root mean squared prediction error."""
    x = np.asarray(observed, dtype=float)
    y = np.asarray(predicted, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("observed and predicted must be equal-length vectors")
    if len(x) == 0:
        raise ValueError("empty input")
    return float(np.sqrt(((y - x) ** 2).mean()))
