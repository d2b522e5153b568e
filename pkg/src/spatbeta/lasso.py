"""L1-penalized logistic regression for covariate screening.

The continuous rate response is binarized against its mean, then a
lasso-logistic path is fit by iteratively reweighted least squares with
cyclic coordinate descent and soft-thresholding, warm-starting each
penalty from the previous solution. Ten-fold cross-validated binomial
deviance picks lambda_min and the one-standard-error lambda_1se; the
covariates surviving at lambda_1se feed the downstream regressions.

The objective, with an unpenalized intercept b0, is

    (1/n) sum_i [log(1 + exp(eta_i)) - y_i eta_i] + lambda ||beta||_1.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "LassoPath",
    "CVSelection",
    "binarize_response",
    "default_lambda_grid",
    "lasso_logistic_path",
    "kkt_residual",
    "cv_select",
]

# Working weights are clipped away from zero so the IRLS system stays
# well-conditioned when fitted probabilities saturate. A fit whose
# deviance falls below _SAT_RATIO of the null deviance (or whose
# coefficients blow past _B_MAX on standardized data) has hit
# separation; the path keeps that solution for all smaller penalties
# instead of thrashing against the unbounded likelihood.
_W_MIN = 1e-5
_P_CLIP = 1e-5
_SAT_RATIO = 1e-3
_B_MAX = 1e3

# Near-collinear designs make both loops contract by ~(1 - 1/cond) per
# step, so a fixed tolerance is unreachable; once _STALL_LIMIT
# consecutive steps each shrink the update by less than a factor of
# _STALL_RATIO (and, for the outer loop, the update is already under
# _STALL_GATE), the loop is declared stalled and exits with the current
# iterate. Well-conditioned problems contract fast enough that these
# guards never fire before the ordinary tolerances are met.
_STALL_RATIO = 0.98
_STALL_LIMIT = 5
_STALL_GATE = 1e-3


@dataclass
class LassoPath:
    """Solution path over a descending penalty grid.

    ``coefs`` is (k, L) on the standardized scale used internally unless
    the caller passed pre-standardized data; ``intercepts`` is (L,).
    CV fields stay None until filled by cv_select.
    """

    lambdas: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray
    cv_mean: np.ndarray = None
    cv_se: np.ndarray = None
    lambda_min: float = None
    lambda_1se: float = None


@dataclass
class CVSelection:
    """Cross-validation outcome: chosen penalties and surviving columns."""

    lambda_min: float
    lambda_1se: float
    selected: list
    path: LassoPath


def binarize_response(rates):
    """1 where the rate strictly exceeds its mean, else 0 (ties to 0)."""
    rates = np.asarray(rates, dtype=float)
    return (rates > rates.mean()).astype(np.int64)


def default_lambda_grid(X, y, n_lambdas=100, ratio=1e-4):
    """Descending log-spaced grid from the smallest all-zero penalty.

    lambda_max = max_j |x_j' (y - ybar)| / n makes every penalized
    coefficient exactly zero; the grid runs down to ratio * lambda_max.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    lam_max = np.max(np.abs(X.T @ (y - y.mean()))) / n
    if lam_max <= 0.0:
        lam_max = 1e-3
    return np.geomspace(lam_max, ratio * lam_max, n_lambdas)


def _soft(z, t):
    # The relative epsilon absorbs rounding jitter at the knife edge, so a
    # score equal to the penalty up to float error yields an exact zero.
    out = abs(z) - t
    if out <= 1e-12 * t:
        return 0.0
    return np.sign(z) * out


def _fit_single(X, y, lam, b0, beta, tol, null_dev=None, max_outer=100):
    """One lasso-logistic fit by IRLS plus cyclic coordinate descent.

    Returns (b0, beta, saturated); saturated flags separation, detected
    by a deviance ratio under _SAT_RATIO or runaway coefficients. Both
    loops carry a stall guard so near-collinear designs cannot burn the
    full iteration budget crawling toward an unreachable tolerance.
    """
    n, k = X.shape
    eta = b0 + X @ beta
    outer_stall = 0
    change_prev = np.inf
    for _ in range(max_outer):
        p = np.clip(expit(eta), _P_CLIP, 1.0 - _P_CLIP)
        if null_dev is not None and _binomial_deviance(y, eta) < _SAT_RATIO * null_dev:
            return b0, beta, True
        if np.max(np.abs(beta), initial=0.0) > _B_MAX or abs(b0) > _B_MAX:
            return b0, beta, True
        w = np.maximum(p * (1.0 - p), _W_MIN)
        z = eta + (y - p) / w
        b0_old, beta_old = b0, beta.copy()
        # inner coordinate descent on the weighted quadratic surrogate
        r = z - eta
        xw = X * w[:, None]
        denom = (xw * X).sum(axis=0) / n
        wsum = w.sum()
        inner_stall = 0
        delta_prev = np.inf
        for _ in range(1000):
            delta = 0.0
            shift = (w * r).sum() / wsum
            b0 += shift
            r -= shift
            delta = max(delta, abs(shift))
            for j in range(k):
                if denom[j] <= 0.0:  # all-zero column: coefficient stays put
                    continue
                bj = beta[j]
                rho = (xw[:, j] * r).sum() / n + denom[j] * bj
                bj_new = _soft(rho, lam) / denom[j]
                if bj_new != bj:
                    step = bj_new - bj
                    beta[j] = bj_new
                    r -= X[:, j] * step
                    delta = max(delta, abs(step))
            if delta < 1e-10:
                break
            if delta > _STALL_RATIO * delta_prev:
                inner_stall += 1
                if inner_stall >= _STALL_LIMIT:
                    break
            else:
                inner_stall = 0
            delta_prev = delta
        eta = b0 + X @ beta
        change = max(abs(b0 - b0_old), np.max(np.abs(beta - beta_old)) if k else 0.0)
        if change < tol:
            break
        if change < _STALL_GATE and change > _STALL_RATIO * change_prev:
            outer_stall += 1
            if outer_stall >= _STALL_LIMIT:
                break
        else:
            outer_stall = 0
        change_prev = change
    return b0, beta, False


def lasso_logistic_path(X, y, lambdas=None, tol=1e-7):
    """Fit the lasso-logistic path over a descending penalty grid.

    Parameters
    ----------
    X : ndarray
        (n, k) covariates; callers usually standardize columns first.
    y : ndarray
        Binary responses in {0, 1}.
    lambdas : ndarray, optional
        Descending penalty grid; defaults to ``default_lambda_grid``.
    tol : float
        Outer IRLS convergence threshold on the max coefficient change.

    Returns
    -------
    LassoPath
        Once a penalty saturates the deviance (separation), its solution
        is carried forward to every smaller penalty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("y must be binary 0/1")
    if lambdas is None:
        lambdas = default_lambda_grid(X, y)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) > 0):
        raise ValueError("lambda grid must be non-increasing")
    n, k = X.shape
    intercepts = np.empty(len(lambdas))
    coefs = np.empty((k, len(lambdas)))
    ybar = float(np.clip(y.mean(), _P_CLIP, 1.0 - _P_CLIP))
    b0 = float(np.log(ybar / (1.0 - ybar)))
    beta = np.zeros(k)
    null_dev = _binomial_deviance(y, np.full(n, b0))
    saturated = False
    for li, lam in enumerate(lambdas):
        if not saturated:
            b0, beta, saturated = _fit_single(X, y, lam, b0, beta, tol, null_dev)
        intercepts[li] = b0
        coefs[:, li] = beta
    return LassoPath(lambdas=lambdas, intercepts=intercepts, coefs=coefs)


def kkt_residual(X, y, intercept, coef, lam):
    """Worst violation of the lasso-logistic stationarity conditions.

    At an exact solution the score s_j = x_j'(y - p)/n satisfies
    s_j = lam * sign(beta_j) on the active set and |s_j| <= lam off it;
    the intercept score must vanish. Returns the largest absolute
    violation across coordinates.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    coef = np.asarray(coef, dtype=float)
    n = len(y)
    p = expit(intercept + X @ coef)
    score = X.T @ (y - p) / n
    viol = np.abs(np.where(coef != 0.0, score - lam * np.sign(coef), 0.0))
    viol = np.maximum(viol, np.where(coef == 0.0, np.maximum(np.abs(score) - lam, 0.0), 0.0))
    return float(max(np.max(viol) if len(viol) else 0.0, abs(np.sum(y - p) / n)))


def _binomial_deviance(y, eta):
    p = np.clip(expit(eta), _P_CLIP, 1.0 - _P_CLIP)
    return -2.0 * np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def cv_select(X, y, folds=10, seed=0, lambdas=None, names=None):
    """Cross-validated penalty choice and covariate selection.

    Standardizes columns once (constant columns are left unpenalized at
    zero by giving them unit scale), builds the penalty grid on the full
    data, then scores each fold's held-out binomial deviance along the
    grid. lambda_min minimizes the mean curve; lambda_1se is the largest
    penalty within one standard error of that minimum. The selected
    covariates are the nonzero coordinates of the full-data fit at
    lambda_1se.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if folds < 2 or folds > n:
        raise ValueError("folds must be between 2 and the number of rows")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Xs = (X - center) / scale
    if lambdas is None:
        lambdas = default_lambda_grid(Xs, y)
    path = lasso_logistic_path(Xs, y, lambdas)

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % folds
    fold_dev = np.empty((folds, len(lambdas)))
    for f in range(folds):
        held = assignment == f
        sub = lasso_logistic_path(Xs[~held], y[~held], lambdas)
        etas = sub.intercepts[None, :] + Xs[held] @ sub.coefs
        for li in range(len(lambdas)):
            fold_dev[f, li] = _binomial_deviance(y[held], etas[:, li])
    cv_mean = fold_dev.mean(axis=0)
    cv_se = fold_dev.std(axis=0, ddof=1) / np.sqrt(folds)
    best = int(np.argmin(cv_mean))
    threshold = cv_mean[best] + cv_se[best]
    one_se = int(np.nonzero(cv_mean <= threshold)[0][0])
    path.cv_mean = cv_mean
    path.cv_se = cv_se
    path.lambda_min = float(lambdas[best])
    path.lambda_1se = float(lambdas[one_se])
    if names is None:
        names = [f"x{j}" for j in range(k)]
    selected = [names[j] for j in range(k) if path.coefs[j, one_se] != 0.0]
    return CVSelection(
        lambda_min=path.lambda_min,
        lambda_1se=path.lambda_1se,
        selected=selected,
        path=path,
    )
