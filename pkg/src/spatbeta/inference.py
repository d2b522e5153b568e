"""Empirical-Bayes fitting by Laplace approximation, plus an MCMC check.

``fit_laplace`` is the production path: an inner Newton ascent finds the
mode of the latent field (coefficients, spatial field, exchangeable
effects) for fixed hyperparameters, and the Laplace-approximate marginal

    L(theta) = joint(z*(theta)) - 0.5 log det(-H(z*(theta)))

is maximized over theta = log(phi, psi1, psi2) by coordinate golden
section. A small grid around the optimum supplies hyperparameter
summaries, integration weights, and seeded posterior draws for the
information criteria. Everything downstream of the seed is
deterministic: the same inputs give byte-identical summaries.

``fit_mcmc`` is the slow validation oracle: Metropolis-within-Gibbs with
single-site conditional-prior proposals for the latent fields (batched
by graph coloring), adaptive random walks for coefficients and
log-hyperparameters, and per-sweep recentering of the spatial field.

The spatial field is handled in an orthonormal basis of the per-component
sum-to-zero subspace, which enforces the identifiability constraint
exactly and keeps the Laplace determinant well-defined.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse, special
from scipy.sparse import csgraph

from .beta import beta_logpdf, link_apply, link_invert
from .model import Hyper, LatentState, ModelData, loglik_eta_derivs

__all__ = [
    "FitControls",
    "FitError",
    "SummaryRow",
    "PosteriorFit",
    "PosteriorSamples",
    "fit_laplace",
    "fit_mcmc",
    "latent_mode",
    "predict",
    "model_data_from_dataset",
]

_Z975 = float(special.ndtri(0.975))


class FitError(RuntimeError):
    """Raised when a model cannot be fit on the given data."""


@dataclass(frozen=True)
class FitControls:
    """Tuning knobs for the Laplace fit; defaults match the shipped CLI.

    ``theta_start`` maps hyperparameter names to starting values on the
    log scale; unset entries default to log(100) for phi and 0 for the
    precisions.
    """

    max_inner: int = 100
    grad_tol: float = 1e-8
    max_halvings: int = 20
    pass_half_widths: tuple = (5.0, 3.0, 1.5)
    golden_tol: float = 0.02
    grid_points: int = 5
    n_draws: int = 1000
    seed: int = 0
    theta_start: dict = None


_DEFAULT_THETA = {"phi": float(np.log(100.0)), "psi1": 0.0, "psi2": 0.0}


@dataclass
class SummaryRow:
    name: str
    mean: float
    sd: float
    q025: float
    q500: float
    q975: float


@dataclass
class PosteriorFit:
    """Result of a Laplace fit.

    ``rows`` summarizes coefficients (Gaussian at the optimum) and
    hyperparameters (grid marginals) with mean, standard deviation, and
    the 2.5/50/97.5 percent quantiles. ``fitted_mu`` holds the fitted
    mean for every data row, train and test alike; ``pointwise_loglik``
    holds the seeded posterior draws feeding DIC and WAIC.
    """

    spec: object
    controls: FitControls
    rows: list
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    u_mean: np.ndarray
    u_sd: np.ndarray
    v_mean: np.ndarray
    v_sd: np.ndarray
    theta_mode: dict
    eta: np.ndarray
    fitted_mu: np.ndarray
    areas: np.ndarray
    train: np.ndarray
    area_mu: dict
    pointwise_loglik: np.ndarray
    deviance_at_mean: float
    log_marginal: float
    diagnostics: dict

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def summary_table(self):
        """(names, values) with columns Mean, Std, 0.025 Q, 0.5 Q, 0.975 Q."""
        names = [r.name for r in self.rows]
        vals = np.array([[r.mean, r.sd, r.q025, r.q500, r.q975] for r in self.rows])
        return names, vals

    def to_csv(self, path, metadata=None):
        lines = []
        for key, val in (metadata or {}).items():
            lines.append(f"# {key} = {val}")
        lines.append("parameter,Mean,Std,0.025 Q,0.5 Q,0.975 Q")
        for r in self.rows:
            lines.append(
                f"{r.name},{float(r.mean)!r},{float(r.sd)!r},"
                f"{float(r.q025)!r},{float(r.q500)!r},{float(r.q975)!r}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class PosteriorSamples:
    """Post-burn-in MCMC draws with per-block acceptance rates."""

    beta: np.ndarray
    phi: np.ndarray
    psi1: np.ndarray = None
    psi2: np.ndarray = None
    u: np.ndarray = None
    v: np.ndarray = None
    acceptance: dict = field(default_factory=dict)
    iterations: int = 0
    burn_in: int = 0
    seed: int = 0


def model_data_from_dataset(dataset, covariate_names, n_nodes):
    """Build ModelData from an aggregated area dataset.

    Prepends the intercept column and pulls the named covariates in
    order; rows keep their dataset train/test flags and area ids.
    """
    cols = [np.ones(dataset.n)]
    for name in covariate_names:
        cols.append(dataset.column(name))
    X = np.column_stack(cols)
    return ModelData(
        y=dataset.brandrate,
        X=X,
        areas=dataset.area_id,
        train=dataset.train,
        n_nodes=n_nodes,
        names=["(Intercept)"] + list(covariate_names),
    )


def _sumzero_basis(labels):
    """Orthonormal basis of {u : u sums to zero within each component}."""
    n = len(labels)
    cols = []
    for comp in range(int(labels.max()) + 1 if n else 0):
        idx = np.nonzero(labels == comp)[0]
        for j in range(1, len(idx)):
            col = np.zeros(n)
            col[idx[:j]] = 1.0
            col[idx[j]] = -float(j)
            col /= np.sqrt(j * (j + 1.0))
            cols.append(col)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _validate_design(data):
    tr = data.train
    Xtr = data.X[tr]
    k = data.k
    if Xtr.shape[0] < k + 2:
        raise FitError(
            f"need at least {k + 2} training rows for {k} coefficients, "
            f"got {Xtr.shape[0]}"
        )
    _, R, piv = linalg.qr(Xtr, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(Xtr.shape) * np.finfo(float).eps if diag[0] > 0 else 0.0
    rank = int(np.sum(diag > tol))
    if rank < k:
        bad = sorted(data.names[j] for j in piv[rank:])
        raise FitError(f"design matrix is rank-deficient; offending columns: {bad}")


class _Workspace:
    """Shared state for one model fit: basis, blocks, Newton machinery."""

    def __init__(self, spec, data, Q, controls):
        self.spec = spec
        self.data = data
        self.controls = controls
        self.has_u = spec.has_u
        self.has_v = spec.has_v
        tr = data.train
        self.y = data.y[tr]
        self.X = data.X[tr]
        self.areas = data.areas[tr]
        self.k = data.k
        self.n_nodes = data.n_nodes
        self.ntr = len(self.y)
        self.nu = 0
        self.const = 0.0
        if self.has_u:
            if Q is None:
                raise FitError(f"{spec.kind} requires the precision matrix Q")
            Qs = sparse.csr_matrix(Q)
            ncomp, labels = csgraph.connected_components(Qs, directed=False)
            self.ncomp = int(ncomp)
            self.labels = labels
            self.B = _sumzero_basis(labels)
            self.nu = self.B.shape[1]
            self.BtQB = self.B.T @ (Qs @ self.B)
            self.Brows = self.B[self.areas]
            if self.nu:
                sign, logdet = np.linalg.slogdet(self.BtQB)
                if sign <= 0:
                    raise FitError("reduced CAR precision is not positive definite")
                self.const += 0.5 * logdet - 0.5 * self.nu * np.log(2.0 * np.pi)
        if self.has_v:
            self.const += -0.5 * self.n_nodes * np.log(2.0 * np.pi)
        self.dim = self.k + self.nu + (self.n_nodes if self.has_v else 0)
        self.sl_b = slice(0, self.k)
        self.sl_u = slice(self.k, self.k + self.nu)
        self.sl_v = slice(self.k + self.nu, self.dim)
        self.evals = {}
        self.order = []
        self.last_z = None
        self.total_inner = 0
        self.warnings = []

    # ---- packing ----------------------------------------------------

    def default_z(self):
        z = np.zeros(self.dim)
        ybar = float(np.clip(self.y.mean(), 0.01, 0.99))
        z[0] = float(link_apply(self.spec.link, ybar))
        return z

    def unpack(self, z):
        beta = z[self.sl_b].copy()
        u = self.B @ z[self.sl_u] if self.has_u else None
        v = z[self.sl_v].copy() if self.has_v else None
        return LatentState(beta=beta, u=u, v=v)

    def eta_train(self, z):
        eta = self.X @ z[self.sl_b]
        if self.has_u:
            eta = eta + self.Brows @ z[self.sl_u]
        if self.has_v:
            eta = eta + z[self.sl_v][self.areas]
        return eta

    def eta_all(self, z):
        eta = self.data.X @ z[self.sl_b]
        if self.has_u:
            eta = eta + (self.B @ z[self.sl_u])[self.data.areas]
        if self.has_v:
            eta = eta + z[self.sl_v][self.data.areas]
        return eta

    # ---- objective --------------------------------------------------

    def joint(self, z, hyper):
        eta = self.eta_train(z)
        mu = link_invert(self.spec.link, eta)
        val = float(np.sum(beta_logpdf(self.y, mu, hyper.value("phi"))))
        priors = self.spec.priors
        beta = z[self.sl_b]
        val -= 0.5 * priors.tau_beta * float(beta @ beta)
        if self.has_u:
            psi2 = hyper.value("psi2")
            ut = z[self.sl_u]
            val += 0.5 * self.nu * np.log(psi2)
            val -= 0.5 * psi2 * float(ut @ (self.BtQB @ ut))
        if self.has_v:
            psi1 = hyper.value("psi1")
            v = z[self.sl_v]
            val += 0.5 * self.n_nodes * np.log(psi1)
            val -= 0.5 * psi1 * float(v @ v)
        for name in self.spec.hyper_names:
            shape, rate = priors.shape_rate(name)
            x = hyper.value(name)
            val += shape * np.log(x) - rate * x
        return val

    def grad_and_weights(self, z, hyper):
        eta = self.eta_train(z)
        _, d1, d2 = loglik_eta_derivs(self.y, eta, hyper.value("phi"), self.spec.link)
        g = np.zeros(self.dim)
        g[self.sl_b] = self.X.T @ d1 - self.spec.priors.tau_beta * z[self.sl_b]
        if self.has_u:
            g[self.sl_u] = self.Brows.T @ d1 - hyper.value("psi2") * (
                self.BtQB @ z[self.sl_u]
            )
        if self.has_v:
            gv = np.zeros(self.n_nodes)
            np.add.at(gv, self.areas, d1)
            g[self.sl_v] = gv - hyper.value("psi1") * z[self.sl_v]
        return g, -d2

    def hessian(self, z, hyper, W):
        """Negative Hessian of the joint (positive definite near the mode)."""
        H = np.zeros((self.dim, self.dim))
        Xw = self.X * W[:, None]
        H[self.sl_b, self.sl_b] = self.X.T @ Xw + self.spec.priors.tau_beta * np.eye(
            self.k
        )
        if self.has_u:
            BW = self.Brows * W[:, None]
            Hbu = Xw.T @ self.Brows
            H[self.sl_b, self.sl_u] = Hbu
            H[self.sl_u, self.sl_b] = Hbu.T
            H[self.sl_u, self.sl_u] = self.Brows.T @ BW + hyper.value("psi2") * self.BtQB
        if self.has_v:
            node_w = np.zeros(self.n_nodes)
            np.add.at(node_w, self.areas, W)
            H[self.sl_v, self.sl_v] = np.diag(node_w + hyper.value("psi1"))
            Hbv = np.zeros((self.n_nodes, self.k))
            np.add.at(Hbv, self.areas, Xw)
            H[self.sl_b, self.sl_v] = Hbv.T
            H[self.sl_v, self.sl_b] = Hbv
            if self.has_u:
                Huv = np.zeros((self.n_nodes, self.nu))
                np.add.at(Huv, self.areas, BW)
                H[self.sl_u, self.sl_v] = Huv.T
                H[self.sl_v, self.sl_u] = Huv
        return H

    def chol_damped(self, H):
        try:
            return np.linalg.cholesky(H), 0.0
        except np.linalg.LinAlgError:
            pass
        base = max(float(np.max(np.diag(H))), 1.0)
        damp = 1e-10 * base
        while damp <= 1e8 * base:
            try:
                L = np.linalg.cholesky(H + damp * np.eye(self.dim))
                return L, damp
            except np.linalg.LinAlgError:
                damp *= 10.0
        raise FitError("latent Hessian could not be factorized")

    def newton(self, hyper, z0, trajectory=None):
        """Ascend the joint to its mode for fixed hyperparameters."""
        ctl = self.controls
        z = z0.copy()
        val = self.joint(z, hyper)
        if trajectory is not None:
            trajectory.append(val)
        iters = 0
        stalls = 0
        for _ in range(ctl.max_inner):
            g, W = self.grad_and_weights(z, hyper)
            if np.max(np.abs(g)) < ctl.grad_tol:
                break
            H = self.hessian(z, hyper, W)
            L, _ = self.chol_damped(H)
            dz = linalg.cho_solve((L, True), g)
            step = 1.0
            accepted = False
            for _ in range(ctl.max_halvings + 1):
                z_new = z + step * dz
                val_new = self.joint(z_new, hyper)
                if val_new >= val:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            iters += 1
            if val_new - val <= 1e-14 * (1.0 + abs(val)):
                stalls += 1
            else:
                stalls = 0
            z, val = z_new, val_new
            if trajectory is not None:
                trajectory.append(val)
            if stalls >= 2:
                break
        g, W = self.grad_and_weights(z, hyper)
        gmax = float(np.max(np.abs(g)))
        conv = gmax < ctl.grad_tol
        if not conv:
            # the gradient norm can floor above tol when the objective is
            # large; the Newton decrement measures the improvement still
            # available, and below float noise the mode is located
            try:
                H = self.hessian(z, hyper, W)
                L, _ = self.chol_damped(H)
                dz = linalg.cho_solve((L, True), g)
                decrement = 0.5 * float(g @ dz)
                conv = 0.0 <= decrement <= 1e-13 * (1.0 + abs(val))
            except FitError:
                conv = False
        return z, val, iters, gmax, conv, W

    # ---- profile over hyperparameters -------------------------------

    def hyper_from_theta(self, theta):
        vals = dict(zip(self.spec.hyper_names, np.exp(theta)))
        return Hyper(
            phi=vals["phi"], psi1=vals.get("psi1"), psi2=vals.get("psi2")
        )

    def profile(self, theta):
        key = tuple(np.round(np.asarray(theta, dtype=float), 9))
        rec = self.evals.get(key)
        if rec is not None:
            return rec
        hyper = self.hyper_from_theta(np.asarray(theta, dtype=float))
        z0 = self.last_z if self.last_z is not None else self.default_z()
        z, val, iters, gmax, conv, W = self.newton(hyper, z0)
        H = self.hessian(z, hyper, W)
        L, damp = self.chol_damped(H)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        # with one row per area a latent field can interpolate the
        # training data while the dispersion runs to its prior mode;
        # residuals collapse far below the likelihood scale there, and
        # the Gaussian approximation badly overstates that spike's mass
        mu = link_invert(self.spec.link, self.eta_train(z))
        sd = np.sqrt(mu * (1.0 - mu) / (1.0 + hyper.value("phi")))
        med_resid = float(np.median(np.abs(self.y - mu) / sd))
        rec = {
            "theta": np.asarray(theta, dtype=float).copy(),
            "z": z,
            "joint": val,
            "logdet": logdet,
            "L": val - 0.5 * logdet,
            "iters": iters,
            "gmax": gmax,
            "converged": conv,
            "saturated": med_resid < 0.1,
            "damped": damp > 0.0,
        }
        self.evals[key] = rec
        self.order.append(key)
        self.last_z = z
        self.total_inner += iters
        if damp > 0.0:
            self.warnings.append(f"damped Hessian at theta={key}")
        return rec


def _golden_max(fun, lo, hi, tol):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def _step_quantile(xs, weights, q):
    """Quantile of a small discrete distribution (xs ascending)."""
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    idx = int(np.searchsorted(cdf, q, side="left"))
    return float(xs[min(idx, len(xs) - 1)])


def latent_mode(spec, data, hyper, Q=None, controls=None):
    """Latent posterior mode for fixed hyperparameters.

    Returns (state, info); info carries the joint value, the trajectory
    of accepted Newton values (non-decreasing), the iteration count, the
    final gradient max-norm, and the convergence flag.
    """
    _validate_design(data)
    controls = controls or FitControls()
    ws = _Workspace(spec, data, Q, controls)
    trajectory = []
    z, val, iters, gmax, conv, _ = ws.newton(hyper, ws.default_z(), trajectory)
    info = {
        "value": val,
        "trajectory": trajectory,
        "iterations": iters,
        "grad_max": gmax,
        "converged": conv,
    }
    return ws.unpack(z), info


def fit_laplace(spec, data, Q=None, controls=None):
    """Empirical-Bayes fit: Laplace approximation over a hyper grid.

    Maximizes the Laplace-approximate marginal over log-hyperparameters
    by coordinate golden-section passes, lays a grid (grid_points per
    dimension, spaced by the local curvature) around the optimum,
    re-centers once on the best cell, and integrates over the grid for
    hyperparameter summaries, seeded posterior draws, and the marginal
    likelihood. Coefficient and latent-field summaries come from the
    Gaussian approximation at the optimum.
    """
    _validate_design(data)
    controls = controls or FitControls()
    ws = _Workspace(spec, data, Q, controls)
    names = list(spec.hyper_names)
    start = dict(_DEFAULT_THETA)
    start.update(controls.theta_start or {})
    theta = np.array([start[name] for name in names])

    # coordinate golden-section passes, shrinking the search window;
    # precisions move before phi so random-effect variances settle first
    dims_order = list(range(len(names)))[::-1]
    prec_dims = [d for d, name in enumerate(names) if name != "phi"]

    def corner_value(name):
        shape, rate = spec.priors.shape_rate(name)
        return float(np.log(shape / rate))

    def prec_subsets():
        for r in range(1, len(prec_dims) + 1):
            yield from itertools.combinations(prec_dims, r)

    # a profile value whose latent mode interpolates the training rows
    # (saturated) or whose inner Newton did not converge is not a valid
    # approximation of the marginal; such candidates never outrank a
    # clean one, no matter how inflated their value, so an interpolating
    # field cannot hijack the search
    def rank(rec):
        return (not rec["saturated"], bool(rec["converged"]), rec["L"])

    def sweep(theta, best_rec, widths):
        for width in widths:
            for d in dims_order:

                def fun(x, d=d):
                    t = theta.copy()
                    t[d] = x
                    return ws.profile(t)["L"]

                x_best, f_best = _golden_max(
                    fun, theta[d] - width, theta[d] + width, controls.golden_tol
                )
                if f_best >= best_rec["L"]:
                    t = theta.copy()
                    t[d] = x_best
                    cand = ws.profile(t)
                    if rank(cand) >= rank(best_rec):
                        theta, best_rec = t, cand
        return theta, best_rec

    # seed from the best of the start point and its collapsed corners,
    # where a random-effect precision sits at its prior mode; on data a
    # field does not need, the collapsed start keeps it from soaking up
    # signal that belongs elsewhere
    best_rec = ws.profile(theta)
    for subset in prec_subsets():
        t = theta.copy()
        for d in subset:
            t[d] = corner_value(names[d])
        rec = ws.profile(t)
        if rank(rec) > rank(best_rec):
            theta, best_rec = t, rec

    theta, best_rec = sweep(theta, best_rec, controls.pass_half_widths)

    # ridge guard: one field can interpolate the data during the sweeps
    # and shadow a better solution in which it vanishes and another field
    # (or none) carries the signal; restart from each collapsed corner
    # with the remaining precisions released to their starting values
    for subset in prec_subsets():
        t = theta.copy()
        for d in prec_dims:
            t[d] = corner_value(names[d]) if d in subset else start[names[d]]
        if np.allclose(t, theta):
            continue
        t2, rec2 = sweep(t, ws.profile(t), (3.0, 1.5))
        if rank(rec2) > rank(best_rec):
            theta, best_rec = t2, rec2

    # local curvature sets the grid spacing per dimension
    sds = np.empty(len(names))
    L0 = ws.profile(theta)["L"]
    for d in range(len(names)):
        tp, tm = theta.copy(), theta.copy()
        tp[d] += 0.3
        tm[d] -= 0.3
        curv = -(ws.profile(tp)["L"] - 2.0 * L0 + ws.profile(tm)["L"]) / 0.09
        sds[d] = 1.0 / np.sqrt(curv) if curv > 0 else 2.5
    sds = np.clip(sds, 0.05, 2.5)

    half = (controls.grid_points - 1) // 2
    offsets = np.arange(-half, controls.grid_points - half)

    def build_grid(center):
        cells = []
        for combo in itertools.product(offsets, repeat=len(names)):
            t = center + sds * np.array(combo, dtype=float)
            cells.append((t, ws.profile(t)["L"]))
        return cells

    cells = build_grid(theta)
    best_idx = int(np.argmax([c[1] for c in cells]))
    if not np.allclose(cells[best_idx][0], theta):
        cand = ws.profile(cells[best_idx][0])
        if rank(cand) > rank(ws.profile(theta)):
            theta = cells[best_idx][0].copy()
            cells = build_grid(theta)

    mode_rec = ws.profile(theta)
    grid_thetas = np.array([c[0] for c in cells])
    grid_L = np.array([c[1] for c in cells])
    logw = grid_L - grid_L.max()
    w = np.exp(logw)
    w /= w.sum()

    # hyperparameter summaries from the grid marginals, original scale
    hyper_rows = []
    theta_mode = {}
    for d, name in enumerate(names):
        theta_mode[name] = float(theta[d])
        vals = theta[d] + sds[d] * offsets
        marg = np.array(
            [w[np.isclose(grid_thetas[:, d], v)].sum() for v in vals]
        )
        marg /= marg.sum()
        xs = np.exp(vals)
        mean = float(np.sum(marg * xs))
        var = float(np.sum(marg * xs * xs) - mean * mean)
        hyper_rows.append(
            SummaryRow(
                name=name,
                mean=mean,
                sd=float(np.sqrt(max(var, 0.0))),
                q025=_step_quantile(xs, marg, 0.025),
                q500=_step_quantile(xs, marg, 0.5),
                q975=_step_quantile(xs, marg, 0.975),
            )
        )

    # Gaussian approximation at the optimum for the latent blocks
    hyper_star = ws.hyper_from_theta(theta)
    z_star = mode_rec["z"]
    _, W = ws.grad_and_weights(z_star, hyper_star)
    H = ws.hessian(z_star, hyper_star, W)
    L_chol, _ = ws.chol_damped(H)
    cov = linalg.cho_solve((L_chol, True), np.eye(ws.dim))
    z_sd = np.sqrt(np.maximum(np.diag(cov), 0.0))

    beta_mean = z_star[ws.sl_b].copy()
    beta_sd = z_sd[ws.sl_b].copy()
    rows = []
    for j, cname in enumerate(data.names):
        m, s = float(beta_mean[j]), float(beta_sd[j])
        rows.append(
            SummaryRow(cname, m, s, m - _Z975 * s, m, m + _Z975 * s)
        )
    rows.extend(hyper_rows)

    u_mean = u_sd = v_mean = v_sd = None
    if ws.has_u:
        u_mean = ws.B @ z_star[ws.sl_u]
        cov_uu = cov[ws.sl_u, ws.sl_u]
        u_sd = np.sqrt(
            np.maximum(np.einsum("ij,jk,ik->i", ws.B, cov_uu, ws.B), 0.0)
        )
    if ws.has_v:
        v_mean = z_star[ws.sl_v].copy()
        v_sd = z_sd[ws.sl_v].copy()

    # seeded draws over the grid for the information criteria
    rng = np.random.default_rng(controls.seed)
    S = controls.n_draws
    counts = rng.multinomial(S, w)
    pll = np.empty((S, ws.ntr))
    sum_eta = np.zeros(ws.ntr)
    phi_draws = np.empty(S)
    pos = 0
    phi_idx = names.index("phi")
    for c_i, (t_cell, _) in enumerate(cells):
        cnt = int(counts[c_i])
        if cnt == 0:
            continue
        rec = ws.profile(t_cell)
        hyper_c = ws.hyper_from_theta(t_cell)
        _, W_c = ws.grad_and_weights(rec["z"], hyper_c)
        H_c = ws.hessian(rec["z"], hyper_c, W_c)
        L_c, _ = ws.chol_damped(H_c)
        eps = rng.standard_normal((ws.dim, cnt))
        Z = rec["z"][:, None] + linalg.solve_triangular(L_c.T, eps, lower=False)
        eta_s = ws.X @ Z[ws.sl_b]
        if ws.has_u:
            eta_s += ws.Brows @ Z[ws.sl_u]
        if ws.has_v:
            eta_s += Z[ws.sl_v][ws.areas]
        phi_c = float(np.exp(t_cell[phi_idx]))
        mu_s = link_invert(spec.link, eta_s)
        pll[pos : pos + cnt] = beta_logpdf(ws.y[:, None], mu_s, phi_c).T
        sum_eta += eta_s.sum(axis=1)
        phi_draws[pos : pos + cnt] = phi_c
        pos += cnt

    eta_bar = sum_eta / S
    phi_bar = float(phi_draws.mean())
    mu_bar = link_invert(spec.link, eta_bar)
    deviance_at_mean = float(-2.0 * np.sum(beta_logpdf(ws.y, mu_bar, phi_bar)))

    log_marginal = float(
        special.logsumexp(grid_L)
        + np.sum(np.log(sds))
        + 0.5 * ws.dim * np.log(2.0 * np.pi)
        + ws.const
    )

    eta_all = ws.eta_all(z_star)
    fitted_mu = np.asarray(link_invert(spec.link, eta_all))
    area_mu = {int(a): float(m) for a, m in zip(data.areas, fitted_mu)}

    diagnostics = {
        "outer_evaluations": len(ws.evals),
        "inner_iterations_total": ws.total_inner,
        "final_grad_max": mode_rec["gmax"],
        "inner_converged": bool(mode_rec["converged"]),
        "warnings": list(dict.fromkeys(ws.warnings)),
    }

    return PosteriorFit(
        spec=spec,
        controls=controls,
        rows=rows,
        beta_mean=beta_mean,
        beta_sd=beta_sd,
        u_mean=u_mean,
        u_sd=u_sd,
        v_mean=v_mean,
        v_sd=v_sd,
        theta_mode=theta_mode,
        eta=eta_all,
        fitted_mu=fitted_mu,
        areas=data.areas.copy(),
        train=data.train.copy(),
        area_mu=area_mu,
        pointwise_loglik=pll,
        deviance_at_mean=deviance_at_mean,
        log_marginal=log_marginal,
        diagnostics=diagnostics,
    )


def predict(fit, data):
    """Fitted means for the rows of ``data``, matched by area id.

    Every area must have been part of the fit; unknown areas raise
    LookupError. Test areas are covered: their spatial effect came from
    the CAR smoothing and their exchangeable effect from its prior mean.
    """
    mu = np.empty(len(data.y))
    for r, a in enumerate(data.areas):
        a = int(a)
        if a not in fit.area_mu:
            raise LookupError(f"area {a} was not part of the fit")
        mu[r] = fit.area_mu[a]
    return mu


def _greedy_coloring(adjacency):
    colors = np.full(len(adjacency), -1, dtype=np.int64)
    for i in range(len(adjacency)):
        taken = {colors[j] for j in adjacency[i] if colors[j] >= 0}
        c = 0
        while c in taken:
            c += 1
        colors[i] = c
    return colors


def fit_mcmc(
    spec,
    data,
    Q=None,
    iterations=10000,
    burn_in=5000,
    seed=0,
    thin=1,
    likelihood_scale=1.0,
    store_latent=False,
):
    """Metropolis-within-Gibbs sampler for the same joint posterior.

    Latent spatial values update one site at a time with their CAR full
    conditional as proposal (batched over a greedy graph coloring so
    non-adjacent sites move together); exchangeable effects use their
    N(0, 1/psi1) prior as proposal; coefficients and log-scale
    hyperparameters use adaptive random walks, adapted during burn-in
    only. The spatial field is re-centered per component after every
    sweep. Training rows must map to distinct areas.

    ``likelihood_scale`` rescales the likelihood contribution (0 turns
    the sampler into a prior sampler, used by the prior-recovery check).
    """
    if burn_in >= iterations:
        raise ValueError("burn_in must be smaller than iterations")
    _validate_design(data)
    priors = spec.priors
    tr = data.train
    y = data.y[tr]
    X = data.X[tr]
    areas = data.areas[tr]
    k = data.k
    n_nodes = data.n_nodes
    link = spec.link
    if len(np.unique(areas)) != len(areas):
        raise FitError("training rows must map to distinct areas for the sampler")

    node_row = np.full(n_nodes, -1, dtype=np.int64)
    node_row[areas] = np.arange(len(areas))

    rng = np.random.default_rng(seed)

    if spec.has_u:
        if Q is None:
            raise FitError(f"{spec.kind} requires the precision matrix Q")
        Qs = sparse.csr_matrix(Q)
        deg = np.asarray(Qs.diagonal())
        Adj = sparse.csr_matrix(-(Qs - sparse.diags(deg)))
        Adj.eliminate_zeros()
        adjacency = [Adj.indices[Adj.indptr[i] : Adj.indptr[i + 1]] for i in range(n_nodes)]
        ncomp, labels = csgraph.connected_components(Qs, directed=False)
        nu_rank = n_nodes - int(ncomp)
        colors = _greedy_coloring(adjacency)
        color_nodes = [
            np.nonzero((colors == c) & (deg > 0))[0] for c in range(int(colors.max()) + 1)
        ]
        comp_sizes = np.bincount(labels)

    def loglik(eta_vec, phi_val, rows=None):
        if likelihood_scale == 0.0:
            return np.zeros(len(eta_vec) if rows is None else len(rows))
        yy = y if rows is None else y[rows]
        mu = link_invert(link, eta_vec)
        return likelihood_scale * beta_logpdf(yy, mu, phi_val)

    # state
    beta = np.zeros(k)
    beta[0] = float(link_apply(link, float(np.clip(y.mean(), 0.01, 0.99))))
    u = np.zeros(n_nodes) if spec.has_u else None
    v = np.zeros(n_nodes) if spec.has_v else None
    start = dict(_DEFAULT_THETA)
    theta = {name: start[name] for name in spec.hyper_names}
    phi = float(np.exp(theta["phi"]))

    def eta_full():
        e = X @ beta
        if spec.has_u:
            e = e + u[areas]
        if spec.has_v:
            e = e + v[areas]
        return e

    eta = eta_full()
    ll = loglik(eta, phi)

    beta_step = np.full(k, 0.1)
    theta_step = {name: 0.5 for name in spec.hyper_names}
    blocks = ["beta"] + list(spec.hyper_names) + (
        ["u"] if spec.has_u else []
    ) + (["v"] if spec.has_v else [])
    window = {b: [0, 0] for b in blocks}
    tally = {b: [0, 0] for b in blocks}

    n_keep = (iterations - burn_in + thin - 1) // thin
    out_beta = np.empty((n_keep, k))
    out_phi = np.empty(n_keep)
    out_psi1 = np.empty(n_keep) if spec.has_v else None
    out_psi2 = np.empty(n_keep) if spec.has_u else None
    out_u = np.empty((n_keep, n_nodes)) if (store_latent and spec.has_u) else None
    out_v = np.empty((n_keep, n_nodes)) if (store_latent and spec.has_v) else None

    kept = 0
    for it in range(iterations):
        burn = it < burn_in
        counts = window if burn else tally

        # coefficients: one adaptive random-walk proposal per coordinate
        for j in range(k):
            stepj = float(rng.normal(0.0, beta_step[j]))
            eta_p = eta + X[:, j] * stepj
            ll_p = loglik(eta_p, phi)
            bj = beta[j]
            logr = float(np.sum(ll_p) - np.sum(ll)) - 0.5 * priors.tau_beta * (
                (bj + stepj) ** 2 - bj**2
            )
            counts["beta"][1] += 1
            if np.log(rng.uniform()) < logr:
                beta[j] = bj + stepj
                eta, ll = eta_p, ll_p
                counts["beta"][0] += 1

        # exchangeable effects: prior proposal, likelihood ratio acceptance
        if spec.has_v:
            psi1 = float(np.exp(theta["psi1"]))
            v_prop = rng.normal(0.0, 1.0 / np.sqrt(psi1), n_nodes)
            logu = np.log(rng.uniform(size=n_nodes))
            logr_nodes = np.zeros(n_nodes)
            with_row = node_row >= 0
            rows = node_row[with_row]
            eta_p = eta[rows] + (v_prop - v)[with_row]
            ll_p = loglik(eta_p, phi, rows=rows)
            logr_nodes[with_row] = ll_p - ll[rows]
            acc = logu < logr_nodes
            counts["v"][0] += int(acc.sum())
            counts["v"][1] += n_nodes
            changed = acc & with_row
            if np.any(changed):
                rows_ch = node_row[changed]
                eta[rows_ch] += (v_prop - v)[changed]
                mu_ch = link_invert(link, eta[rows_ch])
                ll[rows_ch] = (
                    likelihood_scale * beta_logpdf(y[rows_ch], mu_ch, phi)
                    if likelihood_scale != 0.0
                    else 0.0
                )
            v = np.where(acc, v_prop, v)

        # spatial field: CAR conditional proposals, one color class at a time
        if spec.has_u:
            psi2 = float(np.exp(theta["psi2"]))
            for nodes in color_nodes:
                if len(nodes) == 0:
                    continue
                nbsum = Adj @ u
                means = nbsum[nodes] / deg[nodes]
                sd_prop = 1.0 / np.sqrt(psi2 * deg[nodes])
                u_prop = rng.normal(0.0, 1.0, len(nodes)) * sd_prop + means
                logu = np.log(rng.uniform(size=len(nodes)))
                logr_c = np.zeros(len(nodes))
                rows_c = node_row[nodes]
                has_row = rows_c >= 0
                if np.any(has_row):
                    rws = rows_c[has_row]
                    eta_p = eta[rws] + (u_prop - u[nodes])[has_row]
                    ll_p = loglik(eta_p, phi, rows=rws)
                    logr_c[has_row] = ll_p - ll[rws]
                acc = logu < logr_c
                counts["u"][0] += int(acc.sum())
                counts["u"][1] += len(nodes)
                moved = nodes[acc]
                u[moved] = u_prop[acc]
                upd = acc & has_row
                if np.any(upd):
                    rws = rows_c[upd]
                    eta[rws] = X[rws] @ beta + u[nodes[upd]] + (
                        v[nodes[upd]] if spec.has_v else 0.0
                    )
                    mu_upd = link_invert(link, eta[rws])
                    ll[rws] = (
                        likelihood_scale * beta_logpdf(y[rws], mu_upd, phi)
                        if likelihood_scale != 0.0
                        else 0.0
                    )
            # per-component recentering keeps the field identified
            comp_means = np.bincount(labels, weights=u) / comp_sizes
            u = u - comp_means[labels]
            eta = eta_full()
            ll = loglik(eta, phi)

        # dispersion: random walk on log phi against the full likelihood
        th = theta["phi"]
        th_p = th + float(rng.normal(0.0, theta_step["phi"]))
        phi_p = float(np.exp(th_p))
        ll_p = loglik(eta, phi_p)
        shape, rate = priors.shape_rate("phi")
        logr = (
            float(np.sum(ll_p) - np.sum(ll))
            + shape * (th_p - th)
            - rate * (phi_p - phi)
        )
        counts["phi"][1] += 1
        if np.log(rng.uniform()) < logr:
            theta["phi"], phi, ll = th_p, phi_p, ll_p
            counts["phi"][0] += 1

        # precision of v: random walk on the log scale, no likelihood term
        if spec.has_v:
            th = theta["psi1"]
            th_p = th + float(rng.normal(0.0, theta_step["psi1"]))
            shape, rate = priors.shape_rate("psi1")
            ssq = float(v @ v)
            logr = (
                0.5 * n_nodes * (th_p - th)
                - 0.5 * (np.exp(th_p) - np.exp(th)) * ssq
                + shape * (th_p - th)
                - rate * (np.exp(th_p) - np.exp(th))
            )
            counts["psi1"][1] += 1
            if np.log(rng.uniform()) < logr:
                theta["psi1"] = th_p
                counts["psi1"][0] += 1

        # precision of u likewise, with the rank-aware normalizer
        if spec.has_u:
            th = theta["psi2"]
            th_p = th + float(rng.normal(0.0, theta_step["psi2"]))
            shape, rate = priors.shape_rate("psi2")
            quad = float(u @ (Qs @ u))
            logr = (
                0.5 * nu_rank * (th_p - th)
                - 0.5 * (np.exp(th_p) - np.exp(th)) * quad
                + shape * (th_p - th)
                - rate * (np.exp(th_p) - np.exp(th))
            )
            counts["psi2"][1] += 1
            if np.log(rng.uniform()) < logr:
                theta["psi2"] = th_p
                counts["psi2"][0] += 1

        # adapt proposal scales toward a mid-range acceptance rate
        if burn and (it + 1) % 100 == 0:
            acc_n, tot = window["beta"]
            if tot:
                rate_b = acc_n / tot
                beta_step = np.clip(
                    beta_step * np.exp(rate_b - 0.35), 1e-3, 10.0
                )
            for name in spec.hyper_names:
                acc_n, tot = window[name]
                if tot:
                    theta_step[name] = float(
                        np.clip(
                            theta_step[name] * np.exp(acc_n / tot - 0.35),
                            1e-3,
                            10.0,
                        )
                    )
            for b in window:
                window[b] = [0, 0]

        if not burn and (it - burn_in) % thin == 0:
            out_beta[kept] = beta
            out_phi[kept] = phi
            if spec.has_v:
                out_psi1[kept] = float(np.exp(theta["psi1"]))
            if spec.has_u:
                out_psi2[kept] = float(np.exp(theta["psi2"]))
            if out_u is not None:
                out_u[kept] = u
            if out_v is not None:
                out_v[kept] = v
            kept += 1

    acceptance = {
        b: (tally[b][0] / tally[b][1] if tally[b][1] else 0.0) for b in tally
    }
    return PosteriorSamples(
        beta=out_beta[:kept],
        phi=out_phi[:kept],
        psi1=out_psi1[:kept] if spec.has_v else None,
        psi2=out_psi2[:kept] if spec.has_u else None,
        u=out_u[:kept] if out_u is not None else None,
        v=out_v[:kept] if out_v is not None else None,
        acceptance=acceptance,
        iterations=iterations,
        burn_in=burn_in,
        seed=seed,
    )
