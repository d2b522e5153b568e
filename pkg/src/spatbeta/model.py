"""Model specifications and joint log-posteriors for areal Beta regression.

Four nested variants share one likelihood, a Beta distribution in
mean/dispersion form whose mean is linked to a linear predictor:

    BetaReg    eta = X beta
    BetaRE     eta = X beta + v,      v_i iid N(0, 1/psi1)
    BetaBesag  eta = X beta + u,      u an intrinsic CAR (Besag) field
    BetaBYM    eta = X beta + u + v

The Besag field has full conditionals u_i | u_{-i} ~ N(mean of neighbor
values, 1 / (psi2 * degree_i)); its joint density is the improper Gaussian
with precision psi2 * Q where Q is the neighbor precision matrix, of rank
n - c for c graph components. Hyperparameters carry log-gamma priors on
the log scale; coefficients carry a zero-mean Gaussian prior.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .beta import LINKS, beta_logpdf, link_invert, link_mu_eta, link_mu_eta2
from scipy import special

__all__ = [
    "MODEL_KINDS",
    "PriorSpec",
    "ModelSpec",
    "Hyper",
    "LatentState",
    "ModelData",
    "linear_predictor",
    "car_logdensity",
    "car_conditional",
    "joint_logposterior",
    "joint_gradient",
    "loglik_eta_derivs",
    "graph_components",
]

MODEL_KINDS = ("BetaReg", "BetaRE", "BetaBesag", "BetaBYM")


@dataclass(frozen=True)
class PriorSpec:
    """Hyperprior and coefficient-prior settings.

    Each positive hyperparameter x gets a log-gamma(shape, rate) prior on
    theta = log x, i.e. a density proportional to exp(shape * theta -
    rate * exp(theta)). Coefficients are N(0, 1/tau_beta) iid.
    """

    phi_shape: float = 1.0
    phi_rate: float = 5e-5
    psi1_shape: float = 1.0
    psi1_rate: float = 5e-5
    psi2_shape: float = 1.0
    psi2_rate: float = 5e-5
    tau_beta: float = 1e-3

    def __post_init__(self):
        for name in (
            "phi_shape",
            "phi_rate",
            "psi1_shape",
            "psi1_rate",
            "psi2_shape",
            "psi2_rate",
            "tau_beta",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    def shape_rate(self, name):
        return getattr(self, f"{name}_shape"), getattr(self, f"{name}_rate")


@dataclass(frozen=True)
class ModelSpec:
    """Model variant: kind, link, and priors."""

    kind: str
    link: str
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")

    @property
    def has_u(self):
        return self.kind in ("BetaBesag", "BetaBYM")

    @property
    def has_v(self):
        return self.kind in ("BetaRE", "BetaBYM")

    @property
    def hyper_names(self):
        names = ["phi"]
        if self.has_v:
            names.append("psi1")
        if self.has_u:
            names.append("psi2")
        return tuple(names)


@dataclass
class Hyper:
    """Hyperparameter values; inactive ones stay None."""

    phi: float
    psi1: float = None
    psi2: float = None

    def __post_init__(self):
        if self.phi is None or self.phi <= 0.0:
            raise ValueError("phi must be positive")
        for name in ("psi1", "psi2"):
            val = getattr(self, name)
            if val is not None and val <= 0.0:
                raise ValueError(f"{name} must be positive when set")

    def value(self, name):
        val = getattr(self, name)
        if val is None:
            raise ValueError(f"hyperparameter {name} is not set")
        return val


@dataclass
class LatentState:
    """Latent blocks; u and v stay None for kinds that lack them."""

    beta: np.ndarray
    u: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.u is not None:
            self.u = np.asarray(self.u, dtype=float)
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float)


@dataclass
class ModelData:
    """Observations aligned to latent nodes.

    ``y`` holds rates in (0, 1); ``X`` is the design with a leading
    intercept column of ones; ``areas`` maps each row to its latent node
    (0 .. n_nodes-1); ``train`` marks rows whose likelihood enters the
    fit. Latent fields span all nodes, so held-out areas still receive
    spatially smoothed predictions.
    """

    y: np.ndarray
    X: np.ndarray
    areas: np.ndarray
    train: np.ndarray
    n_nodes: int
    names: list = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.areas = np.asarray(self.areas, dtype=np.int64)
        self.train = np.asarray(self.train, dtype=bool)
        n = len(self.y)
        if self.X.ndim != 2 or len(self.X) != n:
            raise ValueError("X must be (n_rows, k)")
        if len(self.areas) != n or len(self.train) != n:
            raise ValueError("areas and train must match y in length")
        if np.any(self.y <= 0.0) or np.any(self.y >= 1.0):
            raise ValueError("responses must lie strictly inside (0, 1)")
        if not np.all(self.X[:, 0] == 1.0):
            raise ValueError("X must carry a leading intercept column of ones")
        if self.areas.size and (self.areas.min() < 0 or self.areas.max() >= self.n_nodes):
            raise ValueError("area index out of range")
        if self.names is None:
            self.names = ["(Intercept)"] + [f"x{j}" for j in range(1, self.X.shape[1])]
        if len(self.names) != self.X.shape[1]:
            raise ValueError("names must match the number of design columns")

    @property
    def k(self):
        return self.X.shape[1]


def linear_predictor(spec, X, state, areas=None):
    """eta = X beta, plus u and/or v gathered by row area when active."""
    X = np.asarray(X, dtype=float)
    eta = X @ state.beta
    if areas is None:
        areas = np.arange(len(X))
    if spec.has_u:
        if state.u is None:
            raise ValueError(f"{spec.kind} requires a u block")
        eta = eta + state.u[areas]
    if spec.has_v:
        if state.v is None:
            raise ValueError(f"{spec.kind} requires a v block")
        eta = eta + state.v[areas]
    return eta


def graph_components(Q):
    """Number of connected components of the graph underlying Q."""
    n_comp, _ = csgraph.connected_components(sparse.csr_matrix(Q), directed=False)
    return int(n_comp)


def car_logdensity(u, Q, psi2, n_components=None):
    """Improper intrinsic CAR log-density, constant-free.

    Returns ((n - c) / 2) log psi2 - (psi2 / 2) u' Q u, the log of the
    rank-deficient Gaussian kernel with c components; additive constants
    not involving psi2 or u are dropped.
    """
    if psi2 <= 0.0:
        raise ValueError("psi2 must be positive")
    u = np.asarray(u, dtype=float)
    if n_components is None:
        n_components = graph_components(Q)
    quad = float(u @ (Q @ u))
    n = len(u)
    return 0.5 * (n - n_components) * np.log(psi2) - 0.5 * psi2 * quad


def car_conditional(u, graph, i, psi2):
    """Full-conditional (mean, variance) of u_i given its neighbors."""
    if psi2 <= 0.0:
        raise ValueError("psi2 must be positive")
    nb = graph.adjacency[i]
    if len(nb) == 0:
        raise ValueError(f"node {i} has no neighbors; its conditional is undefined")
    u = np.asarray(u, dtype=float)
    mean = float(np.mean(u[nb]))
    var = 1.0 / (psi2 * len(nb))
    return mean, var


def _hyper_logprior(spec, hyper):
    total = 0.0
    for name in spec.hyper_names:
        shape, rate = spec.priors.shape_rate(name)
        x = hyper.value(name)
        total += shape * np.log(x) - rate * x
    return total


def loglik_eta_derivs(y, eta, phi, link):
    """Per-observation log-likelihood and its first two eta-derivatives."""
    mu = link_invert(link, eta)
    p = mu * phi
    q = (1.0 - mu) * phi
    ll = (
        special.gammaln(phi)
        - special.gammaln(p)
        - special.gammaln(q)
        + (p - 1.0) * np.log(y)
        + (q - 1.0) * np.log1p(-y)
    )
    dl_dmu = phi * (np.log(y) - np.log1p(-y) - special.digamma(p) + special.digamma(q))
    d2l_dmu2 = -phi * phi * (special.polygamma(1, p) + special.polygamma(1, q))
    g1 = link_mu_eta(link, eta)
    g2 = link_mu_eta2(link, eta)
    d1 = dl_dmu * g1
    d2 = d2l_dmu2 * g1 * g1 + dl_dmu * g2
    return ll, d1, d2


def joint_logposterior(spec, data, state, hyper, Q=None, n_components=None):
    """Unnormalized joint log-posterior over training rows.

    Sums the Beta log-likelihood on training rows, the active latent
    priors, the coefficient prior, and the hyperpriors. Additive
    constants free of parameters are dropped consistently, so values are
    comparable across states and hyperparameters for a fixed model.
    """
    eta = linear_predictor(spec, data.X, state, data.areas)
    mu = link_invert(spec.link, eta[data.train])
    total = float(np.sum(beta_logpdf(data.y[data.train], mu, hyper.value("phi"))))
    if spec.has_v:
        psi1 = hyper.value("psi1")
        n = data.n_nodes
        total += 0.5 * n * np.log(psi1) - 0.5 * psi1 * float(state.v @ state.v)
    if spec.has_u:
        if Q is None:
            raise ValueError(f"{spec.kind} requires the precision matrix Q")
        total += car_logdensity(state.u, Q, hyper.value("psi2"), n_components)
    total -= 0.5 * spec.priors.tau_beta * float(state.beta @ state.beta)
    total += _hyper_logprior(spec, hyper)
    return total


def joint_gradient(spec, data, state, hyper, Q=None):
    """Gradient of the joint log-posterior in the latent blocks.

    Returns a LatentState holding (d/d beta, d/d u, d/d v); inactive
    blocks come back None.
    """
    eta = linear_predictor(spec, data.X, state, data.areas)
    tr = data.train
    _, d1, _ = loglik_eta_derivs(data.y[tr], eta[tr], hyper.value("phi"), spec.link)
    g_beta = data.X[tr].T @ d1 - spec.priors.tau_beta * state.beta
    g_u = None
    g_v = None
    if spec.has_u or spec.has_v:
        row_grad = np.zeros(data.n_nodes)
        np.add.at(row_grad, data.areas[tr], d1)
    if spec.has_u:
        if Q is None:
            raise ValueError(f"{spec.kind} requires the precision matrix Q")
        g_u = row_grad - hyper.value("psi2") * (Q @ state.u)
    if spec.has_v:
        g_v = row_grad - hyper.value("psi1") * state.v
    return LatentState(beta=g_beta, u=g_u, v=g_v)
