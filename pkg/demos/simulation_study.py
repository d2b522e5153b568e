"""Fit all four model variants to synthetic spatial data and compare them.

Simulates a brand-rate-like response on a triangulated square with a
smooth spatial field in the linear predictor, fits BetaReg, BetaRE,
BetaBesag, and BetaBYM by Laplace empirical Bayes, and prints the
in-sample DIC/WAIC table plus out-of-sample CCC/RSE on a held-out
fifth of the areas. The spatial variants should come out ahead on both.

Run from the repository root:

    python3 demos/simulation_study.py
"""

import numpy as np

from spatbeta.beta import link_invert
from spatbeta.inference import FitControls, fit_laplace
from spatbeta.mesh import Region, build_mesh, build_neighbor_graph, precision_matrix
from spatbeta.metrics import ccc, dic, rse, waic
from spatbeta.model import ModelData, ModelSpec

rng = np.random.default_rng(12)

region = Region((((0.0, 0.0), (8.0, 0.0), (8.0, 5.0), (0.0, 5.0)),))
mesh = build_mesh(region, 80, seed=1)
graph = build_neighbor_graph(mesh)
Q = precision_matrix(graph)
n_areas = mesh.n_triangles
print(f"mesh: {n_areas} triangular areas, {graph.edges().shape[0]} neighbor pairs")

# Smooth field: a draw from the intrinsic prior, centered and scaled.
L = np.linalg.cholesky(Q.toarray() + 1e-8 * np.eye(n_areas))
field = np.linalg.solve(L.T, rng.normal(size=n_areas))
field -= field.mean()
field *= 0.6 / field.std()

areas = np.repeat(np.arange(n_areas), 2)
n = areas.size
X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
beta_true = np.array([0.3, 0.4, -0.3])
eta = X @ beta_true + field[areas]
mu = link_invert("logit", eta)
y = rng.beta(mu * 60.0, (1.0 - mu) * 60.0)

train = np.ones(n, dtype=bool)
held_out = rng.choice(n_areas, size=n_areas // 5, replace=False)
train[np.isin(areas, held_out)] = False
print(f"rows: {train.sum()} train, {(~train).sum()} test\n")

data = ModelData(
    y=y, X=X, areas=areas, train=train, n_nodes=n_areas,
    names=("intercept", "x1", "x2"),
)

print(f"{'model':<10} {'DIC':>9} {'WAIC':>9} {'CCC':>7} {'RSE':>7}")
for kind in ("BetaReg", "BetaRE", "BetaBesag", "BetaBYM"):
    spec = ModelSpec(kind=kind, link="logit")
    fit = fit_laplace(spec, data, Q, controls=FitControls(seed=4))
    d, _ = dic(fit.pointwise_loglik, fit.deviance_at_mean)
    w, _ = waic(fit.pointwise_loglik, fit.deviance_at_mean)
    c = ccc(y[~train], fit.fitted_mu[~train])
    r = rse(y[~train], fit.fitted_mu[~train])
    print(f"{kind:<10} {d:>9.1f} {w:>9.1f} {c:>7.3f} {r:>7.4f}")

print("\ntruth:", beta_true)
