"""Check the deterministic Laplace fit against a long MCMC run.

Fits a BetaBesag model to one synthetic spatial dataset twice: once
with the Laplace empirical-Bayes routine and once with the
Metropolis-within-Gibbs sampler. The two posteriors should agree on
the coefficient means to a couple of hundredths, which is the same
comparison the command line runs under --mcmc-check.

Run from the repository root (takes about a minute):

    python3 demos/mcmc_validation.py
"""

import numpy as np

from spatbeta.beta import link_invert
from spatbeta.inference import FitControls, fit_laplace, fit_mcmc
from spatbeta.mesh import Region, build_mesh, build_neighbor_graph, precision_matrix
from spatbeta.model import ModelData, ModelSpec

rng = np.random.default_rng(7)

region = Region((((0.0, 0.0), (6.0, 0.0), (6.0, 4.0), (0.0, 4.0)),))
mesh = build_mesh(region, 60, seed=2)
graph = build_neighbor_graph(mesh)
Q = precision_matrix(graph)
n_areas = mesh.n_triangles

L = np.linalg.cholesky(Q.toarray() + 1e-8 * np.eye(n_areas))
field = np.linalg.solve(L.T, rng.normal(size=n_areas))
field -= field.mean()
field *= 0.4 / field.std()

areas = np.arange(n_areas)
X = np.column_stack([np.ones(n_areas), rng.normal(size=n_areas),
                     rng.normal(size=n_areas)])
beta_true = np.array([0.2, 0.3, -0.25])
mu = link_invert("logit", X @ beta_true + field)
y = rng.beta(mu * 70.0, (1.0 - mu) * 70.0)

data = ModelData(
    y=y, X=X, areas=areas, train=np.ones(n_areas, dtype=bool), n_nodes=n_areas,
    names=("intercept", "x1", "x2"),
)
spec = ModelSpec(kind="BetaBesag", link="logit")

print(f"fitting {n_areas}-area BetaBesag/logit twice...")
fit = fit_laplace(spec, data, Q, controls=FitControls(seed=5))
draws = fit_mcmc(spec, data, Q, iterations=30_000, burn_in=10_000, seed=5)

print(f"\nsampler acceptance rates: "
      f"{ {k: round(v, 2) for k, v in draws.acceptance.items()} }")
print(f"\n{'parameter':<11} {'truth':>7} {'laplace':>9} {'mcmc':>9} {'|diff|':>8}")
mcmc_beta = draws.beta.mean(axis=0)
for j, name in enumerate(data.names):
    a, b = fit.beta_mean[j], mcmc_beta[j]
    print(f"{name:<11} {beta_true[j]:>7.3f} {a:>9.4f} {b:>9.4f} {abs(a - b):>8.4f}")
print(f"{'phi':<11} {70.0:>7.1f} {fit.row('phi').mean:>9.1f} "
      f"{draws.phi.mean():>9.1f} {abs(fit.row('phi').mean - draws.phi.mean()):>8.1f}")
print(f"{'psi2':<11} {'':>7} {fit.row('psi2').mean:>9.2f} "
      f"{draws.psi2.mean():>9.2f} "
      f"{abs(fit.row('psi2').mean - draws.psi2.mean()):>8.2f}")
