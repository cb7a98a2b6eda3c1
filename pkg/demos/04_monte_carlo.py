"""Sampling the arboreal gas and comparing with exact answers."""

# %%
from arboreal.exact import ExactMeasure
from arboreal.lattice import Torus
from arboreal.mcmc import ChainConfig, decay_fit, run_chain, theta_scan

g = Torus(2, 3, 1).graph()
beta, h = 0.7, 0.2
est = run_chain(ChainConfig(g, beta, h, seed=1, sweeps=200_000, burnin=5_000, points=(1, 4)))
mu = ExactMeasure(g, beta, h)
for x in (1, 4):
    e = est.connection[x]
    print(f"P[0<->{x}] = {e.value:.4f} +- {e.stderr:.4f}   exact {mu.connection()[0, x]:.4f}")
print(f"theta = {est.theta.value:.4f} +- {est.theta.stderr:.4f}   exact {mu.ghost()[0]:.4f}")
print(f"acceptance rate {est.acceptance:.3f}")

# %% Exponential decay with a field
fit = decay_fit(2, 32, 0.5, 0.5, sweeps=5_000, seed=2)
print(f"log P[0<->r e_1] ~ {fit.slope:.3f} r, R^2 = {fit.r2:.5f}")

# %% A small theta scan on a 6^3 torus (the large runs live in the acceptance suite)
for p in theta_scan(3, 6, [0.2, 2.0, 8.0], 0.02, 1500, seed=3):
    print(f"beta={p.beta:5.1f}  theta={p.theta:.3f} +- {p.stderr:.3f}  E|T_0|={p.mean_tree_size:.1f}")
