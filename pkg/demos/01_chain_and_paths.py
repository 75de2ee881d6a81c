"""Regime chains and Euler paths.

Simulate the two-state chain with both samplers, compare the empirical law
of the final regime with the matrix exponential, then drive a switching
Ornstein-Uhlenbeck process along one chain realisation.
"""
# %%
import numpy as np

from switchflow import (GeneratorMatrix, builtin_model, make_grid, simulate_chain, simulate_path,
                        transition_matrix)
from switchflow._rng import chain_generator

Q = GeneratorMatrix([[-1.0, 1.0], [2.0, -2.0]])
print("P(1) =\n", transition_matrix(Q, 1.0))

# %% empirical law of alpha_1 started from regime 0
n = 5000
for method in ("holding-times", "prm"):
    finals = np.array([simulate_chain(Q, 0, 1.0, chain_generator(1, p), method).final for p in range(n)])
    print(f"{method:14s} P(alpha_1 = 0) ~ {np.mean(finals == 0):.4f}")

# %% one path; the grid carries every jump time as a node
model = builtin_model("switching-ou", {"a": [0.5, 2.0], "s": [0.3, 1.0]})
chain = simulate_chain(model.generator, 0, 2.0, seed=0)
grid = make_grid(2.0, 0.01, chain)
path = simulate_path(model, chain, grid, [1.0], seed=5)
print("jumps at", np.round(chain.jump_times, 3))
print("regime by cell (first 20):", grid.regime_per_cell[:20])
print("X_T =", path.x_end)
