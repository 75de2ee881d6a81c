"""Smallest eigenvalue of the reduced Malliavin matrix and a density estimate.

Compare the small-ball profile of a hypoelliptic model with the fully
degenerate one, then estimate the terminal density of switching OU.
"""
# %%
import numpy as np

from switchflow import builtin_model, kernel_density, negative_moment_estimate, nondegeneracy_sample, small_ball_probe
from switchflow.density import DegeneracyError, riemann_mass, terminal_states

for name in ("hypoelliptic-2d", "degenerate-2d"):
    s = nondegeneracy_sample(builtin_model(name), [0.0, 0.0], 0, 1.0, n_paths=2000, dt=1e-2, seed=1)
    table = small_ball_probe(s, [1e-1, 1e-2, 1e-3])
    print(name, [(float(e), float(p)) for e, p in zip(table.column("eps"), table.column("probability"))])
    try:
        print(negative_moment_estimate(s, [1, 2]).rows)
    except DegeneracyError as exc:
        print("negative moments:", exc)

# %%
ou = builtin_model("switching-ou")
xs = terminal_states(ou, [1.0], 0, 1.0, 20_000, dt=1e-2, seed=2)
grid = np.linspace(-2.5, 3.0, 56)
dens = kernel_density(xs, eval_points=grid)
print("mass on grid:", riemann_mass(dens, grid))
print("mode near", grid[np.argmax(dens)])
