"""Jacobian flows, the discrete Malliavin derivative and the Malliavin matrix.

For switching OU the flow is the scalar exp(-int a(alpha)), which makes
it easy to see the Euler product converge.  For the coupled elliptic model
we check M = J C J^T and look at how well conditioned it is.
"""
# %%
import numpy as np

from switchflow import (DirectionField, builtin_model, directional_derivative, flow_bundle, make_grid,
                        malliavin_matrix, simulate_chain, simulate_path)
from switchflow.malliavin import kernel_matrix

a = [0.5, 2.0]
ou = builtin_model("switching-ou", {"a": a})
chain = simulate_chain(ou.generator, 0, 1.0, seed=2)
exact = np.exp(-chain.integrate(a))
for dt in (1e-1, 1e-2, 1e-3):
    grid = make_grid(1.0, dt, chain)
    fl = flow_bundle(ou, simulate_path(ou, chain, grid, [0.0], seed=3))
    print(f"dt={dt:g}: J_T={fl.J[-1, 0, 0]:.6f} exact={exact:.6f}")

# %% directional derivative equals the Riemann sum of the kernel
m = builtin_model("elliptic-nd", {"n": 3})
chain = simulate_chain(m.generator, 0, 1.0, seed=7)
grid = make_grid(1.0, 1e-2, chain)
path = simulate_path(m, chain, grid, [0.1, 0.2, 0.3], seed=8)
fl = flow_bundle(m, path)
h = DirectionField(np.sin(np.outer(grid.nodes[:-1], [1.0, 2.0, 3.0])))
lhs = directional_derivative(m, path, h)[-1]
rhs = np.einsum("kad,kd,k->a", kernel_matrix(fl), h.h, grid.widths)
print("D^h X_T", lhs, "\nRiemann", rhs)

# %%
M = malliavin_matrix(path, fl)
J = fl.J[-1]
print("|M - J C J^T| =", np.linalg.norm(M.M - J @ M.C @ J.T))
print("eigenvalues of M:", np.linalg.eigvalsh(M.M))
