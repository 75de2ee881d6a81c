"""Three estimators of the semigroup gradient.

The Bismut weight needs no derivative of f, so it works for an indicator
where the pathwise estimator is unavailable.  On a smooth functional all
three agree; the finite-difference estimator uses common random numbers.
"""
# %%
from switchflow import builtin_model, make_functional
from switchflow.bismut import (finite_difference_gradient, gradient_estimate, pathwise_gradient,
                               strong_feller_probe)

model = builtin_model("switching-gbm")
f = make_functional("tanh")
kw = dict(n_paths=4000, dt=1e-2)
for name, est in [("bismut", gradient_estimate(model, [1.0], 0, 1.0, f, seed=1, **kw)),
                  ("pathwise", pathwise_gradient(model, [1.0], 0, 1.0, f, seed=2, **kw)),
                  ("finite-diff", finite_difference_gradient(model, [1.0], 0, 1.0, f, seed=3, **kw))]:
    print(f"{name:12s} {est.value[0]: .4f} +- {est.stderr[0]:.4f}")

# %% a discontinuous functional: only the weight applies
ou = builtin_model("switching-ou")
ind = make_functional("indicator")
g = gradient_estimate(ou, [0.0], 0, 1.0, ind, seed=4, **kw)
print("d/dx P(X_1 > 0) at x=0:", g.value[0], "+-", g.stderr[0])

# %% the semigroup moves a bounded function Lipschitz-continuously
probe = strong_feller_probe(ou, [0.0], 0, 1.0, ind, [0.2, 0.1, 0.05], seed=5, **kw)
for o, d in zip(probe.offsets, probe.differences):
    print(f"offset {o:5.3f}: P f(y) - P f(x) = {d:.4f}")
print("fitted slope", probe.slope, "+-", probe.slope_stderr)
