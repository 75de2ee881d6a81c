"""Lie brackets and the sampled bracket condition.

The hypoelliptic model has noise in x1 only; the drift couples it into x2,
so level 0 spans a line and level 1 spans the plane.  The degenerate model
has no coupling and every bracket vanishes.
"""
# %%
import numpy as np

from switchflow import build_bracket_sets, builtin_model, uhc_check

hyp = builtin_model("hypoelliptic-2d")
levels = build_bracket_sets(hyp, 1)
x = np.array([[0.5, -1.0]])
for q, level in enumerate(levels):
    for V in level:
        print(f"level {q}: {V.label} at x={x[0]} -> {V.value(x, [0])[0]}")

# %%
for j0 in (0, 1):
    print(uhc_check(hyp, j0).summary)

# %%
deg = build_bracket_sets(builtin_model("degenerate-2d"), 2)
print("pruned:", [label for _, label, _ in deg.pruned])
print(uhc_check(builtin_model("degenerate-2d"), 2).summary)
