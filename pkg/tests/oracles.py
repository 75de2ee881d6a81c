"""Independent reference values for the switching OU fixture.

These use exact piecewise integration over the chain segments and
scipy's matrix exponential, never the package's own flow or quadrature
code.
"""

import math

import numpy as np
from scipy.linalg import expm


def feynman_kac_decay(q, a, alpha0, t):
    """E[exp(-int_0^t a(alpha_s) ds) | alpha_0] = (exp(t (Q - diag a)) 1)[alpha0]."""
    q = np.asarray(q, dtype=float)
    return float((expm(t * (q - np.diag(a))) @ np.ones(q.shape[0]))[alpha0])


def chain_segments(initial, jump_times, jump_targets, t):
    cuts = [0.0] + [s for s in jump_times if s < t] + [t]
    regs = [initial] + list(jump_targets)
    return [(cuts[k], cuts[k + 1], regs[k]) for k in range(len(cuts) - 1)]


def ou_conditional_moments(segments, a, s, x0):
    """Mean and variance of X_t for dX = -a X dt + s dW along a fixed regime path."""
    A = 0.0  # int_0^t a
    var = 0.0
    for lo, hi, r in segments:
        ar, sr, h = a[r], s[r], hi - lo
        # propagate the variance over the segment exactly
        decay = math.exp(-2 * ar * h)
        var = var * decay + (sr * sr * (1 - decay) / (2 * ar) if ar > 0 else sr * sr * h)
        A += ar * h
    return x0 * math.exp(-A), var


def ou_decay(segments, a):
    return math.exp(-sum(a[r] * (hi - lo) for lo, hi, r in segments))


def ou_diffusion_weight(segments, a, s):
    """int_0^t exp(-int_u^t a) s(alpha_u) du, the response to a unit direction h."""
    total = 0.0
    for lo, hi, r in segments:
        ar, h = a[r], hi - lo
        total = total * math.exp(-ar * h) + (s[r] * (1 - math.exp(-ar * h)) / ar if ar > 0 else s[r] * h)
    return total


def ou_reduced_matrix(segments, a, s):
    """C_t = int_0^t exp(2 int_0^u a) s(alpha_u)^2 du."""
    total, A = 0.0, 0.0
    for lo, hi, r in segments:
        ar, h = a[r], hi - lo
        total += s[r] ** 2 * math.exp(2 * A) * ((math.exp(2 * ar * h) - 1) / (2 * ar) if ar > 0 else h)
        A += ar * h
    return total


def mixture_density(points, moments, extra_var=0.0):
    """Average of Gaussian densities N(m, v + extra_var) at ``points``."""
    pts = np.asarray(points, dtype=float)[:, None]
    m = np.array([mv[0] for mv in moments])[None]
    v = np.array([mv[1] for mv in moments])[None] + extra_var
    return np.mean(np.exp(-0.5 * (pts - m) ** 2 / v) / np.sqrt(2 * np.pi * v), axis=1)
