"""Order-independent reductions.

Means are exactly rounded sums (``math.fsum``) so that a reduction gives
the same bits whatever order the per-path values arrive in.
"""

import math

import numpy as np


def exact_mean(values) -> float:
    values = np.asarray(values, dtype=float).ravel()
    return math.fsum(values) / values.size


def mean_stderr(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, float("nan")
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def combined_stderr(*errs) -> float:
    return math.sqrt(math.fsum(e * e for e in errs))
