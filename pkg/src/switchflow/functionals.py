"""Test functionals ``f(x, alpha)`` for semigroup and gradient estimates.

A functional evaluates a batch ``x`` of shape ``(P, n)`` with regimes
``alpha`` of shape ``(P,)`` and returns ``(P,)``; ``grad`` returns
``(P, n)`` and is absent for discontinuous functionals.  Every registry
entry accepts ``regime_weights`` (one factor per regime) to make it
regime dependent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


@dataclass(frozen=True)
class Functional:
    value: Callable
    grad: Callable | None = None
    sup_norm: float = np.inf
    name: str = "custom"

    def __call__(self, x, alpha):
        return self.value(x, alpha)

    def scaled(self, c: float) -> "Functional":
        grad = None if self.grad is None else (lambda x, a, g=self.grad: c * g(x, a))
        return Functional(lambda x, a, v=self.value: c * v(x, a), grad, abs(c) * self.sup_norm,
                          f"{c}*{self.name}")


def _weights(params):
    unknown = set(params) - {"regime_weights"}
    if unknown:
        raise TypeError(f"unexpected parameter(s) {', '.join(sorted(unknown))}")
    w = params.get("regime_weights")
    return None if w is None else np.asarray(w, dtype=float)


def _sup(base, params):
    w = params.get("regime_weights")
    return base if w is None else base * float(np.max(np.abs(w)))


def _with_weights(value, grad, w):
    if w is None:
        return value, grad

    def wv(x, a):
        return w[np.asarray(a)] * value(x, a)

    wg = None if grad is None else (lambda x, a: w[np.asarray(a)][:, None] * grad(x, a))
    return wv, wg


def constant(c: float = 1.0, **params) -> Functional:
    v = lambda x, a: np.full(np.asarray(x).shape[0], float(c))
    g = lambda x, a: np.zeros_like(np.asarray(x, dtype=float))
    v, g = _with_weights(v, g, _weights(params))
    return Functional(v, g, _sup(abs(c), params), "constant")


def linear(weights, **params) -> Functional:
    w = np.asarray(weights, dtype=float)
    v, g = _with_weights(lambda x, a: np.asarray(x) @ w,
                         lambda x, a: np.broadcast_to(w, np.shape(x)).copy(), _weights(params))
    return Functional(v, g, np.inf, "linear")


def tanh(component: int = 0, scale: float = 1.0, **params) -> Functional:
    c = int(component)
    v = lambda x, a: np.tanh(scale * np.asarray(x)[:, c])

    def g(x, a):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[:, c] = scale / np.cosh(scale * x[:, c]) ** 2
        return out

    v, g = _with_weights(v, g, _weights(params))
    return Functional(v, g, _sup(1.0, params), "tanh")


def indicator(component: int = 0, threshold: float = 0.0, **params) -> Functional:
    c = int(component)
    v = lambda x, a: (np.asarray(x)[:, c] > threshold).astype(float)
    v, _ = _with_weights(v, None, _weights(params))
    return Functional(v, None, _sup(1.0, params), "indicator")


def smoothed_indicator(component: int = 0, threshold: float = 0.0, width: float = 0.1,
                       **params) -> Functional:
    """``(1 + tanh((x_c - threshold) / width)) / 2``."""
    c = int(component)
    v = lambda x, a: 0.5 * (1.0 + np.tanh((np.asarray(x)[:, c] - threshold) / width))

    def g(x, a):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[:, c] = 0.5 / width / np.cosh((x[:, c] - threshold) / width) ** 2
        return out

    v, g = _with_weights(v, g, _weights(params))
    return Functional(v, g, _sup(1.0, params), "smoothed-indicator")


def polynomial(coefficients, component: int = 0, **params) -> Functional:
    """``sum_k coefficients[k] x_c^k``."""
    coef = np.asarray(coefficients, dtype=float)
    c = int(component)
    dcoef = coef[1:] * np.arange(1, coef.size)
    v = lambda x, a: np.polynomial.polynomial.polyval(np.asarray(x)[:, c], coef)

    def g(x, a):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[:, c] = np.polynomial.polynomial.polyval(x[:, c], dcoef) if dcoef.size else 0.0
        return out

    v, g = _with_weights(v, g, _weights(params))
    sup = abs(coef[0]) if coef.size == 1 else np.inf
    return Functional(v, g, _sup(sup, params), "polynomial")


REGISTRY: Mapping[str, Callable[..., Functional]] = {
    "constant": constant,
    "linear": linear,
    "tanh": tanh,
    "indicator": indicator,
    "smoothed-indicator": smoothed_indicator,
    "polynomial": polynomial,
}


def make_functional(name: str, params: Mapping | None = None) -> Functional:
    if name not in REGISTRY:
        raise ValueError(f"unknown functional {name!r}; choose from {', '.join(REGISTRY)}")
    try:
        f = REGISTRY[name](**dict(params or {}))
    except TypeError as exc:
        raise ValueError(f"bad parameters for functional {name!r}: {exc}") from None
    return Functional(f.value, f.grad, f.sup_norm, name)
