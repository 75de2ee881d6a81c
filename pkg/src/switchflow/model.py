"""Switching SDE problem definitions.

A :class:`SwitchingModel` bundles the regime-dependent drift ``b(x, a)``,
the diffusion columns ``sigma_1 .. sigma_d`` and the generator matrix of the
regime chain.  Every coefficient carries analytic derivative oracles; the
flow, bracket and weight computations downstream never differentiate
numerically unless explicitly asked to.

Oracle calling convention
-------------------------
``value(x, alpha)`` receives ``x`` of shape ``(N, n)`` and integer regimes
``alpha`` of shape ``(N,)`` and returns ``(N, n)``.  ``jac`` returns
``(N, n, n)`` with ``jac[p, i, j] = d f_i / d x_j``, and ``hess`` returns
``(N, n, n, n)`` with ``hess[p, i, j, k] = d^2 f_i / d x_j d x_k``.
The built-in fields also accept a single point ``x`` of shape ``(n,)``.

Regimes are 0-based throughout the package: ``alpha`` takes values in
``{0, ..., m0 - 1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

Oracle = Callable[[np.ndarray, np.ndarray], np.ndarray]

ROW_SUM_TOL = 1e-12


class ModelError(ValueError):
    """Raised for unknown models or malformed model parameters."""


class InvalidGeneratorError(ValueError):
    """Raised when an operation needs an admissible generator matrix."""


class MissingDerivativeError(RuntimeError):
    """Raised when an operation needs a second-derivative oracle that is absent."""


@dataclass(frozen=True)
class GeneratorMatrix:
    """Transition-rate matrix of the regime chain.

    The matrix is stored as given; admissibility is checked by
    :meth:`violations` so that malformed inputs can be reported rather than
    rejected at construction.
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            raise InvalidGeneratorError(f"generator must be a non-empty square matrix, got shape {q.shape}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def m0(self) -> int:
        return self.q.shape[0]

    @property
    def K(self) -> float:
        """Largest absolute rate, ``max |q_ij|``."""
        return float(np.max(np.abs(self.q)))

    def violations(self) -> list[str]:
        out = []
        q = self.q
        if not np.all(np.isfinite(q)):
            out.append("generator has non-finite entries")
            return out
        for i in range(self.m0):
            for j in range(self.m0):
                if i != j and q[i, j] < 0:
                    out.append(f"negative off-diagonal rate q[{i},{j}] = {q[i, j]!r}")
        for i, s in enumerate(q.sum(axis=1)):
            if abs(s) > ROW_SUM_TOL:
                out.append(f"row {i} sums to {s!r}, expected 0")
        return out

    def check(self) -> None:
        problems = self.violations()
        if problems:
            raise InvalidGeneratorError("; ".join(problems))

    def exit_rate(self, i: int) -> float:
        return float(-self.q[i, i])


@dataclass(frozen=True)
class CoefficientField:
    """A regime-dependent vector field with analytic derivative oracles."""

    value: Oracle
    jac: Oracle
    hess: Oracle | None = None
    name: str = ""


@dataclass(frozen=True)
class SwitchingModel:
    """``dX = b(X, a) dt + sum_i sigma_i(X, a) dW^i`` with regime chain ``a``."""

    n: int
    d: int
    drift: CoefficientField
    diffusion_cols: tuple[CoefficientField, ...]
    generator: GeneratorMatrix
    name: str = "custom"
    params: Mapping = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self):
        object.__setattr__(self, "diffusion_cols", tuple(self.diffusion_cols))

    @property
    def m0(self) -> int:
        return self.generator.m0

    @property
    def has_hessians(self) -> bool:
        return self.drift.hess is not None and all(c.hess is not None for c in self.diffusion_cols)

    def fields(self) -> list[tuple[str, CoefficientField]]:
        named = [("drift", self.drift)]
        named += [(f"sigma_{i + 1}", c) for i, c in enumerate(self.diffusion_cols)]
        return named

    # batched evaluation helpers used by the simulation engine
    def b(self, x, alpha):
        return self.drift.value(x, alpha)

    def sigma(self, x, alpha):
        """Diffusion matrix, shape ``(N, n, d)``."""
        return np.stack([c.value(x, alpha) for c in self.diffusion_cols], axis=-1)

    def grad_b(self, x, alpha):
        return self.drift.jac(x, alpha)

    def grad_sigma(self, x, alpha):
        """Jacobians of the diffusion columns, shape ``(N, d, n, n)``."""
        return np.stack([c.jac(x, alpha) for c in self.diffusion_cols], axis=-3)

    def hess_b(self, x, alpha):
        self.require_hessians()
        return self.drift.hess(x, alpha)

    def hess_sigma(self, x, alpha):
        """Hessians of the diffusion columns, shape ``(N, d, n, n, n)``."""
        self.require_hessians()
        return np.stack([c.hess(x, alpha) for c in self.diffusion_cols], axis=-4)

    def require_hessians(self) -> None:
        if not self.has_hessians:
            missing = [name for name, f in self.fields() if f.hess is None]
            raise MissingDerivativeError(f"model {self.name!r} has no hess oracle for: {', '.join(missing)}")


def validate_model(model: SwitchingModel, probes=None) -> list[str]:
    """List every admissibility violation of ``model``; empty means valid.

    Output shapes are probed at ``probes`` (a sequence of ``(x, alpha)``),
    defaulting to the origin in every regime.
    """
    report = list(model.generator.violations())
    if len(model.diffusion_cols) != model.d:
        report.append(f"expected {model.d} diffusion columns, got {len(model.diffusion_cols)}")
    if probes is None:
        probes = [(np.zeros(model.n), a) for a in range(model.m0)]
    for x, a in probes:
        xb = np.asarray(x, dtype=float).reshape(1, model.n)
        ab = np.array([a])
        for name, f in model.fields():
            try:
                v = np.asarray(f.value(xb, ab))
                jac = np.asarray(f.jac(xb, ab))
            except Exception as exc:  # oracle failure is a reportable violation
                report.append(f"{name} failed at x={list(xb[0])}, alpha={a}: {exc}")
                continue
            if v.shape != (1, model.n):
                report.append(f"{name} value has shape {v.shape} at alpha={a}, expected (1, {model.n})")
            if jac.shape != (1, model.n, model.n):
                report.append(f"{name} jac has shape {jac.shape} at alpha={a}, expected (1, {model.n}, {model.n})")
            if f.hess is not None:
                h = np.asarray(f.hess(xb, ab))
                if h.shape != (1, model.n, model.n, model.n):
                    report.append(f"{name} hess has shape {h.shape} at alpha={a}")
    return report


def _rel_err(analytic, approx):
    scale = np.linalg.norm(approx)
    diff = np.linalg.norm(analytic - approx)
    return float(diff / scale) if scale > 1e-12 else float(diff)


def _central_diff(fun, x, alpha, h):
    """Central differences of ``fun`` at a single point; derivative index last."""
    cols = []
    for j in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[..., j] = h
        cols.append((fun(x + e, alpha) - fun(x - e, alpha)) / (2 * h))
    return np.stack(cols, axis=-1)


def check_derivative_oracles(model: SwitchingModel, probes, fd_step: float = 1e-6) -> dict:
    """Compare analytic derivative oracles against central differences.

    Returns ``{"errors": {oracle: max relative error}, "failures": [...]}``
    where each failure names the oracle and the probe that raised.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    errors: dict[str, float] = {}
    failures = []
    for name, f in model.fields():
        for kind, fun, deriv in (("jac", f.value, f.jac), ("hess", f.jac, f.hess)):
            if deriv is None:
                continue
            key = f"{name}.{kind}"
            worst = 0.0
            for x, a in probes:
                xb = np.asarray(x, dtype=float).reshape(1, model.n)
                ab = np.array([a])
                try:
                    analytic = np.asarray(deriv(xb, ab))[0]
                    approx = _central_diff(fun, xb, ab, fd_step)[0]
                except Exception as exc:
                    failures.append((key, (tuple(xb[0]), a), repr(exc)))
                    continue
                worst = max(worst, _rel_err(analytic, approx))
            errors[key] = worst
    return {"errors": errors, "failures": failures}


# ---------------------------------------------------------------------------
# built-in model zoo
# ---------------------------------------------------------------------------

DEFAULT_Q = [[-1.0, 1.0], [2.0, -2.0]]


def _per_regime(params, key, m0, default=None):
    raw = params.get(key, default)
    if raw is None:
        raise ModelError(f"missing parameter {key!r}")
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise ModelError(f"parameter {key!r} must be numeric, got {raw!r}") from None
    if arr.ndim == 0:
        arr = np.full(m0, float(arr))
    if arr.shape != (m0,):
        raise ModelError(f"parameter {key!r} needs one value per regime ({m0}), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"parameter {key!r} has non-finite entries")
    return arr


def _field(value, jac, hess, name):
    return CoefficientField(value=value, jac=jac, hess=hess, name=name)


def _zeros_jac(n):
    def jac(x, alpha):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, n))
    return jac


def _zeros_hess(n):
    def hess(x, alpha):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, n, n))
    return hess


def _constant_field(vec, name):
    vec = np.asarray(vec, dtype=float)
    n = vec.size

    def value(x, alpha):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(vec, x.shape[:-1] + (n,)).copy()

    return _field(value, _zeros_jac(n), _zeros_hess(n), name)


def _linear_scalar_field(coef, name):
    """``f(x, a) = coef[a] * x`` in any dimension (diagonal linear map)."""

    def value(x, alpha):
        x = np.asarray(x, dtype=float)
        return coef[np.asarray(alpha)][..., None] * x

    def jac(x, alpha):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        return coef[np.asarray(alpha)][..., None, None] * np.eye(n)

    def hess(x, alpha):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        return np.zeros(x.shape[:-1] + (n, n, n))

    return _field(value, jac, hess, name)


def _regime_scalar_field(coef, name):
    """Additive 1-D noise column ``f(x, a) = coef[a]``."""

    def value(x, alpha):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(coef[np.asarray(alpha)][..., None], x.shape).copy()

    return _field(value, _zeros_jac(1), _zeros_hess(1), name)


def _switching_ou(params, Q):
    a = _per_regime(params, "a", Q.m0, [1.0, 2.0] if Q.m0 == 2 else 1.0)
    s = _per_regime(params, "s", Q.m0, [0.5, 1.0] if Q.m0 == 2 else 0.5)
    drift = _linear_scalar_field(-a, "-a(alpha) x")
    return 1, 1, drift, [_regime_scalar_field(s, "s(alpha)")], ""


def _switching_gbm(params, Q):
    mu = _per_regime(params, "mu", Q.m0, [0.05, -0.1] if Q.m0 == 2 else 0.05)
    s = _per_regime(params, "s", Q.m0, [0.3, 0.4] if Q.m0 == 2 else 0.3)
    notes = ("sigma(x) = s x is unbounded and vanishes at x = 0, so no uniform nondegeneracy "
             "bound holds; kept as a fixture for its closed-form flows")
    return 1, 1, _linear_scalar_field(mu, "mu(alpha) x"), [_linear_scalar_field(s, "s(alpha) x")], notes


def _hypoelliptic_2d(params, Q):
    theta = _per_regime(params, "theta", Q.m0, [1.0, 2.0] if Q.m0 == 2 else 1.0)

    def value(x, alpha):
        x = np.asarray(x, dtype=float)
        th = theta[np.asarray(alpha)]
        return np.stack([-th * x[..., 0], x[..., 0]], axis=-1)

    def jac(x, alpha):
        x = np.asarray(x, dtype=float)
        th = np.broadcast_to(theta[np.asarray(alpha)], x.shape[:-1])
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = -th
        out[..., 1, 0] = 1.0
        return out

    drift = _field(value, jac, _zeros_hess(2), "(-theta x1, x1)")
    return 2, 1, drift, [_constant_field([1.0, 0.0], "e1")], ""


def _degenerate_2d(params, Q):
    return 2, 1, _constant_field([0.0, 0.0], "0"), [_constant_field([1.0, 0.0], "e1")], ""


def _elliptic_nd(params, Q):
    n = params.get("n", 2)
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise ModelError(f"parameter 'n' must be a positive integer, got {n!r}")
    n = int(n)
    a = _per_regime(params, "a", Q.m0, [1.0, 2.0] if Q.m0 == 2 else 1.0)
    c = float(params.get("coupling", 0.5))
    nxt = np.roll(np.arange(n), -1)
    rows = np.arange(n)

    # b_i(x, a) = -a x_i + c sin(x_{i+1 mod n})
    def value(x, alpha):
        x = np.asarray(x, dtype=float)
        return -a[np.asarray(alpha)][..., None] * x + c * np.sin(x[..., nxt])

    def jac(x, alpha):
        x = np.asarray(x, dtype=float)
        out = -a[np.asarray(alpha)][..., None, None] * np.eye(n)
        out = np.broadcast_to(out, x.shape[:-1] + (n, n)).copy()
        out[..., rows, nxt] += c * np.cos(x[..., nxt])
        return out

    def hess(x, alpha):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (n, n, n))
        out[..., rows, nxt, nxt] = -c * np.sin(x[..., nxt])
        return out

    drift = _field(value, jac, hess, "-a x + c sin(shift x)")
    cols = [_constant_field(np.eye(n)[i], f"e{i + 1}") for i in range(n)]
    return n, n, drift, cols, ""


_ZOO = {
    "switching-ou": (_switching_ou, {"a", "s"}),
    "switching-gbm": (_switching_gbm, {"mu", "s"}),
    "hypoelliptic-2d": (_hypoelliptic_2d, {"theta"}),
    "degenerate-2d": (_degenerate_2d, set()),
    "elliptic-nd": (_elliptic_nd, {"n", "a", "coupling"}),
}

BUILTIN_MODELS = tuple(_ZOO)


def builtin_model(name: str, params: Mapping | None = None) -> SwitchingModel:
    """Construct one of the fixture models.

    ``switching-ou``     dX = -a(alpha) X dt + s(alpha) dW                (n = d = 1)
    ``switching-gbm``    dX = mu(alpha) X dt + s(alpha) X dW              (n = d = 1)
    ``hypoelliptic-2d``  b = (-theta(alpha) x1, x1), sigma = (1, 0)       (n = 2, d = 1)
    ``degenerate-2d``    b = 0, sigma = (1, 0)                           (n = 2, d = 1)
    ``elliptic-nd``      b_i = -a(alpha) x_i + coupling sin(x_{i+1}), sigma = I  (d = n)

    Every model accepts ``Q`` (the generator, default ``[[-1, 1], [2, -2]]``);
    per-regime parameters accept a scalar or one value per regime.
    ``switching-gbm`` has unbounded coefficients and a diffusion that
    vanishes at the origin, so it fails the uniform bracket condition; it
    is kept because its flows have closed forms.
    """
    params = dict(params or {})
    if name not in _ZOO:
        raise ModelError(f"unknown model {name!r}; choose from {', '.join(BUILTIN_MODELS)}")
    build, allowed = _ZOO[name]
    unknown = set(params) - allowed - {"Q"}
    if unknown:
        raise ModelError(f"unknown parameter(s) for {name}: {', '.join(sorted(unknown))}")
    try:
        Q = GeneratorMatrix(params.get("Q", DEFAULT_Q))
    except (TypeError, ValueError) as exc:
        raise ModelError(f"parameter 'Q' is malformed: {exc}") from None
    n, d, drift, cols, notes = build(params, Q)
    model = SwitchingModel(n=n, d=d, drift=drift, diffusion_cols=tuple(cols), generator=Q,
                           name=name, params=params, notes=notes)
    problems = validate_model(model)
    if problems:
        raise ModelError(f"{name}: " + "; ".join(problems))
    return model


def random_probes(model: SwitchingModel, count: int, box: float = 2.0, seed: int = 0) -> list:
    """Uniform probe points in ``[-box, box]^n`` cycling through the regimes."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-box, box, size=(count, model.n))
    return [(xs[i], i % model.m0) for i in range(count)]


def as_points(x: Sequence[float] | np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"expected a state vector of length {n}, got shape {x.shape}")
    return x
