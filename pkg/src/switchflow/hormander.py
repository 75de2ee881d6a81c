"""Lie-bracket hierarchies and a sampled check of the uniform bracket condition.

Fields are immutable expression trees over the model oracles.  Each node
evaluates its value and Jacobian from its children,

    [V, G] = (grad G) V - (grad V) G,
    grad [V, G] = (hess G) V + (grad G)(grad V) - (hess V) G - (grad V)(grad G),

so a depth-``q`` bracket needs second derivatives of depth ``q - 1``
children.  Leaves have analytic Hessians; Hessians of composite nodes fall
back to central differences of their analytic Jacobian with step
``1e-5 (1 + |x|)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .model import CoefficientField, MissingDerivativeError, SwitchingModel

log = logging.getLogger(__name__)

PRUNE_TOL = 1e-12
FD_REL_STEP = 1e-5


def _points(x, alpha):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    alpha = np.broadcast_to(np.asarray(alpha, dtype=int), x.shape[:1])
    return x, alpha


def _fd_jacobian(fun, x, alpha):
    """Central differences of ``fun`` (output ``(N, ...)``) along each coordinate; derivative axis last."""
    step = FD_REL_STEP * (1.0 + np.abs(x))
    cols = []
    for j in range(x.shape[1]):
        e = np.zeros_like(x)
        e[:, j] = step[:, j]
        diff = (fun(x + e, alpha) - fun(x - e, alpha))
        cols.append(diff / (2 * step[:, j]).reshape((-1,) + (1,) * (diff.ndim - 1)))
    return np.stack(cols, axis=-1)


class VectorFieldExpr:
    """Base node.  ``value`` is ``(N, n)``, ``jac`` ``(N, n, n)``, ``hess`` ``(N, n, n, n)``."""

    depth = 0
    label = "?"
    allow_fd = True

    def value(self, x, alpha):
        raise NotImplementedError

    def jac(self, x, alpha):
        raise NotImplementedError

    def hess(self, x, alpha):
        if not self.allow_fd:
            raise MissingDerivativeError(f"no analytic second derivative for {self.label}")
        x, alpha = _points(x, alpha)
        return _fd_jacobian(self.jac, x, alpha)

    def __call__(self, x, alpha):
        return self.value(x, alpha)

    def __repr__(self):
        return self.label


class Leaf(VectorFieldExpr):
    def __init__(self, field: CoefficientField, label: str, allow_fd: bool = True):
        self.field = field
        self.label = label
        self.allow_fd = allow_fd

    def value(self, x, alpha):
        x, alpha = _points(x, alpha)
        return self.field.value(x, alpha)

    def jac(self, x, alpha):
        x, alpha = _points(x, alpha)
        return self.field.jac(x, alpha)

    def hess(self, x, alpha):
        if self.field.hess is not None:
            x, alpha = _points(x, alpha)
            return self.field.hess(x, alpha)
        return super().hess(x, alpha)


class Sigma0(VectorFieldExpr):
    """``sigma_0 = b - 1/2 sum_i (grad sigma_i) sigma_i``."""

    depth = 0
    label = "sigma_0"

    def __init__(self, model: SwitchingModel, allow_fd: bool = True):
        self.model = model
        self.allow_fd = allow_fd
        self.cols = [Leaf(c, f"sigma_{i + 1}", allow_fd) for i, c in enumerate(model.diffusion_cols)]
        self.drift = Leaf(model.drift, "b", allow_fd)

    def value(self, x, alpha):
        x, alpha = _points(x, alpha)
        out = self.drift.value(x, alpha).copy()
        for c in self.cols:
            out -= 0.5 * np.einsum("pij,pj->pi", c.jac(x, alpha), c.value(x, alpha))
        return out

    def jac(self, x, alpha):
        x, alpha = _points(x, alpha)
        out = self.drift.jac(x, alpha).copy()
        for c in self.cols:
            g = c.jac(x, alpha)
            out -= 0.5 * (np.einsum("pijk,pj->pik", c.hess(x, alpha), c.value(x, alpha)) + g @ g)
        return out


class Bracket(VectorFieldExpr):
    def __init__(self, V: VectorFieldExpr, G: VectorFieldExpr):
        self.V, self.G = V, G
        self.depth = 1 + max(V.depth, G.depth)
        self.label = f"[{V.label}, {G.label}]"
        self.allow_fd = V.allow_fd and G.allow_fd

    def value(self, x, alpha):
        x, alpha = _points(x, alpha)
        return (np.einsum("pij,pj->pi", self.G.jac(x, alpha), self.V.value(x, alpha))
                - np.einsum("pij,pj->pi", self.V.jac(x, alpha), self.G.value(x, alpha)))

    def jac(self, x, alpha):
        x, alpha = _points(x, alpha)
        v, g = self.V.value(x, alpha), self.G.value(x, alpha)
        jv, jg = self.V.jac(x, alpha), self.G.jac(x, alpha)
        return (np.einsum("pijk,pj->pik", self.G.hess(x, alpha), v) + jg @ jv
                - np.einsum("pijk,pj->pik", self.V.hess(x, alpha), g) - jv @ jg)


class Combination(VectorFieldExpr):
    """Linear combination ``sum_k c_k V_k``."""

    def __init__(self, terms, label=None):
        self.terms = tuple((float(c), V) for c, V in terms)
        self.depth = max(V.depth for _, V in self.terms)
        self.label = label or " + ".join(f"{c:g}*{V.label}" for c, V in self.terms)
        self.allow_fd = all(V.allow_fd for _, V in self.terms)

    def value(self, x, alpha):
        return sum(c * V.value(x, alpha) for c, V in self.terms)

    def jac(self, x, alpha):
        return sum(c * V.jac(x, alpha) for c, V in self.terms)

    def hess(self, x, alpha):
        return sum(c * V.hess(x, alpha) for c, V in self.terms)


def sigma0_field(model: SwitchingModel, allow_fd: bool = True) -> Sigma0:
    return Sigma0(model, allow_fd)


def lie_bracket(V: VectorFieldExpr, G: VectorFieldExpr) -> Bracket:
    return Bracket(V, G)


def diffusion_fields(model: SwitchingModel, allow_fd: bool = True) -> list[Leaf]:
    return [Leaf(c, f"sigma_{i + 1}", allow_fd) for i, c in enumerate(model.diffusion_cols)]


class BracketLevels(list):
    """List of levels (each a list of fields) plus the pruning log."""

    def __init__(self, levels, variant, pruned):
        super().__init__(levels)
        self.variant = variant
        self.pruned = pruned

    def fields(self, j0=None):
        j0 = len(self) - 1 if j0 is None else j0
        return [V for level in self[:j0 + 1] for V in level]


def _default_probes(model, count=24, box=2.0, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-box, box, size=(count, model.n))


def _sup_norm(V, probes, m0):
    x = np.repeat(probes, m0, axis=0)
    a = np.tile(np.arange(m0), probes.shape[0])
    return float(np.max(np.abs(V.value(x, a))))


def build_bracket_sets(model: SwitchingModel, j0: int, variant: str = "sigma-prime", probes=None,
                       allow_fd: bool = True) -> BracketLevels:
    """Levels ``0..j0`` of the bracket hierarchy.

    ``variant="sigma"`` brackets every field of the previous level with
    ``sigma_0 .. sigma_d``; ``"sigma-prime"`` uses ``sigma_1 .. sigma_d`` and
    adds ``[sigma_0, V] + 1/2 sum_j [sigma_j, [sigma_j, V]]``.  Fields of level
    1 and above whose sup over the probes is below ``1e-12`` are dropped.
    """
    if variant not in ("sigma", "sigma-prime"):
        raise ValueError(f"unknown variant {variant!r}")
    if j0 < 0:
        raise ValueError("j0 must be non-negative")
    probes = _default_probes(model) if probes is None else np.atleast_2d(np.asarray(probes, dtype=float))
    cols = diffusion_fields(model, allow_fd)
    s0 = sigma0_field(model, allow_fd)
    levels = [list(cols)]
    pruned = []
    for level in range(1, j0 + 1):
        fresh = []
        for V in levels[-1]:
            cands = [Bracket(s, V) for s in cols]
            if variant == "sigma":
                cands.insert(0, Bracket(s0, V))
            else:
                terms = [(1.0, Bracket(s0, V))] + [(0.5, Bracket(s, Bracket(s, V))) for s in cols]
                cands.append(Combination(terms, label=f"L[{V.label}]"))
            for W in cands:
                try:
                    sup = _sup_norm(W, probes, model.m0)
                except MissingDerivativeError as exc:
                    raise MissingDerivativeError(f"level {level}: {exc}") from None
                if sup < PRUNE_TOL:
                    log.info("pruned zero field %s at level %d (sup %.3g)", W.label, level, sup)
                    pruned.append((level, W.label, sup))
                else:
                    fresh.append(W)
        levels.append(fresh)
    return BracketLevels(levels, variant, pruned)


def gram(fields, x, alpha) -> np.ndarray:
    """``sum_V V V^T`` at each point, ``(N, n, n)``."""
    x, alpha = _points(x, alpha)
    out = np.zeros((x.shape[0], x.shape[1], x.shape[1]))
    for V in fields:
        v = V.value(x, alpha)
        out += v[:, :, None] * v[:, None, :]
    return out


def span_rank(fields, x, alpha, rtol: float = 1e-8) -> int:
    """Numerical rank of the stacked field values at one point."""
    x, alpha = _points(x, alpha)
    if not fields:
        return 0
    A = np.stack([V.value(x, alpha)[0] for V in fields], axis=1)
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


@dataclass(frozen=True)
class UhcReport:
    j0: int
    variant: str
    points: np.ndarray   # (S, n) sample points, each checked in every regime
    alphas: np.ndarray   # (S * m0,)
    lam_min: np.ndarray  # (S * m0,)
    c_hat: float
    worst_x: np.ndarray
    worst_alpha: int
    worst_direction: np.ndarray
    c: float
    passed: bool

    @property
    def summary(self) -> str:
        verdict = "passes on sampled domain" if self.passed else "fails on sampled domain"
        return (f"j0={self.j0} variant={self.variant} c_hat={self.c_hat!r} threshold={self.c!r}: {verdict}; "
                f"worst at x={self.worst_x.tolist()} alpha={self.worst_alpha} "
                f"direction={self.worst_direction.tolist()}")

    def to_csv(self, path) -> None:
        m0 = self.alphas.size // max(1, self.points.shape[0])
        xs = np.repeat(self.points, m0, axis=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.points.shape[1])] + ["alpha", "lambda_min"])
            for x, a, lam in zip(xs, self.alphas, self.lam_min):
                w.writerow([repr(float(v)) for v in x] + [int(a), repr(float(lam))])
            fh.write(f"# {self.summary}\n")


def sample_domain(model: SwitchingModel, domain) -> np.ndarray:
    """``domain`` is an ``(S, n)`` array of points or a dict ``{box, count, seed}``.

    ``box`` is a half-width (scalar) or a list of ``[low, high]`` pairs.
    """
    if isinstance(domain, dict):
        count = int(domain.get("count", 100))
        rng = np.random.default_rng(domain.get("seed", 0))
        box = domain.get("box", 2.0)
        if np.isscalar(box):
            lo, hi = -float(box) * np.ones(model.n), float(box) * np.ones(model.n)
        else:
            box = np.asarray(box, dtype=float).reshape(model.n, 2)
            lo, hi = box[:, 0], box[:, 1]
        return lo + (hi - lo) * rng.random((count, model.n))
    pts = np.atleast_2d(np.asarray(domain, dtype=float))
    if pts.shape[1] != model.n:
        raise ValueError(f"domain points must have {model.n} coordinates")
    return pts


def uhc_check(model: SwitchingModel, j0: int, variant: str = "sigma-prime", domain=None, c: float = 1e-6,
              levels=None, allow_fd: bool = True) -> UhcReport:
    """Minimum eigenvalue of the level-``<= j0`` Gram matrix over sampled ``(x, alpha)``.

    A pass only says the bracket condition holds on the sample.
    """
    pts = sample_domain(model, {"count": 100} if domain is None else domain)
    if levels is None:
        levels = build_bracket_sets(model, j0, variant, probes=pts, allow_fd=allow_fd)
    fields = [V for level in levels[:j0 + 1] for V in level]
    m0 = model.m0
    xs = np.repeat(pts, m0, axis=0)
    alphas = np.tile(np.arange(m0), pts.shape[0])
    ev, vec = np.linalg.eigh(gram(fields, xs, alphas))
    lam = ev[:, 0]
    w = int(np.argmin(lam))
    c_hat = float(lam[w])
    return UhcReport(j0=j0, variant=getattr(levels, "variant", variant), points=pts, alphas=alphas,
                     lam_min=lam, c_hat=c_hat, worst_x=xs[w], worst_alpha=int(alphas[w]),
                     worst_direction=vec[w, :, 0], c=float(c), passed=bool(c_hat >= c))
