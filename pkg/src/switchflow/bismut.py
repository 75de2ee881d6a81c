"""Bismut-type gradient estimates for switching diffusions.

For a unit direction ``xi`` the weight process is

    u_k = sigma(X_k, a_k)^T J_{t_k,t}^T M_t^{-1} J_{0,t} xi,

its integral against the noise is taken in the Skorohod sense, and
``E[f(X_t, a_t) delta(u)]`` estimates ``<grad P_t f(x, a), xi>`` without
differentiating ``f``.

On the grid the Skorohod integral is the Gaussian integration-by-parts sum

    delta(u) = sum_k u_k . dW_k - sum_k sum_i (d u_k^i / d dW_k^i) dt_k,

which satisfies the duality ``E[F delta(u)] = E[sum_k dF/d dW_k . u_k dt_k]``
exactly for smooth functionals of the increments.  Two routes compute the
diagonal derivatives: :func:`weight_malliavin_derivative` differentiates
the three factors of the weight cell by cell through the second-derivative
flow (O(K^2) per path), while the batched estimator works with the reduced
form ``u_k = Z_k^T C_t^{-1} xi`` and accumulates every future contribution
with suffix sums (O(K) per path).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._parallel import auto_chunk, chunks, map_chunks
from ._stats import mean_stderr
from .functionals import Functional
from .malliavin import (BatchFlows, FlowBundle, MalliavinMatrix, batch_flows, kernel_matrix,
                        second_derivative_flow)
from .model import SwitchingModel
from .paths import PathBatch, StatePath, simulate_batch

COND_MAX = 1e12


class IllConditionedError(RuntimeError):
    """Malliavin matrix too close to singular for the weight to be formed."""

    def __init__(self, message, lam_min=None, condition=None):
        super().__init__(message)
        self.lam_min = lam_min
        self.condition = condition


class AllPathsRejectedError(RuntimeError):
    pass


def _unit(xi, n):
    xi = np.asarray(xi, dtype=float).reshape(n)
    norm = np.linalg.norm(xi)
    return xi / norm if norm > 0 else xi


def _directions(xi, n):
    if xi is None or (isinstance(xi, str) and xi == "all-axes"):
        return np.eye(n)
    return _unit(xi, n)[None]


# ---------------------------------------------------------------------------
# single-path weight
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BismutWeight:
    u: np.ndarray   # (K, d)
    xi: np.ndarray  # (n,)
    conditioning: float
    lam_min: float


def _condition(M):
    ev = np.linalg.eigvalsh(M)
    lam_min, lam_max = float(ev[0]), float(ev[-1])
    cond = lam_max / lam_min if lam_min > 0 else np.inf
    return cond, lam_min


def bismut_weight(path: StatePath, flows: FlowBundle, M: MalliavinMatrix, xi,
                  cond_max: float = COND_MAX) -> BismutWeight:
    """Weight ``u_k`` per cell for the direction ``xi`` (normalised on input)."""
    n = flows.J.shape[-1]
    xi = _unit(xi, n)
    cond, lam_min = _condition(M.M)
    if not cond <= cond_max:
        raise IllConditionedError(f"Malliavin matrix condition number {cond:.3g} exceeds {cond_max:.3g} "
                                  f"(lambda_min = {lam_min:.3g})", lam_min=lam_min, condition=cond)
    JT = flows.J[-1]
    v = np.linalg.solve(M.M, JT @ xi)
    D = kernel_matrix(flows)
    u = np.einsum("kad,a->kd", D, v)
    return BismutWeight(u=u, xi=xi, conditioning=cond, lam_min=lam_min)


def weight_malliavin_derivative(model: SwitchingModel, path: StatePath, flows: FlowBundle,
                                M: MalliavinMatrix, xi, k: int, i: int) -> np.ndarray:
    """``D_k^i u_k``: derivative of the cell-``k`` weight with respect to ``dW_k^i``.

    The three contributions are the derivative of the kernel ``D X_t``,
    of the endpoint flow ``J_{0,t}`` and of ``M_t^{-1}``.  ``M`` must be the
    discrete-kernel matrix returned by ``malliavin_matrix(path, flows)``.
    """
    n, d = model.n, model.d
    xi = _unit(xi, n)
    g = path.grid
    K = g.n_cells
    cond, lam_min = _condition(M.M)
    if not cond <= COND_MAX:
        raise IllConditionedError("Malliavin matrix is ill conditioned", lam_min=lam_min, condition=cond)
    DJ = second_derivative_flow(model, path, flows, k, i).DJ
    gs = model.grad_sigma(path.x[:K], g.regime_per_cell)
    Jc, sig, J = flows.cell_inverse, flows.sigma[:K], flows.J
    JT, dJT = J[-1], DJ[-1]
    D = kernel_matrix(flows)
    # sensitivity of X_m to dW_k^i: zero up to node k
    w = Jc[k] @ sig[k][:, i]
    DX = np.zeros((K, n))
    DX[k + 1:] = J[k + 1:K] @ w
    rot = Jc @ sig
    dsig = np.einsum("mlab,mb->mal", gs, DX)
    dD = (dJT @ rot
          - JT @ Jc @ DJ[1:] @ rot
          + JT @ Jc @ dsig)
    dM = np.einsum("m,mad,mbd->ab", g.widths, dD, D)
    dM = dM + dM.T
    Minv = np.linalg.inv(M.M)
    v = Minv @ JT @ xi
    return dD[k].T @ v + D[k].T @ Minv @ dJT @ xi - D[k].T @ Minv @ dM @ v


def discrete_skorohod(u, path: StatePath, diag_derivatives) -> float:
    """Grid Skorohod integral of ``u`` given the diagonal increment-derivatives.

    ``diag_derivatives`` is ``(K, d)`` with entry ``[k, i] = d u_k^i / d dW_k^i``,
    or ``(K,)`` holding the per-cell sums over ``i``.
    """
    u = u.u if isinstance(u, BismutWeight) else np.asarray(u, dtype=float)
    diag = np.asarray(diag_derivatives, dtype=float)
    if u.shape != path.dW.shape:
        raise ValueError("weight and increments have different shapes")
    per_cell = diag.sum(axis=1) if diag.ndim == 2 else diag
    if per_cell.shape != (path.grid.n_cells,):
        raise ValueError("diagonal derivatives do not match the grid")
    return float(np.sum(u * path.dW) - np.sum(per_cell * path.grid.widths))


# ---------------------------------------------------------------------------
# batched weight, O(K) trace
# ---------------------------------------------------------------------------

def _suffix(a, include_self=True):
    s = np.flip(np.cumsum(np.flip(a, axis=1), axis=1), axis=1)
    if include_self:
        return s
    out = np.zeros_like(s)
    out[:, :-1] = s[:, 1:]
    return out


def skorohod_batch(model: SwitchingModel, batch: PathBatch, flows: BatchFlows, directions,
                   cond_max: float = COND_MAX, return_trace: bool = False) -> dict:
    """Skorohod integrals of the weights for every direction in ``directions``.

    Returns a dict with ``delta`` ``(P, q)``, ``ito`` ``(P, q)``, ``rejected``
    ``(P,)``, ``lam_min`` and ``condition`` of ``M_t`` per path, and with
    ``return_trace`` the per-cell trace ``(P, q, K)``.
    """
    model.require_hessians()
    P, K = batch.widths.shape
    n, d = model.n, model.d
    dt = batch.widths
    Z = flows.kernel
    C = np.einsum("pk,pkad,pkbd->pab", dt, Z, Z)
    JT = flows.J[:, -1]
    M = JT @ C @ np.swapaxes(JT, -1, -2)
    ev = np.linalg.eigvalsh(M)
    lam_min, lam_max = ev[:, 0], ev[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lam_min > 0, lam_max / np.where(lam_min > 0, lam_min, 1.0), np.inf)
    rejected = ~(cond <= cond_max)
    Cinv = np.linalg.inv(np.where(rejected[:, None, None], np.eye(n), C))

    Jk = flows.J[:, :K]
    Jc = flows.cell_inverse
    Psi = Jc[:, :, None] @ flows.grad_sigma @ Jk[:, :, None]          # (P, K, d, n, n)
    S = _suffix(dt[..., None, None] * (Z @ np.swapaxes(Z, -1, -2)))  # (P, K, n, n)
    xs = batch.x[:, :K].reshape(P * K, n)
    rs = batch.regimes.reshape(P * K)
    T = (model.hess_b(xs, rs).reshape(P, K, n, n, n) * dt[..., None, None, None]
         + np.einsum("pkl,pklabc->pkabc", batch.dW, model.hess_sigma(xs, rs).reshape(P, K, d, n, n, n)))
    omega = [np.einsum("pab,pkb->pka", Cinv, Z[..., i]) for i in range(d)]

    q = directions.shape[0]
    delta = np.empty((P, q))
    ito = np.empty((P, q))
    traces = np.empty((P, q, K)) if return_trace else None
    for a, xi in enumerate(directions):
        eta = Cinv @ xi
        u = np.einsum("pkad,pa->pkd", Z, eta)
        S_eta = np.einsum("pkab,pb->pka", S, eta)
        y = np.einsum("pkab,pkb->pka", Jk, S_eta)
        Q1 = Jc @ np.einsum("pkaqr,pkq->pkar", T, y) @ Jk
        zeta = np.einsum("pkba,pb->pka", Jc, eta)
        N = np.swapaxes(Jk, -1, -2) @ np.einsum("pka,pkaqr->pkqr", zeta, T) @ Jk
        Q2 = S @ N
        psi_eta = np.einsum("pklab,pa->pklb", Psi, eta)
        Q3 = dt[..., None, None] * (np.einsum("pkl,pklab->pkab", u, Psi)
                                    + np.einsum("pkal,pklb->pkab", Z, psi_eta))
        R = _suffix(Q3 - Q1 - Q2, include_self=False)
        tr = np.zeros((P, K))
        for i in range(d):
            w = Z[..., i]
            om = omega[i]
            Pi = Psi[:, :, i]
            first = -np.einsum("pa,pkab,pkb->pk", eta, Pi, w)
            s = (-np.einsum("pka,pkab,pkb->pk", om, Pi, S_eta)
                 - np.einsum("pka,pkab,pkb->pk", om, S, psi_eta[:, :, i])
                 + np.einsum("pka,pkab,pkb->pk", om, R, w))
            tr += first - s
        ito[:, a] = np.einsum("pkd,pkd->p", u, batch.dW)
        delta[:, a] = ito[:, a] - np.sum(tr * dt, axis=1)
        if return_trace:
            traces[:, a] = tr
    delta[rejected] = np.nan
    out = {"delta": delta, "ito": ito, "rejected": rejected, "lam_min": lam_min, "condition": cond}
    if return_trace:
        out["trace"] = traces
    return out


def skorohod_trace(model: SwitchingModel, path: StatePath, xi) -> np.ndarray:
    """Per-cell sums ``sum_i d u_k^i / d dW_k^i`` for one path (fast route)."""
    batch = path.as_batch()
    res = skorohod_batch(model, batch, batch_flows(model, batch), _unit(xi, model.n)[None],
                         cond_max=np.inf, return_trace=True)
    return res["trace"][0, 0]


def bismut_delta(model: SwitchingModel, path: StatePath, xi, cond_max: float = COND_MAX) -> float:
    batch = path.as_batch()
    res = skorohod_batch(model, batch, batch_flows(model, batch), _unit(xi, model.n)[None], cond_max)
    if res["rejected"][0]:
        raise IllConditionedError("Malliavin matrix is ill conditioned", lam_min=float(res["lam_min"][0]),
                                  condition=float(res["condition"][0]))
    return float(res["delta"][0, 0])


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientEstimate:
    value: np.ndarray       # (q,) one entry per direction
    stderr: np.ndarray
    n_paths: int
    estimator: str
    directions: np.ndarray  # (q, n)
    rejected_paths: int = 0
    seed: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def rows(self):
        for c in range(self.value.size):
            yield (self.estimator, c, float(self.value[c]), float(self.stderr[c]), self.n_paths,
                   self.rejected_paths, self.seed)

    def to_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(["estimator", "component", "value", "stderr", "n_paths", "rejected_paths", "seed"])
            for r in self.rows():
                w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), r[4], r[5], r[6]])


def _summarise(per_path, rejected, estimator, directions, seed, **extra):
    """``per_path`` is ``(P, q)``; rejected rows are counted and left out."""
    keep = ~rejected
    if not np.any(keep):
        raise AllPathsRejectedError(f"all {rejected.size} paths rejected for conditioning")
    vals, errs = [], []
    for c in range(per_path.shape[1]):
        m, s = mean_stderr(per_path[keep, c])
        vals.append(m)
        errs.append(s)
    return GradientEstimate(value=np.array(vals), stderr=np.array(errs), n_paths=int(rejected.size),
                            estimator=estimator, directions=directions,
                            rejected_paths=int(np.count_nonzero(rejected)), seed=seed, extra=extra)


def _run(model, n_paths, dt, t, chunk_size, workers, per_chunk):
    n_cells = int(np.ceil(t / dt)) + 1
    size = chunk_size or auto_chunk(model.n, model.d, n_cells)
    return map_chunks(per_chunk, chunks(n_paths, size), workers)


def gradient_estimate(model: SwitchingModel, x, alpha: int, t: float, f, xi=None,
                      n_paths: int = 10_000, dt: float = 1e-3, seed: int = 0,
                      method: str = "holding-times", cond_max: float = COND_MAX, workers: int = 1,
                      chunk_size: int | None = None):
    """Monte Carlo mean of ``f(X_t, a_t) delta(u)``; ``xi=None`` runs every axis.

    ``f`` may also be a mapping of names to functionals, in which case every
    functional is weighted by the same paths and a dict of estimates is
    returned.
    """
    dirs = _directions(xi, model.n)
    named = dict(f) if isinstance(f, Mapping) else {"f": f}

    def work(ids):
        batch = simulate_batch(model, x, alpha, t, dt, ids, seed, method)
        res = skorohod_batch(model, batch, batch_flows(model, batch), dirs, cond_max)
        vals = {k: np.asarray(g(batch.x_end, batch.final_regime), dtype=float)[:, None] * res["delta"]
                for k, g in named.items()}
        return vals, res["rejected"], np.abs(res["delta"])

    parts = _run(model, n_paths, dt, t, chunk_size, workers, work)
    rejected = np.concatenate([p[1] for p in parts])
    abs_delta = np.concatenate([p[2] for p in parts])
    keep = ~rejected
    mean_abs = np.array([mean_stderr(abs_delta[keep, c])[0] for c in range(dirs.shape[0])]) \
        if np.any(keep) else np.array([])
    out = {k: _summarise(np.concatenate([p[0][k] for p in parts]), rejected, "bismut", dirs, seed,
                         mean_abs_delta=mean_abs)
           for k in named}
    return out if isinstance(f, Mapping) else out["f"]


def pathwise_gradient(model: SwitchingModel, x, alpha: int, t: float, f: Functional, xi=None,
                      n_paths: int = 10_000, dt: float = 1e-3, seed: int = 0,
                      method: str = "holding-times", workers: int = 1,
                      chunk_size: int | None = None) -> GradientEstimate:
    """Monte Carlo mean of ``grad f(X_t, a_t) J_{0,t} xi``."""
    if f.grad is None:
        raise ValueError("pathwise estimator needs a differentiable functional")
    dirs = _directions(xi, model.n)

    def work(ids):
        batch = simulate_batch(model, x, alpha, t, dt, ids, seed, method)
        JT = batch_flows(model, batch).J[:, -1]
        g = np.asarray(f.grad(batch.x_end, batch.final_regime), dtype=float)
        return np.einsum("pa,pab,qb->pq", g, JT, dirs)

    per_path = np.concatenate(_run(model, n_paths, dt, t, chunk_size, workers, work))
    return _summarise(per_path, np.zeros(per_path.shape[0], bool), "pathwise", dirs, seed)


def finite_difference_gradient(model: SwitchingModel, x, alpha: int, t: float, f: Functional, xi=None,
                               bump: float = 1e-3, n_paths: int = 10_000, dt: float = 1e-3,
                               seed: int = 0, method: str = "holding-times", workers: int = 1,
                               chunk_size: int | None = None) -> GradientEstimate:
    """Symmetric difference quotient with common chains and increments for both bumps."""
    if bump <= 0:
        raise ValueError("bump must be positive")
    dirs = _directions(xi, model.n)
    x = np.asarray(x, dtype=float).reshape(model.n)

    def work(ids):
        base = simulate_batch(model, x, alpha, t, dt, ids, seed, method)
        out = np.empty((base.size, dirs.shape[0]))
        for c, e in enumerate(dirs):
            up = base.with_initial(model, x + bump * e)
            dn = base.with_initial(model, x - bump * e)
            fu = np.asarray(f(up.x_end, up.final_regime), dtype=float)
            fd = np.asarray(f(dn.x_end, dn.final_regime), dtype=float)
            out[:, c] = (fu - fd) / (2 * bump)
        return out

    per_path = np.concatenate(_run(model, n_paths, dt, t, chunk_size, workers, work))
    return _summarise(per_path, np.zeros(per_path.shape[0], bool), "finite-difference", dirs, seed,
                      bump=bump)


@dataclass(frozen=True)
class FellerProbe:
    offsets: np.ndarray
    differences: np.ndarray  # signed mean of f(X_t(y)) - f(X_t(x))
    stderr: np.ndarray
    slope: float
    slope_stderr: float
    n_paths: int
    seed: int

    @property
    def abs_differences(self) -> np.ndarray:
        return np.abs(self.differences)

    def rows(self):
        for o, dv, se in zip(self.offsets, self.differences, self.stderr):
            yield float(o), float(abs(dv)), float(se), float(dv / o)

    def to_csv(self, path, header=None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["offset", "abs_difference", "stderr", "slope_estimate"])
            for r in self.rows():
                w.writerow([repr(v) for v in r])
            w.writerow(["fitted_slope", repr(self.slope), repr(self.slope_stderr), ""])


def strong_feller_probe(model: SwitchingModel, x, alpha: int, t: float, f: Functional, offsets,
                        n_paths: int = 10_000, seed: int = 0, dt: float = 1e-3, direction=None,
                        method: str = "holding-times", workers: int = 1,
                        chunk_size: int | None = None) -> FellerProbe:
    """Common-random-number estimates of ``P_t f(y, a) - P_t f(x, a)`` along ``direction``.

    The slope is the least-squares fit through the origin of the signed
    differences against the offsets.
    """
    offsets = np.asarray(offsets, dtype=float)
    if np.any(offsets <= 0) or np.any(np.diff(offsets) >= 0):
        raise ValueError("offsets must be positive and decreasing")
    x = np.asarray(x, dtype=float).reshape(model.n)
    e = np.eye(model.n)[0] if direction is None else _unit(direction, model.n)

    def work(ids):
        base = simulate_batch(model, x, alpha, t, dt, ids, seed, method)
        f0 = np.asarray(f(base.x_end, base.final_regime), dtype=float)
        out = np.empty((base.size, offsets.size))
        for c, o in enumerate(offsets):
            moved = base.with_initial(model, x + o * e)
            out[:, c] = np.asarray(f(moved.x_end, moved.final_regime), dtype=float) - f0
        return out

    diffs = np.concatenate(_run(model, n_paths, dt, t, chunk_size, workers, work))
    means, errs = zip(*(mean_stderr(diffs[:, c]) for c in range(offsets.size)))
    slope_path = diffs @ offsets / np.dot(offsets, offsets)
    slope, slope_err = mean_stderr(slope_path)
    return FellerProbe(offsets=offsets, differences=np.array(means), stderr=np.array(errs), slope=slope,
                       slope_stderr=slope_err, n_paths=n_paths, seed=seed)
