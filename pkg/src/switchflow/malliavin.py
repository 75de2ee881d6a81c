"""Pathwise Malliavin quantities on a simulated grid.

Conventions
-----------
The discrete derivative of a path functional at cell ``k`` is its
sensitivity to the increment ``dW_k``.  For the Euler state this is

    D_k X_{t_j} = J[j] J[k+1]^{-1} sigma(X_k, a_k),    k < j,

where ``J`` is the Euler flow ``J[k+1] = A_k J[k]`` with step matrix
``A_k = I + grad b dt_k + sum_i grad sigma_i dW_k^i``.  The matrix
``J[k+1]^{-1}`` (``FlowBundle.cell_inverse``) is the exact inverse of the
discrete flow at the right end of cell ``k``; with it the grid identities
(Riemann sums of the kernel against ``h`` reproduce the directional
derivative, ``M = J C J^T``, bump tests on ``dW_k``) hold to rounding error.
The Euler discretisation of the inverse-flow SDE is computed alongside as
``FlowBundle.Jinv`` and agrees with the exact inverse to ``O(dt)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import SwitchingModel
from .paths import DirectionField, PathBatch, StatePath


# ---------------------------------------------------------------------------
# batched flow engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchFlows:
    """Per-cell coefficient derivatives and flows for a :class:`PathBatch`."""

    sigma: np.ndarray        # (P, K, n, d) at left cell points
    grad_b: np.ndarray       # (P, K, n, n)
    grad_sigma: np.ndarray   # (P, K, d, n, n)
    step: np.ndarray         # (P, K, n, n) Euler step matrices A_k
    J: np.ndarray            # (P, K+1, n, n)
    cell_inverse: np.ndarray  # (P, K, n, n) = inv(J[k+1])
    Jinv: np.ndarray | None = None  # (P, K+1, n, n) Euler inverse flow

    @property
    def kernel(self) -> np.ndarray:
        """Reduced kernel ``Z_k = J[k+1]^{-1} sigma_k``, shape ``(P, K, n, d)``."""
        return self.cell_inverse @ self.sigma


def _cells(model, batch):
    P, K = batch.widths.shape
    xs = batch.x[:, :K].reshape(P * K, model.n)
    rs = batch.regimes.reshape(P * K)
    return P, K, xs, rs


def batch_flows(model: SwitchingModel, batch: PathBatch, euler_inverse: bool = False) -> BatchFlows:
    P, K, xs, rs = _cells(model, batch)
    n, d = model.n, model.d
    sig = model.sigma(xs, rs).reshape(P, K, n, d)
    gb = model.grad_b(xs, rs).reshape(P, K, n, n)
    gs = model.grad_sigma(xs, rs).reshape(P, K, d, n, n)
    eye = np.eye(n)
    dt = batch.widths[..., None, None]
    noise_part = np.einsum("pkl,pklij->pkij", batch.dW, gs)
    A = eye + gb * dt + noise_part
    J = np.empty((P, K + 1, n, n))
    J[:, 0] = eye
    for k in range(K):
        J[:, k + 1] = A[:, k] @ J[:, k]
    Jinv = None
    if euler_inverse:
        ito = np.einsum("pklij,pkljm->pkim", gs, gs)
        Binv = eye - (gb - ito) * dt - noise_part
        Jinv = np.empty_like(J)
        Jinv[:, 0] = eye
        for k in range(K):
            Jinv[:, k + 1] = Jinv[:, k] @ Binv[:, k]
    return BatchFlows(sigma=sig, grad_b=gb, grad_sigma=gs, step=A, J=J,
                      cell_inverse=np.linalg.inv(J[:, 1:]), Jinv=Jinv)


def batch_reduced_matrix(batch: PathBatch, flows: BatchFlows) -> np.ndarray:
    """Reduced Malliavin matrices at ``t_end``, shape ``(P, n, n)``."""
    Z = flows.kernel
    return np.einsum("pk,pkad,pkbd->pab", batch.widths, Z, Z)


def batch_malliavin_matrix(batch: PathBatch, flows: BatchFlows, C=None) -> np.ndarray:
    C = batch_reduced_matrix(batch, flows) if C is None else C
    JT = flows.J[:, -1]
    return JT @ C @ np.swapaxes(JT, -1, -2)


# ---------------------------------------------------------------------------
# single-path types and operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowBundle:
    """Jacobian flow of one path and both versions of its inverse.

    ``sigma`` holds the diffusion matrix at every node (the last node uses
    the regime at ``t_end``).
    """

    J: np.ndarray             # (K+1, n, n)
    Jinv: np.ndarray          # (K+1, n, n)
    cell_inverse: np.ndarray  # (K, n, n)
    sigma: np.ndarray         # (K+1, n, d)
    step: np.ndarray          # (K, n, n)
    widths: np.ndarray        # (K,)

    def transfer(self, s_index: int, t_index: int) -> np.ndarray:
        """``J_{s,t} = J[t] J[s]^{-1}`` on the grid."""
        return self.J[t_index] @ np.linalg.inv(self.J[s_index])

    def product_error(self) -> np.ndarray:
        """``||J[k] Jinv[k] - I||_2`` at each node."""
        eye = np.eye(self.J.shape[-1])
        return np.linalg.norm(self.J @ self.Jinv - eye, ord=2, axis=(-2, -1))

    def to_csv(self, path) -> None:
        n = self.J.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            names = [f"J{i + 1}{j + 1}" for i in range(n) for j in range(n)]
            w.writerow(["node"] + names + [f"inv_{c}" for c in names])
            for k in range(self.J.shape[0]):
                w.writerow([k] + [repr(float(v)) for v in self.J[k].ravel()]
                           + [repr(float(v)) for v in self.Jinv[k].ravel()])


def flow_bundle(model: SwitchingModel, path: StatePath) -> FlowBundle:
    bf = batch_flows(model, path.as_batch(), euler_inverse=True)
    g = path.grid
    sig_end = model.sigma(path.x[-1][None], np.array([g.final_regime]))[0]
    sigma = np.concatenate([bf.sigma[0], sig_end[None]])
    return FlowBundle(J=bf.J[0], Jinv=bf.Jinv[0], cell_inverse=bf.cell_inverse[0], sigma=sigma,
                      step=bf.step[0], widths=g.widths)


def jacobian_flow(model: SwitchingModel, path: StatePath, start: int = 0) -> np.ndarray:
    """Euler solution of the first-variation equation; ``J[k] = I`` for ``k <= start``.

    A non-zero ``start`` gives ``J_{t_start, t_k}`` driven by the same increments.
    """
    bf = batch_flows(model, path.as_batch())
    A = bf.step[0]
    n = model.n
    J = np.empty((A.shape[0] + 1, n, n))
    J[: start + 1] = np.eye(n)
    for k in range(start, A.shape[0]):
        J[k + 1] = A[k] @ J[k]
    return J


def inverse_jacobian_flow(model: SwitchingModel, path: StatePath) -> np.ndarray:
    """Euler solution of the inverse-flow SDE, Ito correction included in the drift."""
    return batch_flows(model, path.as_batch(), euler_inverse=True).Jinv[0]


def directional_derivative(model: SwitchingModel, path: StatePath, h: DirectionField) -> np.ndarray:
    """``D^h X`` at every node from the linearised SDE forced by ``sigma h``."""
    batch = path.as_batch()
    P, K, xs, rs = _cells(model, batch)
    if h.h.shape != (K, model.d):
        raise ValueError("direction does not match the path grid")
    gb = model.grad_b(xs, rs)
    gs = model.grad_sigma(xs, rs)
    sig = model.sigma(xs, rs)
    dt = path.grid.widths
    out = np.zeros((K + 1, model.n))
    for k in range(K):
        y = out[k]
        nxt = y + gb[k] @ y * dt[k] + np.einsum("l,lij,j->i", path.dW[k], gs[k], y)
        out[k + 1] = nxt + sig[k] @ h.h[k] * dt[k]
    return out


def malliavin_derivative(path: StatePath, flows: FlowBundle, s_index: int, t_index: int) -> np.ndarray:
    """``D_s X_t`` as an ``n x d`` matrix.

    For ``s < t`` this is the sensitivity of ``X_t`` to the increment of the
    cell starting at ``s``; ``s = t`` gives ``sigma(X_t, a_t)`` and ``s > t``
    gives zero.
    """
    K = flows.cell_inverse.shape[0]
    if not (0 <= s_index <= K and 0 <= t_index <= K):
        raise IndexError("node index out of range")
    n, d = flows.sigma.shape[1:]
    if s_index > t_index:
        return np.zeros((n, d))
    if s_index == t_index:
        return flows.sigma[t_index].copy()
    return flows.J[t_index] @ flows.cell_inverse[s_index] @ flows.sigma[s_index]


def kernel_matrix(flows: FlowBundle, t_index: int | None = None) -> np.ndarray:
    """All ``D_k X_t`` for cells ``k < t``, shape ``(t, n, d)``."""
    K = flows.cell_inverse.shape[0]
    t_index = K if t_index is None else t_index
    return flows.J[t_index] @ flows.cell_inverse[:t_index] @ flows.sigma[:t_index]


@dataclass(frozen=True)
class SecondDerivativeFlow:
    r_index: int
    i: int
    DJ: np.ndarray  # (K+1, n, n), DJ[k] = derivative of J[k] w.r.t. dW_r^i


def second_derivative_flow(model: SwitchingModel, path: StatePath, flows: FlowBundle,
                           r_index: int, i: int) -> SecondDerivativeFlow:
    """Derivative of the flow ``J_{0, t_k}`` with respect to ``dW_r^i``.

    Zero up to node ``r``; at ``r + 1`` it equals ``grad sigma_i(X_r) J[r]``,
    and afterwards follows the linear recursion driven by the second
    derivatives of the coefficients along ``D_r^i X``.
    """
    model.require_hessians()
    K = flows.cell_inverse.shape[0]
    n = model.n
    if not 0 <= r_index < K:
        raise IndexError("cell index out of range")
    g = path.grid
    xs = path.x[:K]
    rs = g.regime_per_cell
    gs_r = model.grad_sigma(xs[r_index][None], rs[r_index:r_index + 1])[0, i]
    hb = model.hess_b(xs, rs)
    hs = model.hess_sigma(xs, rs)
    T = hb * g.widths[:, None, None, None] + np.einsum("kl,klpqr->kpqr", path.dW, hs)
    DJ = np.zeros((K + 1, n, n))
    DJ[r_index + 1] = gs_r @ flows.J[r_index]
    # D_r^i X at node j > r
    w = flows.cell_inverse[r_index] @ flows.sigma[r_index][:, i]
    for j in range(r_index + 1, K):
        y = flows.J[j] @ w
        DJ[j + 1] = flows.step[j] @ DJ[j] + np.einsum("pqr,r->pq", T[j], y) @ flows.J[j]
    return SecondDerivativeFlow(r_index=r_index, i=i, DJ=DJ)


@dataclass(frozen=True)
class MalliavinMatrix:
    M: np.ndarray
    C: np.ndarray
    t: float


def malliavin_matrix(path: StatePath, flows: FlowBundle, t_index: int | None = None,
                     inverse: str = "discrete") -> MalliavinMatrix:
    """Malliavin matrix ``M_t`` and reduced matrix ``C_t`` by left-point quadrature.

    ``inverse="discrete"`` (default) rotates ``sigma`` with the exact inverse
    of the discrete flow; ``"euler"`` uses the Euler inverse-flow solution.
    Both satisfy ``M = J_t C J_t^T`` exactly at grid level.
    """
    K = flows.cell_inverse.shape[0]
    t_index = K if t_index is None else t_index
    if inverse == "discrete":
        rot = flows.cell_inverse[:t_index]
    elif inverse == "euler":
        rot = flows.Jinv[:t_index]
    else:
        raise ValueError(f"unknown inverse {inverse!r}")
    dt = flows.widths[:t_index]
    Z = rot @ flows.sigma[:t_index]
    D = flows.J[t_index] @ Z
    C = np.einsum("k,kad,kbd->ab", dt, Z, Z)
    M = np.einsum("k,kad,kbd->ab", dt, D, D)
    return MalliavinMatrix(M=M, C=C, t=float(path.grid.nodes[t_index]))
