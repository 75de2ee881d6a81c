"""Euler-Maruyama simulation on jump-aligned grids.

Every chain jump time is a grid node, so the regime is constant on each
cell and the scheme

    x[k+1] = x[k] + b(x[k], a_k) dt_k + sigma(x[k], a_k) dW_k

evaluates the coefficients with the regime of the cell.  The increments are
kept: perturbed paths, flows and bump tests all reuse the same noise.

Batches
-------
Monte Carlo work runs on a :class:`PathBatch`, which stacks ``P`` paths of
possibly different lengths.  Shorter paths are padded at the end with
zero-width cells carrying zero increments; such cells leave the state, the
flows and every quadrature untouched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .chain import ChainPath, simulate_chain
from .model import SwitchingModel
from ._rng import as_generator, chain_generator, noise_generator

MERGE_TOL = 1e-14


class SimulationError(RuntimeError):
    """Non-finite state encountered; carries the step and path index."""

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray            # (K+1,)
    regime_per_cell: np.ndarray  # (K,)
    final_regime: int            # regime at the last node

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    def regime_at_nodes(self) -> np.ndarray:
        return np.append(self.regime_per_cell, self.final_regime)

    def index_of(self, t: float) -> int:
        """Index of the node closest to ``t``."""
        return int(np.argmin(np.abs(self.nodes - t)))


def make_grid(t_end: float, dt: float, chain: ChainPath) -> TimeGrid:
    """Uniform nodes at multiples of ``dt`` plus every jump time up to ``t_end``.

    Jump times within ``1e-14`` of an existing node are merged into it.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > t_end:
        raise ValueError("dt must not exceed t_end")
    k = int(np.floor(t_end / dt + 1e-9))
    nodes = np.arange(k + 1) * dt
    if t_end - nodes[-1] > MERGE_TOL:
        nodes = np.append(nodes, t_end)
    else:
        nodes[-1] = t_end
    jumps = np.asarray([s for s in chain.jump_times if s <= t_end], dtype=float)
    if jumps.size:
        pos = np.searchsorted(nodes, jumps)
        lo = np.abs(jumps - nodes[np.clip(pos - 1, 0, nodes.size - 1)])
        hi = np.abs(nodes[np.clip(pos, 0, nodes.size - 1)] - jumps)
        fresh = jumps[np.minimum(lo, hi) > MERGE_TOL]
        if fresh.size:
            nodes = np.sort(np.concatenate([nodes, fresh]))
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    if chain.jump_times:
        table = np.array((chain.initial,) + tuple(chain.jump_targets), dtype=int)
        regimes = table[np.searchsorted(np.asarray(chain.jump_times), mids, side="right")]
    else:
        regimes = np.full(mids.size, chain.initial, dtype=int)
    return TimeGrid(nodes=nodes, regime_per_cell=regimes, final_regime=chain.regime_at(t_end))


def _check_aligned(grid: TimeGrid, chain: ChainPath) -> None:
    for s in chain.jump_times:
        if s <= grid.t_end and np.min(np.abs(grid.nodes - s)) > MERGE_TOL:
            raise ValueError(f"grid is not aligned with the chain: jump at {s!r} is not a node")


@dataclass(frozen=True)
class DirectionField:
    """Piecewise-constant direction ``h`` with one value per cell, shape ``(K, d)``."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 2 or not np.all(np.isfinite(h)):
            raise ValueError("direction must be a finite (K, d) array")
        object.__setattr__(self, "h", h)

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "DirectionField":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(value, (grid.n_cells, 1)))


@dataclass(frozen=True)
class StatePath:
    grid: TimeGrid
    x: np.ndarray   # (K+1, n)
    dW: np.ndarray  # (K, d)

    @property
    def x_end(self) -> np.ndarray:
        return self.x[-1]

    def brownian(self) -> np.ndarray:
        """Brownian path at the nodes, ``W_{t_k}``, shape ``(K+1, d)``."""
        return np.vstack([np.zeros(self.dW.shape[1]), np.cumsum(self.dW, axis=0)])

    def as_batch(self) -> "PathBatch":
        g = self.grid
        return PathBatch(t_end=g.t_end, widths=g.widths[None], regimes=g.regime_per_cell[None],
                         final_regime=np.array([g.final_regime]), dW=self.dW[None], x=self.x[None],
                         n_cells=np.array([g.n_cells]), indices=np.array([0]))

    def to_csv(self, path) -> None:
        regs = self.grid.regime_at_nodes()
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "regime"] + [f"x{i + 1}" for i in range(n)])
            for k, t in enumerate(self.grid.nodes):
                w.writerow([repr(float(t)), int(regs[k])] + [repr(float(v)) for v in self.x[k]])


@dataclass(frozen=True)
class PathBatch:
    """``P`` paths padded to a common cell count ``K``."""

    t_end: float
    widths: np.ndarray        # (P, K)
    regimes: np.ndarray       # (P, K)
    final_regime: np.ndarray  # (P,)
    dW: np.ndarray            # (P, K, d)
    x: np.ndarray             # (P, K+1, n)
    n_cells: np.ndarray       # (P,) unpadded cell counts
    indices: np.ndarray       # (P,) global path ids
    chains: tuple = ()

    @property
    def size(self) -> int:
        return self.widths.shape[0]

    @property
    def x_end(self) -> np.ndarray:
        return self.x[:, -1]

    def path(self, i: int) -> StatePath:
        K = int(self.n_cells[i])
        nodes = np.concatenate([[0.0], np.cumsum(self.widths[i, :K])])
        nodes[-1] = self.t_end
        grid = TimeGrid(nodes=nodes, regime_per_cell=self.regimes[i, :K].copy(),
                        final_regime=int(self.final_regime[i]))
        return StatePath(grid=grid, x=self.x[i, :K + 1].copy(), dW=self.dW[i, :K].copy())

    def with_initial(self, model: SwitchingModel, x0) -> "PathBatch":
        """Same chains and increments, new initial state (common random numbers)."""
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (self.size, model.n))
        x = euler_batch(model, x0, self.widths, self.regimes, self.dW, path_ids=self.indices)
        return replace(self, x=x)


def euler_batch(model: SwitchingModel, x0, widths, regimes, dW, h=None, eps=0.0, path_ids=None):
    """Vectorised Euler recursion over a batch; returns states ``(P, K+1, n)``.

    With a direction ``h`` of shape ``(P, K, d)`` the noise is shifted by
    ``eps * h dt``, i.e. the extra drift ``eps sigma h`` is added per cell.
    """
    P, K = widths.shape
    x = np.empty((P, K + 1, model.n))
    x[:, 0] = x0
    for k in range(K):
        xk = x[:, k]
        r = regimes[:, k]
        sig = model.sigma(xk, r)
        nxt = xk + model.b(xk, r) * widths[:, k, None] + np.einsum("pij,pj->pi", sig, dW[:, k])
        if h is not None:
            nxt = nxt + eps * np.einsum("pij,pj->pi", sig, h[:, k]) * widths[:, k, None]
        if not np.all(np.isfinite(nxt)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(nxt), axis=1))[0])
            pid = None if path_ids is None else int(path_ids[bad])
            raise SimulationError(f"non-finite state at step {k + 1} (path {pid})", step=k + 1, path=pid)
        x[:, k + 1] = nxt
    return x


def draw_increments(grid: TimeGrid, d: int, rng) -> np.ndarray:
    z = rng.standard_normal((grid.n_cells, d))
    return z * np.sqrt(grid.widths)[:, None]


def simulate_path(model: SwitchingModel, chain: ChainPath, grid: TimeGrid, x0, seed=None,
                  dW=None) -> StatePath:
    """Simulate one path; ``dW`` may be supplied instead of a seed."""
    _check_aligned(grid, chain)
    x0 = np.asarray(x0, dtype=float).reshape(model.n)
    if dW is None:
        dW = draw_increments(grid, model.d, as_generator(seed))
    dW = np.asarray(dW, dtype=float).reshape(grid.n_cells, model.d)
    x = euler_batch(model, x0[None], grid.widths[None], grid.regime_per_cell[None], dW[None])
    return StatePath(grid=grid, x=x[0], dW=dW)


def simulate_perturbed_path(model: SwitchingModel, chain: ChainPath, grid: TimeGrid, base: StatePath,
                            h: DirectionField, eps: float) -> StatePath:
    """Same increments as ``base`` with ``W`` replaced by ``W + eps int h ds``."""
    if h.h.shape != (grid.n_cells, model.d) or base.grid.n_cells != grid.n_cells:
        raise ValueError("base path, direction and grid must share the same cells")
    _check_aligned(grid, chain)
    x = euler_batch(model, base.x[0][None], grid.widths[None], grid.regime_per_cell[None],
                    base.dW[None], h=h.h[None], eps=eps)
    return StatePath(grid=grid, x=x[0], dW=base.dW)


def pack_batch(model: SwitchingModel, x0, t_end: float, grids: Sequence[TimeGrid],
               increments: Sequence[np.ndarray], indices, chains=()) -> PathBatch:
    P = len(grids)
    K = max(g.n_cells for g in grids)
    widths = np.zeros((P, K))
    regimes = np.zeros((P, K), dtype=int)
    dW = np.zeros((P, K, model.d))
    for i, (g, inc) in enumerate(zip(grids, increments)):
        k = g.n_cells
        widths[i, :k] = g.widths
        regimes[i, :k] = g.regime_per_cell
        regimes[i, k:] = g.final_regime
        dW[i, :k] = inc
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (P, model.n))
    indices = np.asarray(indices)
    x = euler_batch(model, x0, widths, regimes, dW, path_ids=indices)
    return PathBatch(t_end=float(t_end), widths=widths, regimes=regimes,
                     final_regime=np.array([g.final_regime for g in grids]), dW=dW, x=x,
                     n_cells=np.array([g.n_cells for g in grids]), indices=indices,
                     chains=tuple(chains))


def simulate_batch(model: SwitchingModel, x0, alpha0: int, t_end: float, dt: float, indices,
                   seed: int, method: str = "holding-times") -> PathBatch:
    """Simulate the paths with global ids ``indices`` of an experiment seeded by ``seed``."""
    grids, incs, chains = [], [], []
    for p in indices:
        chain = simulate_chain(model.generator, alpha0, t_end, chain_generator(seed, p), method)
        grid = make_grid(t_end, dt, chain)
        grids.append(grid)
        incs.append(draw_increments(grid, model.d, noise_generator(seed, p)))
        chains.append(chain)
    return pack_batch(model, x0, t_end, grids, incs, indices, chains)


def frozen_chain_batch(model: SwitchingModel, x0, chain: ChainPath, dt: float, indices,
                       seed: int) -> PathBatch:
    """Many noise draws on one fixed chain path (conditional-law experiments)."""
    grid = make_grid(chain.t_end, dt, chain)
    incs = [draw_increments(grid, model.d, noise_generator(seed, p)) for p in indices]
    return pack_batch(model, x0, chain.t_end, [grid] * len(incs), incs, indices, [chain] * len(incs))
