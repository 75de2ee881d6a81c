"""Nondegeneracy and density diagnostics.

Spectral summaries of the reduced matrix ``C_t`` and of ``M_t``, small-ball
tail probabilities of ``lambda_min(C_t)``, empirical negative moments of
``det C_t`` and a Gaussian product-kernel density estimate of ``X_t``.
None of these certify anything about the law; they make degeneracy and
heavy tails visible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from ._parallel import auto_chunk, chunks, map_chunks
from ._stats import exact_mean, mean_stderr
from .malliavin import batch_flows, batch_malliavin_matrix, batch_reduced_matrix
from .model import SwitchingModel
from .paths import simulate_batch

DEGENERACY_RTOL = 1e-12


class DegeneracyError(RuntimeError):
    """A path with a singular reduced Malliavin matrix was found."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


@dataclass(frozen=True)
class Table:
    """A small CSV-serialisable result table with a provenance header."""

    columns: tuple[str, ...]
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])

    def header_line(self) -> str:
        keys = ("model", "t", "dt", "n_paths", "seed")
        return "# " + " ".join(f"{k}={self.meta.get(k)}" for k in keys)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.header_line() + "\n")
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


@dataclass(frozen=True)
class NondegeneracySample:
    n_paths: int
    lam_min_C: np.ndarray
    lam_max_C: np.ndarray
    trace_C: np.ndarray
    det_C: np.ndarray
    lam_min_M: np.ndarray
    n: int
    meta: dict = field(default_factory=dict)

    def quantiles(self, qs=(0.0, 0.01, 0.1, 0.5, 0.9, 1.0)) -> dict:
        return {name: np.quantile(getattr(self, name), qs)
                for name in ("lam_min_C", "det_C", "lam_min_M")}

    def degenerate_mask(self, rtol: float = DEGENERACY_RTOL) -> np.ndarray:
        return self.lam_min_C <= rtol * self.trace_C

    def table(self) -> Table:
        rows = [(i, float(a), float(b), float(c)) for i, (a, b, c) in
                enumerate(zip(self.lam_min_C, self.det_C, self.lam_min_M))]
        return Table(("path", "lambda_min_C", "det_C", "lambda_min_M"), rows, dict(self.meta))

    def to_csv(self, path) -> None:
        self.table().to_csv(path)


def nondegeneracy_sample(model: SwitchingModel, x, alpha: int, t: float, n_paths: int = 10_000,
                         dt: float = 1e-3, seed: int = 0, method: str = "holding-times", workers: int = 1,
                         chunk_size: int | None = None) -> NondegeneracySample:
    size = chunk_size or auto_chunk(model.n, model.d, int(np.ceil(t / dt)) + 1)

    def work(ids):
        batch = simulate_batch(model, x, alpha, t, dt, ids, seed, method)
        flows = batch_flows(model, batch)
        C = batch_reduced_matrix(batch, flows)
        M = batch_malliavin_matrix(batch, flows, C)
        ev = np.linalg.eigvalsh(C)
        return (ev[:, 0], ev[:, -1], np.trace(C, axis1=1, axis2=2), np.linalg.det(C),
                np.linalg.eigvalsh(M)[:, 0])

    parts = map_chunks(work, chunks(n_paths, size), workers)
    cols = [np.concatenate([p[k] for p in parts]) for k in range(5)]
    meta = {"model": model.name, "t": t, "dt": dt, "n_paths": n_paths, "seed": seed}
    return NondegeneracySample(n_paths=n_paths, lam_min_C=cols[0], lam_max_C=cols[1], trace_C=cols[2],
                               det_C=cols[3], lam_min_M=cols[4], n=model.n, meta=meta)


def small_ball_probe(sample: NondegeneracySample, eps_list, confidence: float = 0.95) -> Table:
    """Empirical ``P(lambda_min(C_t) <= eps)`` with Wilson intervals."""
    eps = np.asarray(eps_list, dtype=float)
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps_list must be strictly decreasing")
    lam = sample.lam_min_C
    N = lam.size
    rows = []
    for e in eps:
        k = int(np.count_nonzero(lam <= e))
        ci = binomtest(k, N).proportion_ci(confidence, method="wilson")
        rows.append((float(e), k / N, float(ci.low), float(ci.high)))
    return Table(("eps", "probability", "ci_low", "ci_high"), rows, dict(sample.meta))


def negative_moment_estimate(sample: NondegeneracySample, p_list, dominance: float = 0.5) -> Table:
    """Sample mean of ``det(C_t)^{-p}``; flags a row when one path carries more than half the sum."""
    det = sample.det_C
    bad = np.flatnonzero((det <= 0) | sample.degenerate_mask())
    if bad.size:
        raise DegeneracyError(f"singular reduced Malliavin matrix on {bad.size} path(s), first {int(bad[0])}",
                              path=int(bad[0]))
    rows = []
    for p in p_list:
        vals = det ** (-float(p))
        m, se = mean_stderr(vals)
        share = float(np.max(vals) / (m * vals.size))
        rows.append((float(p), m, se, share, bool(share > dominance)))
    return Table(("p", "moment", "stderr", "max_share", "unstable"), rows, dict(sample.meta))


def silverman_bandwidth(samples) -> np.ndarray:
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    N, n = x.shape
    sd = np.std(x, axis=0, ddof=1) if N > 1 else np.ones(n)
    sd = np.where(sd > 0, sd, 1.0)
    return sd * (4.0 / ((n + 2) * N)) ** (1.0 / (n + 4))


def kernel_density(samples, bandwidth=None, eval_points=None, block: int = 256) -> np.ndarray:
    """Gaussian product-kernel density estimate at ``eval_points``.

    ``bandwidth`` is a scalar or one value per coordinate; ``None`` uses
    Silverman's rule per coordinate.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    x = x.reshape(x.shape[0], -1)
    N, n = x.shape
    h = silverman_bandwidth(x) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, float), (n,))
    if np.any(h <= 0):
        raise ValueError("bandwidth must be positive")
    y = np.asarray(eval_points, dtype=float).reshape(-1, n)
    norm = N * np.prod(h) * (2 * np.pi) ** (n / 2)
    out = np.empty(y.shape[0])
    for s in range(0, y.shape[0], block):
        z = (y[s:s + block, None, :] - x[None]) / h
        out[s:s + block] = np.exp(-0.5 * np.sum(z * z, axis=-1)).sum(axis=1) / norm
    return out


def kde_bootstrap_stderr(samples, eval_points, bandwidth=None, n_boot: int = 50, seed: int = 0) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    x = x.reshape(x.shape[0], -1)
    h = silverman_bandwidth(x) if bandwidth is None else bandwidth
    rng = np.random.default_rng(seed)
    reps = np.array([kernel_density(x[rng.integers(0, x.shape[0], x.shape[0])], h, eval_points)
                     for _ in range(n_boot)])
    return reps.std(axis=0, ddof=1)


def density_table(samples, eval_points, bandwidth=None, n_boot: int = 0, seed: int = 0, meta=None) -> Table:
    pts = np.asarray(eval_points, dtype=float)
    pts = pts.reshape(pts.shape[0], -1)
    dens = kernel_density(samples, bandwidth, pts)
    err = kde_bootstrap_stderr(samples, pts, bandwidth, n_boot, seed) if n_boot > 1 else np.full(dens.size, np.nan)
    cols = tuple(f"x{i + 1}" for i in range(pts.shape[1])) + ("density", "bootstrap_stderr")
    rows = [tuple(float(v) for v in p) + (float(dv), float(e)) for p, dv, e in zip(pts, dens, err)]
    return Table(cols, rows, dict(meta or {}))


def terminal_states(model: SwitchingModel, x, alpha: int, t: float, n_paths: int, dt: float = 1e-3,
                    seed: int = 0, method: str = "holding-times", workers: int = 1) -> np.ndarray:
    size = auto_chunk(model.n, model.d, int(np.ceil(t / dt)) + 1)
    parts = map_chunks(lambda ids: simulate_batch(model, x, alpha, t, dt, ids, seed, method).x_end,
                       chunks(n_paths, size), workers)
    return np.concatenate(parts)


def riemann_mass(values, eval_points) -> float:
    """Tensor-grid Riemann mass of density values on a uniform 1-D grid."""
    pts = np.asarray(eval_points, dtype=float).ravel()
    return exact_mean(values) * (pts[-1] - pts[0]) * pts.size / (pts.size - 1)
