"""Invariant suite behind ``switchflow validate-all``.

Each check runs at a coarse scale on every built-in model and yields one
row ``(check, model, value, tolerance, passed)``.
"""

from __future__ import annotations

import numpy as np

from .bismut import (COND_MAX, bismut_weight, discrete_skorohod, gradient_estimate, skorohod_trace,
                     weight_malliavin_derivative)
from .chain import simulate_chain, transition_matrix
from .density import Table
from .functionals import make_functional
from .hormander import uhc_check
from .malliavin import directional_derivative, flow_bundle, kernel_matrix, malliavin_matrix
from .model import BUILTIN_MODELS, builtin_model, check_derivative_oracles, random_probes
from .paths import DirectionField, make_grid, simulate_path

UHC_EXPECT = {
    "switching-ou": [(0, True)],
    "elliptic-nd": [(0, True)],
    "hypoelliptic-2d": [(0, False), (1, True)],
    "degenerate-2d": [(0, False), (1, False), (2, False), (3, False)],
}


def _rel(a, b):
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def _one_path(model, seed, t=0.5, dt=0.01):
    x0 = np.full(model.n, 0.5)
    chain = simulate_chain(model.generator, 0, t, seed=seed)
    grid = make_grid(t, dt, chain)
    return x0, simulate_path(model, chain, grid, x0, seed=seed + 1)


def run_validation(seed: int = 0, workers: int = 1, models=BUILTIN_MODELS) -> Table:
    rows = []

    def add(check, name, value, tol, passed):
        rows.append((check, name, float(value), float(tol), bool(passed)))

    for name in models:
        m = builtin_model(name)
        Q = m.generator
        add("generator", name, max(abs(Q.q.sum(axis=1))), 1e-12, not Q.violations())
        P = transition_matrix(Q, 1.0)
        add("transition-rows", name, float(np.max(np.abs(P.sum(axis=1) - 1))), 1e-12,
            np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12)
        oracle = check_derivative_oracles(m, random_probes(m, 10, seed=seed))
        worst = max(oracle["errors"].values()) if oracle["errors"] else 0.0
        add("derivative-oracles", name, worst, 1e-6, not oracle["failures"])

        x0, path = _one_path(m, seed)
        fl = flow_bundle(m, path)
        err = float(np.max(fl.product_error()))
        add("flow-inverse", name, err, 0.05, err <= 0.05)
        h = DirectionField.constant(path.grid, np.ones(m.d))
        DhX = directional_derivative(m, path, h)[-1]
        riemann = np.einsum("kad,kd,k->a", kernel_matrix(fl), h.h, path.grid.widths)
        r = _rel(riemann, DhX)
        add("riemann-identity", name, r, 1e-6, r <= 1e-6)
        M = malliavin_matrix(path, fl)
        r = _rel(M.M, fl.J[-1] @ M.C @ fl.J[-1].T)
        add("M=JCJ^T", name, r, 1e-8, r <= 1e-8)

        ev = np.linalg.eigvalsh(M.M)
        if ev[0] > 0 and ev[-1] / ev[0] <= COND_MAX:
            xi = np.ones(m.n) / np.sqrt(m.n)
            w = bismut_weight(path, fl, M, xi)
            recon = np.einsum("kad,kd,k->a", kernel_matrix(fl), w.u, path.grid.widths)
            r = _rel(recon, fl.J[-1] @ xi)
            add("weight-reconstruction", name, r, 1e-8, r <= 1e-8)
            fast = skorohod_trace(m, path, xi)
            cells = range(0, path.grid.n_cells, max(1, path.grid.n_cells // 5))
            slow = np.array([weight_malliavin_derivative(m, path, fl, M, xi, k, i)[i]
                             for k in cells for i in range(m.d)]).reshape(len(cells), m.d).sum(axis=1)
            r = float(np.max(np.abs(fast[list(cells)] - slow)) / max(1.0, np.max(np.abs(slow))))
            add("trace-routes", name, r, 1e-8, r <= 1e-8)
            d1 = discrete_skorohod(w, path, fast)
            add("skorohod-finite", name, abs(d1), np.inf, np.isfinite(d1))

            # with f = 1 the estimate is the sample mean of delta, which must vanish
            est = gradient_estimate(m, x0, 0, 0.5, make_functional("constant", {"c": 1.0}), dt=0.02,
                                    n_paths=2000, seed=seed, workers=workers)
            z = float(np.max(np.abs(est.value) / np.where(est.stderr > 0, est.stderr, 1.0)))
            add("mean-zero-divergence", name, z, 4.0, z <= 4.0 and est.rejected_paths == 0)
        else:
            add("singular-malliavin", name, float(ev[0]), 1e-12 * max(ev[-1], 1e-300),
                name == "degenerate-2d" or name not in UHC_EXPECT)

        for j0, expect in UHC_EXPECT.get(name, []):
            rep = uhc_check(m, j0, domain={"count": 30, "seed": seed})
            add(f"uhc-j0={j0}", name, rep.c_hat, rep.c, rep.passed == expect)

    return Table(("check", "model", "value", "tolerance", "passed"), rows,
                 {"model": "zoo", "t": 0.5, "dt": 0.01, "n_paths": 2000, "seed": seed})


def summarise(table: Table) -> tuple[int, int]:
    passed = sum(1 for r in table.rows if r[-1])
    return passed, len(table.rows)

