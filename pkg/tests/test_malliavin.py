import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

import oracles
from switchflow import (BUILTIN_MODELS, ChainPath, DirectionField, MissingDerivativeError, builtin_model,
                        directional_derivative, flow_bundle, inverse_jacobian_flow, jacobian_flow, make_grid,
                        malliavin_derivative, malliavin_matrix, second_derivative_flow, simulate_chain,
                        simulate_path, simulate_perturbed_path)
from switchflow.malliavin import batch_flows, kernel_matrix
from switchflow.paths import simulate_batch

X0 = {"switching-ou": [0.5], "switching-gbm": [1.0], "hypoelliptic-2d": [0.3, -0.2],
      "degenerate-2d": [0.3, -0.2], "elliptic-nd": [0.3, -0.2]}


def one_path(name, seed=0, t=1.0, dt=1e-3, params=None, chain=None):
    m = builtin_model(name, params)
    chain = chain or simulate_chain(m.generator, 0, t, seed=seed)
    grid = make_grid(t, dt, chain)
    return m, chain, grid, simulate_path(m, chain, grid, X0[name], seed=seed + 1000)


def segs(chain, t=1.0):
    return oracles.chain_segments(chain.initial, chain.jump_times, chain.jump_targets, t)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_flows_start_at_identity(name):
    m, _, _, p = one_path(name, dt=0.01)
    fl = flow_bundle(m, p)
    assert np.array_equal(fl.J[0], np.eye(m.n)) and np.array_equal(fl.Jinv[0], np.eye(m.n))


def test_constant_coefficients_identity_flow():
    m, _, _, p = one_path("degenerate-2d", dt=0.01)
    assert np.all(jacobian_flow(m, p) == np.eye(2))


def test_ou_flow_and_inverse_closed_form():
    a = [0.5, 1.0]
    for seed in range(10):
        m, chain, _, p = one_path("switching-ou", seed=seed, params={"a": a})
        exact = oracles.ou_decay(segs(chain), a)
        assert jacobian_flow(m, p)[-1, 0, 0] == pytest.approx(exact, rel=1e-3)
        assert inverse_jacobian_flow(m, p)[-1, 0, 0] == pytest.approx(1 / exact, rel=1e-3)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["elliptic-nd", "switching-gbm", "hypoelliptic-2d"]), st.integers(0, 1000),
       st.floats(0.1, 0.9))
def test_cocycle(name, seed, frac):
    m, _, grid, p = one_path(name, seed=seed, dt=0.01)
    s = int(frac * grid.n_cells)
    J = jacobian_flow(m, p)
    Jst = jacobian_flow(m, p, start=s)
    assert np.linalg.norm(J[-1] - Jst[-1] @ J[s]) <= 1e-10 * max(1.0, np.linalg.norm(J[-1]))


def test_additive_linear_inverse_flow_matches_expm():
    q0 = {"Q": [[0.0, 0.0], [0.0, 0.0]]}
    m, _, grid, p = one_path("hypoelliptic-2d", params=q0, dt=1e-3)
    A = m.grad_b(np.zeros((1, 2)), np.array([0]))[0]
    assert np.linalg.norm(inverse_jacobian_flow(m, p)[-1] - expm(-A)) <= 5e-3


def test_kernel_edge_cases():
    m, _, grid, p = one_path("elliptic-nd", dt=0.01)
    fl = flow_bundle(m, p)
    assert np.all(malliavin_derivative(p, fl, 10, 5) == 0)
    assert np.array_equal(malliavin_derivative(p, fl, 7, 7), fl.sigma[7])
    assert np.array_equal(malliavin_derivative(p, fl, 3, grid.n_cells), kernel_matrix(fl)[3])


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(BUILTIN_MODELS), st.integers(0, 1000))
def test_riemann_sum_identity(name, seed):
    m, _, grid, p = one_path(name, seed=seed, dt=0.01)
    fl = flow_bundle(m, p)
    rng = np.random.default_rng(seed)
    h = DirectionField(rng.normal(size=(grid.n_cells, m.d)))
    DhX = directional_derivative(m, p, h)[-1]
    riemann = np.einsum("kad,kd,k->a", kernel_matrix(fl), h.h, grid.widths)
    assert np.linalg.norm(riemann - DhX) <= 1e-6 * np.linalg.norm(DhX)


def test_zero_diffusion_zero_derivative():
    m, _, grid, p = one_path("switching-ou", params={"s": 0.0}, dt=0.01)
    assert np.all(directional_derivative(m, p, DirectionField.constant(grid, [1.0])) == 0)


def test_ou_directional_derivative_oracle():
    a, s = [1.0, 2.0], [0.5, 1.0]
    for seed in range(5):
        m, chain, grid, p = one_path("switching-ou", seed=seed, params={"a": a, "s": s})
        DhX = directional_derivative(m, p, DirectionField.constant(grid, [1.0]))[-1, 0]
        assert DhX == pytest.approx(oracles.ou_diffusion_weight(segs(chain), a, s), rel=1e-3)


@pytest.mark.parametrize("name", ["switching-gbm", "elliptic-nd"])
def test_perturbation_converges_to_directional_derivative(name):
    m, chain, grid, p = one_path(name, seed=3)
    h = DirectionField.constant(grid, np.ones(m.d))
    DhX = directional_derivative(m, p, h)
    res = [np.max(np.abs((simulate_perturbed_path(m, chain, grid, p, h, e).x - p.x) / e - DhX))
           for e in (1e-3, 5e-4)]
    assert res[0] / res[1] == pytest.approx(2.0, rel=0.15)


def test_second_derivative_flow_vanishes_for_linear_additive():
    m, _, _, p = one_path("hypoelliptic-2d", dt=0.01)
    fl = flow_bundle(m, p)
    assert np.all(second_derivative_flow(m, p, fl, 20, 0).DJ == 0)


def test_second_derivative_flow_gbm_closed_form():
    s = 0.3
    m, _, grid, p = one_path("switching-gbm", params={"s": s, "mu": [0.05, -0.1]}, seed=4)
    fl = flow_bundle(m, p)
    r = grid.n_cells // 3
    sd = second_derivative_flow(m, p, fl, r, 0)
    assert sd.DJ[r + 1] == pytest.approx(s * fl.J[r])
    assert sd.DJ[-1, 0, 0] == pytest.approx(s * fl.J[-1, 0, 0], rel=2e-2)


@pytest.mark.parametrize("name", ["switching-gbm", "elliptic-nd"])
def test_second_derivative_flow_bump_oracle(name):
    m, chain, grid, p = one_path(name, seed=6, dt=0.01)
    fl = flow_bundle(m, p)
    r, eta = grid.n_cells // 2, 1e-5
    for i in range(m.d):
        dW = p.dW.copy()
        dW[r, i] += eta
        bumped = jacobian_flow(m, simulate_path(m, chain, grid, X0[name], dW=dW))
        DJ = second_derivative_flow(m, p, fl, r, i).DJ
        fd = (bumped[-1] - fl.J[-1]) / eta
        assert np.linalg.norm(fd - DJ[-1]) <= 1e-2 * np.linalg.norm(DJ[-1])


def test_second_derivative_needs_hessians():
    from test_model import linear_model
    m = linear_model([[1.0]])
    grid = make_grid(1.0, 0.1, ChainPath(t_end=1.0, initial=0))
    p = simulate_path(m, ChainPath(t_end=1.0, initial=0), grid, [0.0], seed=0)
    with pytest.raises(MissingDerivativeError):
        second_derivative_flow(m, p, flow_bundle(m, p), 0, 0)


def test_brownian_malliavin_matrix_exact():
    m, _, grid, p = one_path("switching-ou", params={"a": 0.0, "s": 0.7}, dt=0.01)
    M = malliavin_matrix(p, flow_bundle(m, p))
    assert M.M[0, 0] == pytest.approx(0.49, rel=1e-13) and M.C[0, 0] == pytest.approx(0.49, rel=1e-13)


def test_ou_reduced_matrix_oracle():
    a, s = [1.0, 2.0], [0.5, 1.0]
    for seed in range(5):
        m, chain, _, p = one_path("switching-ou", seed=seed, params={"a": a, "s": s})
        C = malliavin_matrix(p, flow_bundle(m, p)).C[0, 0]
        assert C == pytest.approx(oracles.ou_reduced_matrix(segs(chain), a, s), rel=1e-2)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(BUILTIN_MODELS), st.integers(0, 1000), st.sampled_from(["discrete", "euler"]))
def test_malliavin_matrix_identities(name, seed, inverse):
    m, _, _, p = one_path(name, seed=seed, dt=0.01)
    fl = flow_bundle(m, p)
    M = malliavin_matrix(p, fl, inverse=inverse)
    J = fl.J[-1]
    assert np.linalg.norm(M.M - J @ M.C @ J.T) <= 1e-8 * np.linalg.norm(M.M)
    for A in (M.M, M.C):
        assert np.linalg.norm(A - A.T) <= 1e-10 * np.linalg.norm(A)
        assert np.linalg.eigvalsh(A).min() >= -1e-10 * np.trace(A)


def test_increment_bump_matches_kernel():
    m, chain, grid, p = one_path("switching-ou", seed=9, dt=0.01)
    fl = flow_bundle(m, p)
    D = kernel_matrix(fl)
    eta = 1e-5
    for k in range(grid.n_cells):
        dW = p.dW.copy()
        dW[k, 0] += eta
        moved = simulate_path(m, chain, grid, X0["switching-ou"], dW=dW).x_end
        assert (moved - p.x_end)[0] / eta == pytest.approx(D[k, 0, 0], rel=1e-2)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_flow_fourth_moments_stable(name):
    m = builtin_model(name)
    batch = simulate_batch(m, X0[name], 0, 1.0, 0.01, np.arange(20_000), seed=8)
    fl = batch_flows(m, batch, euler_inverse=True)
    for A in (fl.J[:, -1], fl.Jinv[:, -1]):
        v = np.linalg.norm(A, axis=(1, 2)) ** 4
        assert np.isfinite(v.mean()) and 0.5 < v.mean() / v[:10_000].mean() < 2.0


def test_flow_csv(tmp_path):
    m, _, _, p = one_path("elliptic-nd", dt=0.1)
    flow_bundle(m, p).to_csv(tmp_path / "f.csv")
    head = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert head[:3] == ["node", "J11", "J12"] and head[-1] == "inv_J22"
