import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchflow import (BUILTIN_MODELS, CoefficientField, MissingDerivativeError, builtin_model,
                        build_bracket_sets, lie_bracket, sigma0_field, uhc_check)
from switchflow.hormander import Combination, Leaf, diffusion_fields, sample_domain, span_rank

rng = np.random.default_rng(0)
A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))


def linear_leaf(M, label, hess=True):
    return Leaf(CoefficientField(value=lambda x, a: x @ M.T,
                                 jac=lambda x, a: np.broadcast_to(M, x.shape[:-1] + M.shape).copy(),
                                 hess=(lambda x, a: np.zeros(x.shape[:-1] + (3, 3, 3))) if hess else None),
                label, allow_fd=hess)


def const_leaf(v, label):
    v = np.asarray(v, dtype=float)
    return Leaf(CoefficientField(value=lambda x, a: np.broadcast_to(v, x.shape).copy(),
                                 jac=lambda x, a: np.zeros(x.shape + x.shape[-1:]),
                                 hess=lambda x, a: np.zeros(x.shape + x.shape[-1:] * 2)), label)


def test_sigma0_gbm_has_ito_correction():
    mu, s = np.array([0.05, -0.1]), np.array([0.3, 0.6])
    m = builtin_model("switching-gbm", {"mu": mu, "s": s})
    x = np.array([[1.5], [-0.4]])
    a = np.array([0, 1])
    assert np.allclose(sigma0_field(m).value(x, a)[:, 0], (mu[a] - s[a] ** 2 / 2) * x[:, 0], atol=1e-14)


def test_constant_fields_commute():
    V, G = const_leaf([1, 0, 2], "u"), const_leaf([0, 3, 1], "v")
    assert np.all(lie_bracket(V, G).value(rng.normal(size=(5, 3)), 0) == 0)


def test_linear_commutator():
    x = rng.normal(size=(10, 3))
    got = lie_bracket(linear_leaf(A, "A"), linear_leaf(B, "B")).value(x, 0)
    assert np.allclose(got, x @ (B @ A - A @ B).T, atol=1e-12)


@pytest.mark.parametrize("name", ["elliptic-nd", "switching-gbm", "hypoelliptic-2d"])
def test_antisymmetry(name):
    m = builtin_model(name)
    s0, s1 = sigma0_field(m), diffusion_fields(m)[0]
    x = rng.uniform(-2, 2, size=(100, m.n))
    a = rng.integers(0, m.m0, 100)
    ab, ba = lie_bracket(s0, s1).value(x, a), lie_bracket(s1, s0).value(x, a)
    assert np.max(np.abs(ab + ba)) <= 1e-12


@pytest.mark.parametrize("name", ["elliptic-nd", "switching-gbm"])
def test_bracket_jacobian_matches_differences(name):
    m = builtin_model(name, {"n": 3} if name == "elliptic-nd" else None)
    s0, cols = sigma0_field(m), diffusion_fields(m)
    W = lie_bracket(s0, cols[-1])
    x = rng.uniform(-1, 1, size=(20, m.n))
    a = rng.integers(0, m.m0, 20)
    h = 1e-6
    fd = np.stack([(W.value(x + h * e, a) - W.value(x - h * e, a)) / (2 * h) for e in np.eye(m.n)], axis=-1)
    assert np.max(np.abs(fd - W.jac(x, a))) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_level_zero_is_diffusion_columns(name):
    m = builtin_model(name)
    levels = build_bracket_sets(m, 0)
    assert len(levels) == 1 and len(levels[0]) == m.d


@pytest.mark.parametrize("variant", ["sigma", "sigma-prime"])
def test_hypoelliptic_first_bracket(variant):
    m = builtin_model("hypoelliptic-2d", {"theta": [1.0, 2.0]})
    levels = build_bracket_sets(m, 1, variant)
    x, a = np.array([[0.3, -0.7], [1.2, 0.4]]), np.array([0, 1])
    vals = [V.value(x, a) for V in levels[1]]
    assert len(vals) == 1
    assert np.allclose(np.abs(vals[0]), [[1.0, 1.0], [2.0, 1.0]], atol=1e-9)
    assert np.allclose(vals[0][:, 0] / vals[0][:, 1], [-1.0, -2.0], atol=1e-9)


def test_hypoelliptic_uhc_values():
    m = builtin_model("hypoelliptic-2d")
    r0 = uhc_check(m, 0)
    assert r0.c_hat == pytest.approx(0.0, abs=1e-14) and not r0.passed
    assert np.allclose(np.abs(r0.worst_direction), [0.0, 1.0])
    r1 = uhc_check(m, 1)
    assert r1.c_hat == pytest.approx(3 - 2 * np.sqrt(2), rel=1e-9) and r1.passed
    assert "passes on sampled domain" in r1.summary


def test_degenerate_all_brackets_pruned():
    m = builtin_model("degenerate-2d")
    levels = build_bracket_sets(m, 3)
    assert all(level == [] for level in levels[1:]) and levels.pruned
    assert uhc_check(m, 3).c_hat == pytest.approx(0.0, abs=1e-14)


def test_elliptic_needs_no_brackets():
    assert uhc_check(builtin_model("elliptic-nd"), 0).c_hat == pytest.approx(1.0)


def test_gbm_fails_at_origin():
    r = uhc_check(builtin_model("switching-gbm"), 2, domain=np.array([[0.0], [1.0]]))
    assert not r.passed and r.worst_x[0] == 0.0


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["hypoelliptic-2d", "elliptic-nd", "switching-gbm"]), st.integers(0, 1000))
def test_variants_span_the_same_space(name, seed):
    m = builtin_model(name)
    pts = sample_domain(m, {"count": 50, "seed": seed, "box": 1.5})
    for j0 in (1, 2):
        F = build_bracket_sets(m, j0, "sigma", probes=pts).fields()
        G = build_bracket_sets(m, j0, "sigma-prime", probes=pts).fields()
        for x in pts:
            for a in range(m.m0):
                assert span_rank(F, x, a) == span_rank(G, x, a)


def test_scaling_fields_scales_constant():
    m = builtin_model("hypoelliptic-2d")
    levels = build_bracket_sets(m, 1)
    doubled = [[Combination([(2.0, V)]) for V in level] for level in levels]
    base = uhc_check(m, 1, levels=levels).c_hat
    assert uhc_check(m, 1, levels=doubled).c_hat == pytest.approx(4 * base, rel=1e-12)


def test_missing_hessian_without_fallback():
    V, G = linear_leaf(A, "A", hess=False), linear_leaf(B, "B", hess=False)
    W = lie_bracket(V, G)
    W.value(np.ones((1, 3)), 0)
    with pytest.raises(MissingDerivativeError):
        W.jac(np.ones((1, 3)), 0)


def test_unknown_variant():
    with pytest.raises(ValueError):
        build_bracket_sets(builtin_model("hypoelliptic-2d"), 1, "tau")


def test_uhc_csv(tmp_path):
    r = uhc_check(builtin_model("hypoelliptic-2d"), 1, domain={"count": 5})
    r.to_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,alpha,lambda_min" and len(lines) == 1 + 10 + 1
    assert lines[-1].startswith("# j0=1")
