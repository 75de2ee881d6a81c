import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from switchflow import (ChainPath, GeneratorMatrix, InvalidGeneratorError, build_partition, eval_g,
                        longest_constant_interval, simulate_chain, transition_matrix)
from switchflow.chain import read_chain_csv
from switchflow._rng import chain_generator


@st.composite
def generators(draw, max_m0=4):
    m0 = draw(st.integers(1, max_m0))
    off = draw(st.lists(st.floats(0, 3, allow_nan=False), min_size=m0 * m0, max_size=m0 * m0))
    q = np.array(off).reshape(m0, m0)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return GeneratorMatrix(q)


def test_partition_two_state():
    t = build_partition(GeneratorMatrix([[-0.5, 0.5], [1, -1]]))
    assert t.intervals == ((0, 1, 0.0, 0.5), (1, 0, 0.5, 1.5))
    assert t.total_length == 1.5


def test_partition_single_regime_empty():
    t = build_partition(GeneratorMatrix([[0.0]]))
    assert t.intervals == () and t.total_length == 0.0


def test_partition_three_state_order():
    q = np.array([[-3, 1, 2], [1, -2, 1], [0.5, 1.5, -2]])
    t = build_partition(GeneratorMatrix(q))
    assert [(i, j) for i, j, _, _ in t.intervals] == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    assert [r - l for _, _, l, r in t.intervals] == [1, 2, 1, 1, 0.5, 1.5]


def test_partition_rejects_invalid():
    with pytest.raises(InvalidGeneratorError):
        build_partition(GeneratorMatrix([[-1, 0.5], [2, -2]]))


@settings(max_examples=50, deadline=None)
@given(generators())
def test_partition_invariants(Q):
    t = build_partition(Q)
    left = 0.0
    for i, j, lo, hi in t.intervals:
        assert lo == left and hi - lo == pytest.approx(Q.q[i, j])
        left = hi
    assert t.total_length <= Q.m0 * (Q.m0 - 1) * Q.K + 1e-12


def test_eval_g_cases():
    t = build_partition(GeneratorMatrix([[-0.5, 0.5], [1, -1]]))
    assert eval_g(t, 0, 0.25) == 1
    assert eval_g(t, 0, 0.75) == 0
    assert eval_g(t, 1, 0.75) == -1
    assert eval_g(t, 0, t.total_length + 1) == 0


@settings(max_examples=50, deadline=None)
@given(generators(), st.floats(0, 40))
def test_eval_g_stays_in_range(Q, z):
    t = build_partition(Q)
    for i in range(Q.m0):
        assert 0 <= i + eval_g(t, i, z) < Q.m0


def test_zero_generator_no_jumps():
    for method in ("holding-times", "prm"):
        p = simulate_chain(GeneratorMatrix(np.zeros((2, 2))), 1, 5.0, seed=0, method=method)
        assert p.jump_times == () and p.final == 1


@pytest.mark.parametrize("method", ["holding-times", "prm"])
def test_same_seed_same_path(method):
    Q = GeneratorMatrix([[-1, 1], [2, -2]])
    a = simulate_chain(Q, 0, 3.0, seed=5, method=method)
    b = simulate_chain(Q, 0, 3.0, seed=5, method=method)
    assert a.jump_times == b.jump_times and a.jump_targets == b.jump_targets


def test_prm_jumps_are_events():
    Q = GeneratorMatrix([[-3, 1, 2], [1, -2, 1], [0.5, 1.5, -2]])
    p = simulate_chain(Q, 0, 5.0, seed=2, method="prm")
    assert set(p.jump_times) <= {s for s, _ in p.poisson_events}


@pytest.mark.parametrize("method", ["holding-times", "prm"])
def test_two_state_law(method):
    Q = GeneratorMatrix([[-1, 1], [2, -2]])
    n = 20_000
    finals = np.array([simulate_chain(Q, 0, 1.0, chain_generator(3, p), method).final for p in range(n)])
    p_exact = (2 + math.exp(-3)) / 3
    freq = np.mean(finals == 0)
    assert abs(freq - p_exact) <= 3 * math.sqrt(p_exact * (1 - p_exact) / n)


def test_prm_event_count_is_poisson():
    Q = GeneratorMatrix([[-1, 1], [2, -2]])
    lam = 2 * 1 * 2.0
    counts = np.array([len(simulate_chain(Q, 0, 1.0, chain_generator(9, p), "prm").poisson_events)
                       for p in range(20_000)])
    assert abs(counts.mean() - lam) <= 3 * math.sqrt(lam / counts.size)


def test_unknown_method():
    with pytest.raises(ValueError):
        simulate_chain(GeneratorMatrix([[-1, 1], [1, -1]]), 0, 1.0, method="euler")


def test_transition_matrix_identity_at_zero():
    assert np.array_equal(transition_matrix(GeneratorMatrix([[-1, 1], [2, -2]]), 0.0), np.eye(2))


def test_transition_matrix_two_state_closed_form():
    P = transition_matrix(GeneratorMatrix([[-1, 1], [2, -2]]), 1.0)
    assert P[0, 0] == pytest.approx(2 / 3 + math.exp(-3) / 3, abs=1e-13)


@settings(max_examples=40, deadline=None)
@given(generators(), st.floats(0, 3))
def test_transition_matrix_matches_scipy(Q, t):
    P = transition_matrix(Q, t)
    assert np.allclose(P, expm(t * Q.q), atol=1e-11)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-10)
    assert P.min() >= -1e-12


def test_longest_interval_cases():
    p = ChainPath(t_end=1.0, initial=0)
    assert longest_constant_interval(p, 1.0) == (0.0, 1.0)
    p = ChainPath(t_end=1.0, initial=0, jump_times=(0.3, 0.4), jump_targets=(1, 0))
    assert longest_constant_interval(p, 1.0) == (0.4, 1.0)


def test_longest_interval_ties_pick_earliest():
    p = ChainPath(t_end=1.0, initial=0, jump_times=(0.5,), jump_targets=(1,))
    assert longest_constant_interval(p, 1.0) == (0.0, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["holding-times", "prm"]), st.floats(0.1, 3.0))
def test_longest_interval_bound(seed, method, t):
    Q = GeneratorMatrix([[-3, 1, 2], [1, -2, 1], [0.5, 1.5, -2]])
    p = simulate_chain(Q, 0, 3.0, seed=seed, method=method)
    k = sum(1 for s in p.event_clock() if 0 < s < t)
    lo, hi = longest_constant_interval(p, t)
    assert hi - lo >= t / (k + 1) - 1e-12


def test_chain_path_validation():
    with pytest.raises(ValueError):
        ChainPath(t_end=1.0, initial=0, jump_times=(0.5, 0.4), jump_targets=(1, 0))
    with pytest.raises(ValueError):
        ChainPath(t_end=1.0, initial=0, jump_times=(0.5,), jump_targets=(0,))


def test_integrate_exact():
    p = ChainPath(t_end=1.0, initial=0, jump_times=(0.25,), jump_targets=(1,))
    assert p.integrate([1.0, 2.0]) == 0.25 + 1.5


def test_csv_round_trip(tmp_path):
    p = simulate_chain(GeneratorMatrix([[-1, 1], [2, -2]]), 1, 4.0, seed=3)
    p.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "time,regime" and lines[1] == "0.0,1"
    q = read_chain_csv(tmp_path / "c.csv", 4.0)
    assert q.jump_times == p.jump_times and q.jump_targets == p.jump_targets
