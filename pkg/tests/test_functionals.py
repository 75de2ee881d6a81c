import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchflow import make_functional
from switchflow.functionals import REGISTRY

PARAMS = {"constant": {"c": 2.0}, "linear": {"weights": [1.0, -2.0]}, "tanh": {"component": 1, "scale": 3.0},
          "indicator": {"threshold": 0.1}, "smoothed-indicator": {"width": 0.3},
          "polynomial": {"coefficients": [1.0, -1.0, 0.5], "component": 1}}


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(PARAMS)), st.integers(0, 1000))
def test_shapes_and_gradients(name, seed):
    f = make_functional(name, PARAMS[name])
    rng = np.random.default_rng(seed)
    x, a = rng.uniform(-2, 2, size=(7, 2)), rng.integers(0, 2, 7)
    v = f(x, a)
    assert v.shape == (7,)
    if np.isfinite(f.sup_norm):
        assert np.all(np.abs(v) <= f.sup_norm + 1e-12)
    if f.grad is not None:
        h = 1e-6
        fd = np.stack([(f(x + h * e, a) - f(x - h * e, a)) / (2 * h) for e in np.eye(2)], axis=1)
        assert np.allclose(f.grad(x, a), fd, atol=1e-5)


def test_indicator_has_no_gradient():
    assert make_functional("indicator").grad is None


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_regime_weights(name):
    f = make_functional(name, {**PARAMS[name], "regime_weights": [1.0, -3.0]})
    base = make_functional(name, PARAMS[name])
    x, a = np.full((2, 2), 0.7), np.array([0, 1])
    assert np.allclose(f(x, a), base(x, a) * [1.0, -3.0])
    if np.isfinite(base.sup_norm):
        assert f.sup_norm == 3 * base.sup_norm


def test_scaled():
    f = make_functional("tanh").scaled(-2.0)
    x = np.array([[0.4]])
    assert f(x, [0])[0] == -2 * np.tanh(0.4) and f.sup_norm == 2.0


def test_unknown_name_and_param():
    with pytest.raises(ValueError, match="unknown functional"):
        make_functional("sine")
    with pytest.raises(ValueError, match="bad parameters"):
        make_functional("tanh", {"shift": 1})
