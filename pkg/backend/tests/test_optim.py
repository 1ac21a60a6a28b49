"""Adam updates."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.append(str(Path(__file__).resolve().parents[1]))

from canids.core.errors import ShapeMismatch
from canids.core.optim import AdamState, adam_step


def test_zero_gradient_leaves_parameters() -> None:
    params = {"w": np.array([0.5, -2.0, 3.0])}
    before = params["w"].copy()
    adam_step(AdamState(), params, {"w": np.zeros(3)})
    assert np.array_equal(params["w"], before)


@pytest.mark.parametrize("g", [0.3, -7.0, 120.0])
def test_first_step_moves_by_learning_rate(g: float) -> None:
    state = AdamState(lr=1e-4)
    params = {"w": np.ones(4)}
    adam_step(state, params, {"w": np.full(4, g)})
    assert state.step == 1
    assert_allclose(params["w"], 1.0 - 1e-4 * np.sign(g), rtol=0, atol=1e-10)


def test_quadratic_descends() -> None:
    state = AdamState(lr=1e-2)
    params = {"theta": np.array([1.0])}
    for _ in range(100):
        adam_step(state, params, {"theta": 2.0 * params["theta"]})
    assert abs(params["theta"][0]) < 1.0
    assert state.step == 100


def test_moments_match_parameter_shapes() -> None:
    state = AdamState()
    params = {"k": np.zeros((3, 3, 1, 2)), "b": np.zeros(2)}
    adam_step(state, params, {"k": np.ones((3, 3, 1, 2)), "b": np.ones(2)})
    assert state.m["k"].shape == (3, 3, 1, 2)
    assert state.v["b"].shape == (2,)


def test_missing_gradient_is_skipped() -> None:
    params = {"a": np.ones(2), "b": np.ones(2)}
    adam_step(AdamState(), params, {"a": np.ones(2)})
    assert params["b"].tolist() == [1.0, 1.0]
    assert params["a"][0] < 1.0


def test_shape_mismatch() -> None:
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), {"w": np.ones(3)}, {"w": np.ones(4)})


def test_update_preserves_dtype() -> None:
    params = {"w": np.ones(3, dtype=np.float32)}
    adam_step(AdamState(), params, {"w": np.ones(3, dtype=np.float32)})
    assert params["w"].dtype == np.float32
