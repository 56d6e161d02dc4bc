import math

import numpy as np
import pytest

from collabgnn.autodiff import Parameter
from collabgnn.errors import ContractError
from collabgnn.optim import Adam, AdamState, adam_step


def scalar_adam_trace(p, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Plain-Python Adam recurrences, kept separate from the package code."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        g = g + wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p = p - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(p)
    return trace


def test_first_step_moves_by_lr():
    p = Parameter(np.zeros(1), name="p")
    p.grad = np.ones(1)
    adam_step({"p": p}, AdamState(weight_decay=0.0))
    assert p.data[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_zero_gradient_leaves_params():
    p = Parameter(np.array([0.5, -2.0]))
    before = p.data.copy()
    state = AdamState(weight_decay=0.0)
    for _ in range(3):
        p.grad = np.zeros(2)
        adam_step({"p": p}, state)
    np.testing.assert_array_equal(p.data, before)


@pytest.mark.parametrize("wd", [0.0, 1e-6, 0.1])
def test_matches_scalar_reference_trace(wd):
    p = Parameter(np.array([0.3]))
    state = AdamState(weight_decay=wd)
    grads = [0.7, 0.7]
    got = []
    for g in grads:
        p.grad = np.array([g])
        adam_step({"p": p}, state)
        got.append(p.data[0])
    expected = scalar_adam_trace(0.3, grads, wd=wd)
    assert max(abs(a - b) for a, b in zip(got, expected)) <= 1e-12


def test_step_counter_and_buffers():
    p = Parameter(np.ones((2, 3)))
    opt = Adam({"w": p})
    for k in range(1, 4):
        p.grad = np.full((2, 3), 0.1)
        opt.step()
        assert opt.state.step == k
        assert opt.state.first_moment["w"].shape == (2, 3)
        assert p.grad is None


def test_missing_grad_names_parameter():
    with pytest.raises(ContractError, match="head.fc0.bias"):
        adam_step({"head.fc0.bias": Parameter(np.zeros(2))}, AdamState())


def test_defaults_match_training_setup():
    s = AdamState()
    assert (s.lr, s.beta1, s.beta2, s.epsilon, s.weight_decay) == (0.001, 0.9, 0.999, 1e-8, 1e-6)
