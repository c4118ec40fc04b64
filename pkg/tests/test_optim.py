import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shortcut.errors import ContractError, ShapeError
from shortcut.optim import (AdamWState, EmaState, TrainState, adamw_step, ema_update,
                            swap_in_ema)


def scalar_adamw(theta, grads, lr, b1, b2, eps, wd):
    """Textbook scalar recursion in python floats."""
    m = v = 0.0
    for step, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1**step), v / (1 - b2**step)
        theta = theta - lr * mh / (math.sqrt(vh) + eps) - lr * wd * theta
    return theta


@given(theta=st.floats(-3, 3), seed=st.integers(0, 10**6), wd=st.sampled_from([0.0, 0.1]))
def test_adamw_matches_scalar_recursion(theta, seed, wd):
    grads = np.random.default_rng(seed).normal(size=25)
    st_ = AdamWState.zeros_like({"w": np.zeros(1)}, lr=1e-2, weight_decay=wd)
    p = {"w": np.array([theta])}
    for g in grads:
        st_, p = adamw_step(st_, p, {"w": np.array([g])})
    want = scalar_adamw(theta, grads, 1e-2, 0.9, 0.999, 1e-8, wd)
    assert p["w"][0] == pytest.approx(want, rel=1e-12, abs=1e-12)
    assert st_.step == 25


def test_first_step_moves_by_lr_against_sign():
    st_ = AdamWState.zeros_like({"w": np.zeros(3)}, lr=0.1, weight_decay=0.0)
    _, p = adamw_step(st_, {"w": np.zeros(3)}, {"w": np.array([2.0, -5.0, 1e-3])})
    np.testing.assert_allclose(p["w"], [-0.1, 0.1, -0.1], rtol=1e-4)


def test_decay_is_decoupled_from_gradient():
    st_ = AdamWState.zeros_like({"w": np.zeros(1)}, lr=0.1, weight_decay=0.5)
    _, p = adamw_step(st_, {"w": np.array([2.0])}, {"w": np.zeros(1)})
    assert p["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adamw_errors():
    st_ = AdamWState.zeros_like({"w": np.zeros(2)})
    with pytest.raises(ContractError):
        adamw_step(st_, {"w": np.zeros(2)}, {})
    with pytest.raises(ShapeError):
        adamw_step(st_, {"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_float32_params_stay_float32():
    st_ = AdamWState.zeros_like({"w": np.zeros(2, np.float32)})
    _, p = adamw_step(st_, {"w": np.zeros(2, np.float32)}, {"w": np.ones(2, np.float32)})
    assert p["w"].dtype == np.float32


@given(r=st.floats(0.5, 0.999), n=st.integers(1, 60), c=st.floats(-5, 5))
def test_ema_geometric_closed_form(r, n, c):
    ema = EmaState({"w": np.array([1.0])}, r)
    for _ in range(n):
        ema = ema_update(ema, {"w": np.array([c])})
    # shadow_n = r^n s0 + (1 - r^n) c
    assert ema.shadow["w"][0] == pytest.approx(r**n + (1 - r**n) * c, rel=1e-9, abs=1e-12)


def test_train_state_ema_starts_as_copy_and_updates_each_step():
    p = {"w": np.array([1.0, 2.0])}
    s = TrainState.create(p, lr=0.1, weight_decay=0.0, ema_ratio=0.9)
    np.testing.assert_array_equal(swap_in_ema(s)["w"], p["w"])
    assert swap_in_ema(s)["w"] is not p["w"]
    s2 = s.apply_gradients({"w": np.ones(2)})
    assert s2.step == 1 and s2.opt.step == 1
    np.testing.assert_allclose(s2.ema.shadow["w"], 0.9 * p["w"] + 0.1 * s2.params["w"])
    np.testing.assert_array_equal(s.params["w"], [1.0, 2.0])  # functional update


def test_decay_only_step():
    st_ = AdamWState.zeros_like({"w": np.zeros(2)}, lr=0.01, weight_decay=0.1)
    _, p = adamw_step(st_, {"w": np.array([1.0, -3.0])}, {"w": np.zeros(2)})
    np.testing.assert_allclose(p["w"], np.array([1.0, -3.0]) * (1 - 0.01 * 0.1), rtol=1e-15)


def test_first_step_adam_term():
    g = 0.37
    st_ = AdamWState.zeros_like({"w": np.zeros(1)}, lr=0.05, weight_decay=0.0)
    _, p = adamw_step(st_, {"w": np.zeros(1)}, {"w": np.array([g])})
    assert p["w"][0] == pytest.approx(-0.05 * g / (abs(g) + 1e-8), rel=1e-12)


def test_quadratic_converges_like_scalar_oracle():
    # minimize mse(theta, 5) = (theta - 5)^2 from 0
    st_ = AdamWState.zeros_like({"w": np.zeros(1)}, lr=0.1, weight_decay=0.0)
    p = {"w": np.zeros(1)}
    theta, m, v = 0.0, 0.0, 0.0
    for step in range(1, 201):
        st_, p = adamw_step(st_, p, {"w": 2 * (p["w"] - 5.0)})
        g = 2 * (theta - 5.0)
        m, v = 0.9 * m + 0.1 * g, 0.999 * v + 0.001 * g * g
        theta -= 0.1 * (m / (1 - 0.9**step)) / (math.sqrt(v / (1 - 0.999**step)) + 1e-8)
    assert p["w"][0] == pytest.approx(theta, rel=1e-12)
    assert abs(p["w"][0] - 5.0) < 0.1


def test_ema_examples():
    same = EmaState({"w": np.array([2.0])}, 0.999)
    assert ema_update(same, {"w": np.array([2.0])}).shadow["w"][0] == 2.0
    e = EmaState({"w": np.zeros(1)}, 0.999)
    assert ema_update(e, {"w": np.ones(1)}).shadow["w"][0] == pytest.approx(0.001)
    for _ in range(500):
        e = ema_update(e, {"w": np.array([3.0])})
    assert e.shadow["w"][0] == pytest.approx(3.0 * (1 - 0.999**500), rel=1e-10)


def test_ema_forward_tracks_live_forward():
    from oracles import small_net

    net, p = small_net(0)
    s = TrainState.create({k: v.astype(np.float32) for k, v in p.items()}, lr=0.05)
    x = np.ones((3, 2))
    np.testing.assert_array_equal(net.forward(s.params, x, 0.5, 0), net.forward(swap_in_ema(s), x, 0.5, 0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        s = s.apply_gradients({k: rng.normal(size=v.shape).astype(np.float32) for k, v in s.params.items()})
    assert not np.allclose(net.forward(s.params, x, 0.5, 0), net.forward(swap_in_ema(s), x, 0.5, 0))
