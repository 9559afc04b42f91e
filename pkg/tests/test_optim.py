import numpy as np
import pytest

from atn.optim import (Adam, RmsProp, Sgd, clip_global_norm, global_norm,
                       make_optimizer)


def test_global_norm_value():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert global_norm(grads) == 5.0
    assert global_norm({"a": np.zeros((2, 2))}) == 0.0


def test_clip_noop_below_threshold():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_global_norm(grads, 10.0)
    assert out is grads


def test_clip_rescales_jointly():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_global_norm(grads, 1.0)
    assert global_norm(out) == pytest.approx(1.0)
    # direction preserved
    assert out["a"][0] / out["b"][0] == pytest.approx(3.0 / 4.0)


def test_clip_rejects_bad_threshold():
    with pytest.raises(ValueError):
        clip_global_norm({"a": np.ones(1)}, 0.0)


def test_sgd_step():
    params = {"w": np.array([1.0, 2.0])}
    Sgd(0.5).step(params, {"w": np.array([2.0, -2.0])})
    assert np.array_equal(params["w"], np.array([0.0, 3.0]))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="w"):
        Sgd(0.1).step({"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_rmsprop_first_step_magnitude():
    # v = (1-rho) g^2, so the first update is close to lr * sign(g)
    params = {"w": np.array([0.0])}
    opt = RmsProp(0.01, rho=0.99)
    opt.step(params, {"w": np.array([5.0])})
    expected = -0.01 * 5.0 / (np.sqrt(0.01 * 25.0) + 1e-8)
    assert params["w"][0] == pytest.approx(expected)


def test_adam_first_step_is_lr_sized():
    # bias correction makes the first step ~lr * sign(g) regardless of scale
    for g in (1e-6, 1.0, 1e6):
        params = {"w": np.array([0.0])}
        Adam(0.001).step(params, {"w": np.array([g])})
        assert params["w"][0] == pytest.approx(-0.001, rel=1e-2)


def test_adam_converges_on_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    opt = Adam(0.1)
    for _ in range(500):
        opt.step(params, {"w": 2.0 * params["w"]})
    assert np.abs(params["w"]).max() < 1e-3


def test_rmsprop_converges_on_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    opt = RmsProp(0.01)
    for _ in range(2000):
        opt.step(params, {"w": 2.0 * params["w"]})
    assert np.abs(params["w"]).max() < 1e-2


def test_state_tracks_parameter_names():
    opt = Adam(0.001)
    params = {"a": np.zeros(2), "b": np.zeros(3)}
    opt.step(params, {"a": np.ones(2), "b": np.ones(3)})
    assert set(opt.m) == {"a", "b"}
    assert opt.t == 1


def test_updates_in_place():
    w = np.array([1.0])
    params = {"w": w}
    Sgd(1.0).step(params, {"w": np.array([1.0])})
    assert w[0] == 0.0  # same array object mutated


def test_make_optimizer():
    assert isinstance(make_optimizer("sgd", 0.1), Sgd)
    assert isinstance(make_optimizer("rmsprop", 0.1), RmsProp)
    assert isinstance(make_optimizer("Adam", 0.1), Adam)
    with pytest.raises(ValueError):
        make_optimizer("lbfgs", 0.1)
