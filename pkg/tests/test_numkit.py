import numpy as np
import pytest

from atn.numkit import (Rng, ShapeError, cross_entropy_logits, matmul, mse,
                        mul, sigmoid, softmax, tanh)


def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), b), b)


def test_matmul_dot_product():
    out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
    assert out.shape == (1, 1)
    assert out[0, 0] == 11.0


def test_matmul_against_triple_loop():
    rng = Rng(5)
    a = rng.gaussian(0, 1, (3, 4))
    b = rng.gaussian(0, 1, (4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for l in range(4):
                ref[i, j] += a[i, l] * b[l, j]
    assert np.abs(matmul(a, b) - ref).max() < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_matmul_associativity():
    rng = Rng(11)
    for _ in range(5):
        a = rng.gaussian(0, 1, (3, 4))
        b = rng.gaussian(0, 1, (4, 5))
        c = rng.gaussian(0, 1, (5, 2))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.abs(left - right).max() / np.abs(left).max() < 1e-9


def test_elementwise_basics():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert tanh(np.array([0.0]))[0] == 0.0
    assert np.array_equal(mul(np.array([1.0, 2.0]), np.array([3.0, 4.0])),
                          np.array([3.0, 8.0]))
    with pytest.raises(ShapeError):
        mul(np.zeros(2), np.zeros(3))


def test_sigmoid_extremes_finite():
    out = sigmoid(np.array([-1e4, 1e4]))
    assert out[0] == 0.0 and out[1] == 1.0


def test_cross_entropy_uniform_logits():
    loss, _ = cross_entropy_logits(np.zeros((4, 8)), np.array([0, 3, 5, 7]))
    assert abs(loss - np.log(8)) < 1e-12


def test_cross_entropy_saturated():
    logits = np.array([[100.0, 0.0], [0.0, 100.0]])
    loss, _ = cross_entropy_logits(logits, np.array([0, 1]))
    assert loss < 1e-10


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy_logits(np.zeros((2, 3)), np.array([0, 3]))


def _numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f()
        flat[i] = orig - h
        minus = f()
        flat[i] = orig
        gf[i] = (plus - minus) / (2 * h)
    return g


def test_cross_entropy_gradient_matches_finite_differences():
    rng = Rng(3)
    logits = rng.gaussian(0, 4, (5, 6))
    targets = rng.integers(0, 6, (5,))
    _, dlogits = cross_entropy_logits(logits.copy(), targets)
    num = _numeric_grad(lambda: cross_entropy_logits(logits, targets)[0], logits)
    assert np.abs(dlogits - num).max() < 1e-7


def test_mse_values_and_gradient():
    loss, _ = mse(np.array([[1.0]]), np.array([[0.0]]))
    assert loss == 1.0
    loss, _ = mse(np.ones((3, 2)), np.ones((3, 2)))
    assert loss == 0.0
    rng = Rng(4)
    pred = rng.gaussian(0, 1, (4, 3))
    target = rng.gaussian(0, 1, (4, 3))
    _, dpred = mse(pred.copy(), target)
    num = _numeric_grad(lambda: mse(pred, target)[0], pred)
    assert np.abs(dpred - num).max() < 1e-9
    with pytest.raises(ShapeError):
        mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_softmax_overflow_safe():
    p = softmax(np.array([[1000.0, 1000.0]]))
    assert np.allclose(p, 0.5)


class TestRng:
    def test_reseed_reproduces_stream(self):
        a = Rng(99).uniform(0, 1, (1000,))
        b = Rng(99).uniform(0, 1, (1000,))
        assert np.array_equal(a, b)

    def test_streams_differ_by_seed(self):
        assert not np.array_equal(Rng(1).uniform(0, 1, (100,)),
                                  Rng(2).uniform(0, 1, (100,)))

    def test_uniform_moments(self):
        u = Rng(42).uniform(0, 1, (100000,))
        assert abs(u.mean() - 0.5) < 0.01
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_gaussian_moments(self):
        g = Rng(7).gaussian(0.0, 0.1, (100000,))
        assert abs(g.var() - 0.1) < 0.01
        assert abs(g.mean()) < 0.01

    def test_gaussian_zero_variance(self):
        g = Rng(1).gaussian(3.5, 0.0, (100,))
        assert np.all(g == 3.5)

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            Rng(0).uniform(1.0, 1.0, (2,))
        with pytest.raises(ValueError):
            Rng(0).gaussian(0.0, -1.0, (2,))

    def test_integers_cover_range(self):
        v = Rng(5).integers(1, 9, (100000,))
        counts = np.bincount(v, minlength=9)[1:9]
        assert counts.min() > 0
        freq = counts / v.size
        assert np.abs(freq - 1 / 8).max() < 0.01

    def test_choice_without_replacement(self):
        rng = Rng(8)
        picks = rng.choice_without_replacement(20, 10)
        assert len(set(picks.tolist())) == 10
        assert all(0 <= p < 20 for p in picks)
