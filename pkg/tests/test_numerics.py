import numpy as np
import pytest

from vkdlab.numerics import (
    IDENTITY,
    RELU,
    MlpLayer,
    NumericError,
    Rng,
    ShapeError,
    ceil_count,
    fd_gradient,
    matmul,
    mlp_backward,
    mlp_forward,
    relative_error,
    softmax_cross_entropy,
)

MASK = (1 << 64) - 1


def splitmix64_reference(seed, n):
    # textbook scalar SplitMix64 in pure Python integers
    out, state = [], seed & MASK
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


class TestMatmul:
    def test_hand_example(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])

    def test_identity_and_zero(self):
        a = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(matmul(np.eye(2), a), a)
        np.testing.assert_array_equal(matmul(np.zeros((4, 2)), a), np.zeros((4, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_non_finite(self):
        with pytest.raises(NumericError):
            matmul([[np.inf]], [[1.0]])


class TestMlpLayer:
    def test_hand_example(self):
        layer = MlpLayer([[1.0, -1.0]], [0.5], RELU)
        y, z = mlp_forward(layer, [2.0, 1.0])
        assert z.tolist() == [1.5] and y.tolist() == [1.5]

    def test_relu_clips(self):
        layer = MlpLayer([[1.0, -1.0]], [0.0], RELU)
        y, z = mlp_forward(layer, [1.0, 3.0])
        assert z.tolist() == [-2.0] and y.tolist() == [0.0]

    def test_zero_and_identity(self):
        x = np.array([0.3, -1.2, 2.0])
        y, z = mlp_forward(MlpLayer(np.zeros((2, 3)), np.zeros(2)), x)
        assert not y.any() and not z.any()
        y, _ = mlp_forward(MlpLayer(np.eye(3), np.zeros(3), IDENTITY), x)
        np.testing.assert_array_equal(y, x)

    def test_bad_shapes(self):
        with pytest.raises(ShapeError):
            MlpLayer(np.zeros((2, 3)), np.zeros(3))
        with pytest.raises(ShapeError):
            mlp_forward(MlpLayer(np.zeros((2, 3)), np.zeros(2)), np.zeros(4))
        with pytest.raises(ValueError):
            MlpLayer(np.zeros((2, 3)), np.zeros(2), "tanh")

    def test_zero_upstream(self):
        rng = Rng(3)
        layer = MlpLayer.init(4, 3, rng)
        gw, gb, gx = mlp_backward(layer, rng.normal((5, 4)), np.zeros((5, 3)))
        assert not gw.any() and not gb.any() and not gx.any()

    def test_identity_single_unit_closed_form(self):
        layer = MlpLayer([[0.4, -0.7, 1.1]], [0.2], IDENTITY)
        x = np.array([1.5, -2.0, 0.25])
        gw, gb, gx = mlp_backward(layer, x, np.array([3.0]))
        np.testing.assert_array_equal(gw, np.outer([3.0], x))
        np.testing.assert_array_equal(gb, [3.0])
        np.testing.assert_allclose(gx, 3.0 * layer.weight[0])

    def test_pure(self):
        rng = Rng(5)
        layer = MlpLayer.init(4, 3, rng)
        x = rng.normal((2, 4))
        up = rng.normal((2, 3))
        a = mlp_backward(layer, x, up)
        b = mlp_backward(layer, x, up)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
        np.testing.assert_array_equal(mlp_forward(layer, x)[0], mlp_forward(layer, x)[0])

    def test_backward_matches_finite_differences(self):
        checked = 0
        for seed in range(120):
            rng = Rng(seed)
            act = RELU if seed % 2 else IDENTITY
            n_in, n_out, n = 2 + seed % 4, 1 + seed % 3, 1 + seed % 5
            layer = MlpLayer.init(n_in, n_out, rng, act)
            layer.bias[:] = rng.normal(n_out)
            x = rng.normal((n, n_in))
            up = rng.normal((n, n_out))
            z = x @ layer.weight.T + layer.bias
            if act == RELU and np.abs(z).min() < 1e-3:
                continue  # kink inside the difference stencil
            gw, gb, gx = mlp_backward(layer, x, up)

            def f_w(w):
                return float((up * mlp_forward(MlpLayer(w, layer.bias, act), x)[0]).sum())

            def f_b(b):
                return float((up * mlp_forward(MlpLayer(layer.weight, b, act), x)[0]).sum())

            def f_x(xx):
                return float((up * mlp_forward(layer, xx)[0]).sum())

            assert relative_error(gw, fd_gradient(f_w, layer.weight)) < 1e-4
            assert relative_error(gb, fd_gradient(f_b, layer.bias)) < 1e-4
            assert relative_error(gx, fd_gradient(f_x, x)) < 1e-4
            checked += 1
        assert checked >= 100


class TestFdGradient:
    def test_constant(self):
        assert not fd_gradient(lambda t: 7.0, np.ones(4)).any()

    def test_quadratic(self):
        theta = np.array([0.5, -2.0, 3.0])
        np.testing.assert_allclose(fd_gradient(lambda t: float(t @ t), theta), 2 * theta, rtol=1e-8)

    def test_does_not_mutate(self):
        theta = np.array([1.0, 2.0])
        fd_gradient(lambda t: float(t.sum()), theta)
        assert theta.tolist() == [1.0, 2.0]

    def test_non_finite(self):
        with pytest.raises(NumericError), np.errstate(invalid="ignore", divide="ignore"):
            fd_gradient(lambda t: float(np.log(t[0])), np.array([0.0]))
        with pytest.raises(ValueError):
            fd_gradient(lambda t: 0.0, np.ones(1), h=0.0)

    def test_cross_entropy_matches_analytic(self):
        rng = Rng(11)
        logits = rng.normal((4, 5))
        labels = np.array([0, 3, 4, 1])
        _, grad = softmax_cross_entropy(logits, labels)
        fd = fd_gradient(lambda l: softmax_cross_entropy(l, labels)[0], logits)
        assert relative_error(grad, fd) < 1e-4


class TestRng:
    def test_reference_stream(self):
        assert Rng(0).next_u64(3).tolist() == splitmix64_reference(0, 3)
        assert Rng(0).next_u64(1)[0] == 0xE220A8397B1DCDAF
        assert Rng(123456789).next_u64(50).tolist() == splitmix64_reference(123456789, 50)

    def test_bulk_equals_scalar(self):
        a, b = Rng(9), Rng(9)
        bulk = a.next_u64(10)
        single = np.concatenate([b.next_u64(1) for _ in range(10)])
        np.testing.assert_array_equal(bulk, single)
        assert a.state == b.state

    def test_equal_seeds_equal_streams(self):
        np.testing.assert_array_equal(Rng(42).normal(100), Rng(42).normal(100))

    def test_unequal_seeds_differ_early(self):
        pairs = [(s, s + 1 + (s * 7919) % 1000) for s in range(1000)]
        differ = sum(not np.array_equal(Rng(a).uniform(16), Rng(b).uniform(16)) for a, b in pairs)
        assert differ / len(pairs) > 0.99

    def test_distributions(self):
        rng = Rng(1)
        u = rng.uniform(100_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.01
        z = rng.normal(100_000)
        assert abs(z.mean()) < 0.02 and abs(z.std() - 1.0) < 0.02
        ints = rng.integers(8, 10_000)
        assert ints.min() == 0 and ints.max() == 7

    def test_permutation(self):
        p = Rng(2).permutation(50)
        assert sorted(p.tolist()) == list(range(50))

    def test_spawn(self):
        parent = Rng(5)
        state = parent.state
        a, b = parent.spawn(1), parent.spawn(2)
        assert parent.state == state
        assert a.seed != b.seed
        assert Rng(5).spawn(1).seed == a.seed


def test_ceil_count():
    assert ceil_count(0.02, 100) == 2
    assert ceil_count(0.2, 60) == 12
    assert ceil_count(0.05, 40) == 2
    assert ceil_count(0.02, 64) == 2
    assert ceil_count(1.0, 7) == 7


def test_cross_entropy_values():
    loss, grad = softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 1]))
    assert loss == pytest.approx(np.log(4))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((0, 4)), np.array([], dtype=int))
