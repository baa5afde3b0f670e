import numpy as np
import pytest
import torch

from nfd import autograd as ag
from nfd.errors import InvalidArgument

TOL = 1e-4


def rand(rng, *shape, scale=3.0):
    return rng.uniform(-scale, scale, size=shape)


# every primitive, wrapped as a scalar function of its differentiable inputs
PRIMITIVES = {
    "matmul": (lambda p: ag.sum(ag.matmul(p["a"], p["b"])), {"a": (3, 4), "b": (4, 2)}),
    "add_bias": (lambda p: ag.sum(ag.square(ag.add_bias(p["x"], p["b"]))), {"x": (3, 4), "b": (4,)}),
    "add_bias_axis1": (lambda p: ag.sum(ag.square(ag.add_bias(p["x"], p["b"], axis=1))),
                       {"x": (2, 3, 2, 2), "b": (3,)}),
    "add": (lambda p: ag.sum(ag.square(ag.add(p["a"], p["b"]))), {"a": (3, 2), "b": (3, 2)}),
    "subtract": (lambda p: ag.sum(ag.square(ag.subtract(p["a"], p["b"]))), {"a": (5,), "b": (5,)}),
    "mul": (lambda p: ag.sum(ag.mul(p["a"], p["b"])), {"a": (2, 3), "b": (2, 3)}),
    "mul_const": (lambda p: ag.sum(ag.square(ag.mul_const(p["x"], np.arange(6.0).reshape(2, 3)))), {"x": (2, 3)}),
    "scale": (lambda p: ag.sum(ag.square(ag.scale(p["x"], -2.5))), {"x": (4,)}),
    "sin": (lambda p: ag.sum(ag.sin(p["x"])), {"x": (3, 3)}),
    "relu": (lambda p: ag.sum(ag.square(ag.relu(p["x"]))), {"x": (4, 4)}),
    "square": (lambda p: ag.sum(ag.square(p["x"])), {"x": (6,)}),
    "sum_axis": (lambda p: ag.sum(ag.square(ag.sum(p["x"], axis=(0, 2)))), {"x": (2, 3, 4)}),
    "mean": (lambda p: ag.mean(ag.square(p["x"])), {"x": (3, 5)}),
    "reshape": (lambda p: ag.sum(ag.mul_const(ag.reshape(p["x"], (6, 2)), np.arange(12.0).reshape(6, 2))),
                {"x": (3, 4)}),
    "transpose": (lambda p: ag.sum(ag.mul_const(ag.transpose(p["x"], (2, 0, 1)), np.arange(24.0).reshape(4, 2, 3))),
                  {"x": (2, 3, 4)}),
    "concat": (lambda p: ag.sum(ag.square(ag.concat([p["a"], p["b"]], axis=1))), {"a": (2, 2), "b": (2, 3)}),
    "flip": (lambda p: ag.sum(ag.mul_const(ag.flip(p["x"], 3), np.arange(16.0).reshape(1, 1, 4, 4))),
             {"x": (1, 1, 4, 4)}),
    "shift2d": (lambda p: ag.sum(ag.mul_const(ag.shift2d(p["x"], 1, -2), np.arange(25.0).reshape(1, 1, 5, 5))),
                {"x": (1, 1, 5, 5)}),
    "im2col_col2im": (lambda p: ag.sum(ag.square(ag.col2im(ag.im2col(p["x"], 3), (1, 2, 4, 4), 3))),
                      {"x": (1, 2, 4, 4)}),
    "conv2d_same": (lambda p: ag.mean(ag.relu(ag.conv2d(p["x"], p["w"]))), {"x": (2, 2, 5, 5), "w": (3, 2, 3, 3)}),
    "conv2d_valid": (lambda p: ag.sum(ag.square(ag.conv2d(p["x"], p["w"], padding="valid"))),
                     {"x": (1, 2, 5, 4), "w": (2, 2, 3, 3)}),
    "avg_pool2": (lambda p: ag.sum(ag.square(ag.avg_pool2(p["x"]))), {"x": (2, 2, 4, 6)}),
    "avg_unpool2": (lambda p: ag.sum(ag.square(ag.avg_unpool2(p["x"], (1, 2, 4, 4)))), {"x": (1, 2, 2, 2)}),
    "instance_norm": (lambda p: ag.sum(ag.mul_const(ag.instance_norm(p["x"]), np.linspace(-1, 2, 48).reshape(2, 2, 3, 4))),
                      {"x": (2, 2, 3, 4)}),
    "softmax": (lambda p: ag.sum(ag.mul_const(ag.softmax(p["z"]), np.arange(8.0).reshape(2, 4))), {"z": (2, 4)}),
    "cross_entropy": (lambda p: ag.softmax_cross_entropy(p["z"], [1, 0, 3]), {"z": (3, 4)}),
    "cosine": (lambda p: ag.sum(ag.cosine_similarity(p["a"], p["b"])), {"a": (3, 5), "b": (3, 5)}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_vjp_matches_central_difference(name, rng):
    f, shapes = PRIMITIVES[name]
    point = {k: rand(rng, *s) for k, s in shapes.items()}
    assert ag.grad_check(f, point, h=1e-5) < TOL


def test_sum_grad_is_ones():
    x = ag.param(np.arange(5.0))
    ag.backward(ag.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones(5))


def test_sin_at_zero():
    x = ag.param(np.zeros(4))
    ag.backward(ag.sum(ag.sin(x)))
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_non_scalar_root():
    with pytest.raises(InvalidArgument):
        ag.backward(ag.param(np.ones(3)))


def test_quadratic_grad_check(rng):
    assert ag.grad_check(lambda p: ag.sum(ag.square(p["x"])), {"x": rand(rng, 7)}) < 1e-8


def test_sine_mlp_grad_check(rng):
    def mlp(p):
        h = ag.const(rand(np.random.default_rng(1), 6, 2, scale=1.0))
        for l in range(3):
            h = ag.sin(ag.add_bias(ag.matmul(h, ag.transpose(p[f"W{l}"])), p[f"b{l}"]))
        return ag.sum(h)

    point = {"W0": rand(rng, 4, 2, scale=1), "b0": rand(rng, 4, scale=1), "W1": rand(rng, 4, 4, scale=1),
             "b1": rand(rng, 4, scale=1), "W2": rand(rng, 1, 4, scale=1), "b2": rand(rng, 1, scale=1)}
    assert ag.grad_check(mlp, point) < TOL


def test_repeated_backward_deterministic(rng):
    x0 = rand(rng, 3, 4)
    grads = []
    for _ in range(2):
        x = ag.param(x0)
        ag.backward(ag.sum(ag.sin(ag.square(x))))
        grads.append(x.grad)
    assert np.array_equal(grads[0], grads[1])


def test_batch_gradient_is_sum_of_per_item_gradients(rng):
    w0, xs = rand(rng, 3, 2), rand(rng, 5, 3)

    def grad_for(batch):
        w = ag.param(w0)
        ag.backward(ag.sum(ag.sin(ag.matmul(ag.const(batch), w))))
        return w.grad

    total = grad_for(xs)
    parts = sum(grad_for(xs[i:i + 1]) for i in range(len(xs)))
    np.testing.assert_allclose(total, parts, rtol=1e-13, atol=1e-13)


def test_shared_subexpression_accumulates():
    x = ag.param(np.array([2.0]))
    y = ag.mul(x, x)
    ag.backward(ag.sum(ag.add(y, y)))
    np.testing.assert_allclose(x.grad, [8.0])


def test_conv_and_norm_values_match_torch(rng):
    x, w = rand(rng, 2, 3, 6, 6), rand(rng, 4, 3, 3, 3)
    ours = ag.instance_norm(ag.conv2d(ag.const(x), ag.const(w))).value
    ref = torch.nn.functional.instance_norm(torch.nn.functional.conv2d(torch.tensor(x), torch.tensor(w), padding=1),
                                            eps=1e-5).numpy()
    np.testing.assert_allclose(ours, ref, atol=1e-10)
    pooled = ag.avg_pool2(ag.const(x)).value
    np.testing.assert_allclose(pooled, torch.nn.functional.avg_pool2d(torch.tensor(x), 2).numpy(), atol=1e-12)


def test_cross_entropy_matches_torch(rng):
    z = rand(rng, 4, 3)
    ours = float(ag.softmax_cross_entropy(ag.const(z), [0, 2, 1, 1]).value)
    ref = float(torch.nn.functional.cross_entropy(torch.tensor(z), torch.tensor([0, 2, 1, 1])))
    assert ours == pytest.approx(ref, abs=1e-12)


def test_cosine_zero_rows_are_one():
    a = ag.param(np.array([[0.0, 0.0], [1.0, 0.0]]))
    b = ag.param(np.array([[1.0, 2.0], [0.0, 0.0]]))
    cos = ag.cosine_similarity(a, b)
    np.testing.assert_array_equal(cos.value, [1.0, 1.0])
    ag.backward(ag.sum(cos))
    np.testing.assert_array_equal(a.grad, 0.0)


def test_shape_errors():
    with pytest.raises(InvalidArgument):
        ag.matmul(ag.const(np.ones((2, 3))), ag.const(np.ones((2, 3))))
    with pytest.raises(InvalidArgument):
        ag.add(ag.const(np.ones(2)), ag.const(np.ones(3)))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p, _ = ag.adam_step({"x": np.array([1.5])}, {"x": np.zeros(1)}, ag.AdamState(), 0.1)
        assert p["x"][0] == 1.5

    def test_first_step_hand_value(self):
        p, state = ag.adam_step({"x": np.array([0.0])}, {"x": np.array([1.0])}, ag.AdamState(), 0.001)
        # m_hat = 1, v_hat = 1  ->  step = 0.001 / (1 + 1e-8)
        assert p["x"][0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-18)
        assert p["x"][0] == pytest.approx(-0.000999999990, abs=1e-15)
        assert state.step == 1

    def test_constant_gradient_monotone(self):
        params, state = {"x": np.array([1.0])}, ag.AdamState()
        seen = [1.0]
        for _ in range(2):
            params, state = ag.adam_step(params, {"x": np.array([0.3])}, state, 0.01)
            seen.append(params["x"][0])
        assert seen[0] > seen[1] > seen[2]

    def test_matches_torch_adam(self, rng):
        x0, grads = rand(rng, 5), [rand(rng, 5) for _ in range(4)]
        t = torch.tensor(x0, requires_grad=True)
        opt = torch.optim.Adam([t], lr=0.01)
        params, state = {"x": x0}, ag.AdamState()
        for g in grads:
            opt.zero_grad()
            t.grad = torch.tensor(g)
            opt.step()
            params, state = ag.adam_step(params, {"x": g}, state, 0.01)
        np.testing.assert_allclose(params["x"], t.detach().numpy(), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            ag.adam_step({"x": np.zeros(2)}, {"x": np.zeros(3)}, ag.AdamState(), 0.1)

    def test_pure(self):
        state = ag.AdamState()
        p = {"x": np.ones(2)}
        ag.adam_step(p, {"x": np.ones(2)}, state, 0.1)
        assert state.step == 0 and np.array_equal(p["x"], np.ones(2))
