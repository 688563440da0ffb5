import numpy as np
import pytest

from sloroute.predictor import Mlp, forward, huber_loss, init_mlp, train_regressor
from sloroute.predictor.mlp import backward, predict as mlp_predict


def flatten_params(net: Mlp) -> np.ndarray:
    return np.concatenate([a.ravel() for a in net.weights + net.biases])


def set_params(net: Mlp, flat: np.ndarray) -> None:
    offset = 0
    for arrays in (net.weights, net.biases):
        for a in arrays:
            a[...] = flat[offset : offset + a.size].reshape(a.shape)
            offset += a.size


def loss_at(net: Mlp, x: np.ndarray, y: np.ndarray, delta: float) -> float:
    out, _ = forward(net, x)
    loss, _ = huber_loss(out - y, delta)
    return loss


def analytic_grad(net: Mlp, x: np.ndarray, y: np.ndarray, delta: float) -> np.ndarray:
    out, cache = forward(net, x)
    _, grad_res = huber_loss(out - y, delta)
    grad_w, grad_b = backward(net, cache, grad_res)
    return np.concatenate([g.ravel() for g in grad_w + grad_b])


class TestHuber:
    def test_quadratic_region(self):
        loss, grad = huber_loss(np.array([0.5]), delta=1.0)
        assert loss == pytest.approx(0.125)
        assert grad[0] == pytest.approx(0.5)

    def test_linear_region(self):
        loss, grad = huber_loss(np.array([2.0]), delta=1.0)
        assert loss == pytest.approx(1.5)
        assert grad[0] == pytest.approx(1.0)

    def test_mean_over_batch(self):
        loss, _ = huber_loss(np.array([0.0, 2.0]), delta=1.0)
        assert loss == pytest.approx(0.75)


class TestGradientCheck:
    """Analytic gradients vs central finite differences (the independent oracle)."""

    @pytest.mark.parametrize("dims,delta,seed", [
        ([5, 7, 3, 1], 1.0, 0),
        ([4, 6, 1], 0.5, 1),
        ([3, 5, 5, 5, 1], 1.0, 2),
    ])
    def test_matches_finite_differences(self, dims, delta, seed):
        rng = np.random.default_rng(seed)
        net = init_mlp(dims, rng)
        x = rng.normal(size=(6, dims[0]))
        # keep residuals away from the Huber kink so FD is well-defined
        out, _ = forward(net, x)
        y = out + rng.choice([-1.0, 1.0], size=out.shape) * rng.uniform(
            0.05, 0.35, size=out.shape
        ) * delta
        analytic = analytic_grad(net, x, y, delta)
        theta = flatten_params(net)
        numeric = np.zeros_like(theta)
        h = 1e-6
        for i in range(theta.size):
            bumped = theta.copy()
            bumped[i] += h
            set_params(net, bumped)
            up = loss_at(net, x, y, delta)
            bumped[i] -= 2 * h
            set_params(net, bumped)
            down = loss_at(net, x, y, delta)
            numeric[i] = (up - down) / (2 * h)
        set_params(net, theta)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
        rel_err = np.abs(analytic - numeric) / denom
        assert rel_err.max() <= 1e-4


class TestTraining:
    def test_deterministic_given_seed(self):
        def fit():
            rng = np.random.default_rng(3)
            net = init_mlp([4, 8, 1], rng)
            x = np.random.default_rng(5).normal(size=(64, 4))
            y = x[:, 0] * 2.0 - x[:, 1]
            train_regressor(net, x, y, epochs=5, learning_rate=0.05,
                            batch_size=16, huber_delta=1.0, rng=rng)
            return net

        a, b = fit(), fit()
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            assert np.array_equal(wa, wb)

    def test_loss_decreases_on_learnable_data(self):
        rng = np.random.default_rng(1)
        net = init_mlp([3, 16, 1], rng)
        x = rng.normal(size=(256, 3))
        y = 0.5 * x[:, 0] + 0.25 * x[:, 1]
        before = loss_at(net, x, y.reshape(-1, 1), 1.0)
        train_regressor(net, x, y, epochs=50, learning_rate=0.05,
                        batch_size=32, huber_delta=1.0, rng=rng)
        after = loss_at(net, x, y.reshape(-1, 1), 1.0)
        assert after < before * 0.2

    def test_relu_hidden_identity_output(self):
        net = Mlp(
            weights=[np.array([[1.0], [-1.0]]), np.array([[2.0]])],
            biases=[np.array([0.0]), np.array([-3.0])],
        )
        # hidden = relu(x0 - x1); out = 2*hidden - 3
        assert mlp_predict(net, np.array([[5.0, 1.0]]))[0, 0] == pytest.approx(5.0)
        assert mlp_predict(net, np.array([[1.0, 5.0]]))[0, 0] == pytest.approx(-3.0)
