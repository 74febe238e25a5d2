import unittest

import numpy as np
from scipy.special import expit

from song_speech_emotion.layers import (
    GRU,
    LSTM,
    AdamState,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    ShapeError,
    adam_step,
    conv1d_layer,
    dense_forward,
    dropout,
    gru_layer,
    lstm_layer,
    softmax,
    softmax_xent,
)


def numeric_gradient(f, array, h=1e-5):
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        saved = array[index]
        array[index] = saved + h
        plus = f()
        array[index] = saved - h
        minus = f()
        array[index] = saved
        grad[index] = (plus - minus) / (2 * h)
    return grad


def relative_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-4, np.abs(a) + np.abs(b)))


class GradientCheckMixin:
    def check_layer(self, layer, x):
        rng = np.random.default_rng(99)
        weights = rng.standard_normal(layer.forward(x).shape)

        def loss():
            return float(np.sum(layer.forward(x) * weights))

        dx = layer.backward(weights)
        analytic = {name: grad.copy() for name, grad in layer.grads.items()}

        self.assertLess(relative_error(dx, numeric_gradient(loss, x)), 1e-4)
        for name, param in layer.params.items():
            self.assertLess(relative_error(analytic[name], numeric_gradient(loss, param)), 1e-4, name)


class DenseTestCase(GradientCheckMixin, unittest.TestCase):
    def test_identity_relu(self):
        """Ensure an identity dense layer passes non-negative input through ReLU."""
        x = np.array([[0.0, 1.5, 3.0]])

        np.testing.assert_array_equal(dense_forward(x, np.eye(3), np.zeros(3), "relu"), x)

    def test_negative_through_relu(self):
        """Ensure ReLU zeroes negative input."""
        self.assertEqual(dense_forward(np.array([[-1.0]]), np.eye(1), np.zeros(1), "relu")[0, 0], 0.0)

    def test_matches_matrix_multiply(self):
        """Ensure the dense layer matches an explicit sum."""
        rng = np.random.default_rng(0)
        x, W, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3)), rng.standard_normal(3)
        expected = np.array([[sum(x[i, k] * W[k, j] for k in range(5)) + b[j] for j in range(3)] for i in range(4)])

        np.testing.assert_allclose(dense_forward(x, W, b), expected, atol=1e-12)

    def test_time_distributed(self):
        """Ensure a dense layer applies to every frame of a sequence."""
        rng = np.random.default_rng(1)
        layer = Dense(6, 4, "relu", rng)

        self.assertEqual(layer.forward(rng.standard_normal((2, 7, 6))).shape, (2, 7, 4))
        self.assertEqual(layer.output_shape((7, 6)), (7, 4))

    def test_gradients(self):
        """Ensure dense gradients match finite differences."""
        rng = np.random.default_rng(2)
        self.check_layer(Dense(5, 4, "relu", rng), rng.standard_normal((3, 2, 5)))

    def test_shape_mismatch(self):
        """Ensure mismatched weights are refused."""
        with self.assertRaises(ShapeError):
            dense_forward(np.ones((2, 4)), np.ones((5, 3)), np.zeros(3))


class LstmTestCase(GradientCheckMixin, unittest.TestCase):
    def params(self, n_in, units, rng=None):
        if rng is None:
            return {"W": np.zeros((n_in, 4 * units)), "U": np.zeros((units, 4 * units)), "b": np.zeros(4 * units)}
        return {
            "W": rng.standard_normal((n_in, 4 * units)) * 0.5,
            "U": rng.standard_normal((units, 4 * units)) * 0.5,
            "b": rng.standard_normal(4 * units) * 0.5,
        }

    def test_zero_parameters(self):
        """Ensure an all-zero LSTM outputs zeros."""
        out = lstm_layer(np.random.default_rng(3).standard_normal((6, 3)), self.params(3, 4))

        np.testing.assert_array_equal(out, np.zeros((1, 6, 4)))

    def test_single_step(self):
        """Ensure one LSTM step matches the gate equations."""
        rng = np.random.default_rng(4)
        params = self.params(3, 2, rng)
        x = rng.standard_normal(3)
        h0, c0 = rng.standard_normal(2), rng.standard_normal(2)

        a = x @ params["W"] + h0 @ params["U"] + params["b"]
        i, f, g, o = expit(a[0:2]), expit(a[2:4]), np.tanh(a[4:6]), expit(a[6:8])
        expected = o * np.tanh(f * c0 + i * g)

        out = lstm_layer(x[np.newaxis], params, h0=h0, c0=c0)
        np.testing.assert_allclose(out[0, 0], expected, atol=1e-12)

    def test_forget_dominant_carries_cell(self):
        """Ensure a saturated forget gate carries the cell state unchanged."""
        params = self.params(2, 3)
        params["b"][0:3] = -50.0
        params["b"][3:6] = 50.0
        params["b"][9:12] = 50.0
        c0 = np.array([0.3, -0.7, 1.2])
        out = lstm_layer(np.random.default_rng(5).standard_normal((10, 2)), params, c0=c0)

        np.testing.assert_allclose(out[0], np.tile(np.tanh(c0), (10, 1)), atol=1e-6)

    def test_last_step_only(self):
        """Ensure the last-step output equals the final frame of the full sequence."""
        rng = np.random.default_rng(6)
        params = self.params(3, 4, rng)
        x = rng.standard_normal((2, 5, 3))

        np.testing.assert_array_equal(lstm_layer(x, params, return_sequences=False),
                                      lstm_layer(x, params)[:, -1])

    def test_gradients(self):
        """Ensure LSTM gradients match finite differences."""
        rng = np.random.default_rng(7)
        self.check_layer(LSTM(3, 4, rng), rng.standard_normal((2, 5, 3)))

    def test_gradients_last_step(self):
        """Ensure last-step LSTM gradients match finite differences."""
        rng = np.random.default_rng(8)
        self.check_layer(LSTM(3, 4, rng, return_sequences=False), rng.standard_normal((2, 5, 3)))


class GruTestCase(GradientCheckMixin, unittest.TestCase):
    def params(self, n_in, units, rng=None):
        if rng is None:
            return {"W": np.zeros((n_in, 3 * units)), "U": np.zeros((units, 3 * units)), "b": np.zeros(3 * units)}
        return {
            "W": rng.standard_normal((n_in, 3 * units)) * 0.5,
            "U": rng.standard_normal((units, 3 * units)) * 0.5,
            "b": rng.standard_normal(3 * units) * 0.5,
        }

    def test_zero_parameters(self):
        """Ensure an all-zero GRU outputs zeros."""
        out = gru_layer(np.random.default_rng(9).standard_normal((6, 3)), self.params(3, 4))

        np.testing.assert_array_equal(out, np.zeros((1, 6, 4)))

    def test_closed_update_gate_keeps_state(self):
        """Ensure a closed update gate keeps the initial state."""
        rng = np.random.default_rng(10)
        params = self.params(3, 4, rng)
        params["b"][:4] = -50.0
        params["W"][:, :4] = 0.0
        params["U"][:, :4] = 0.0
        h0 = rng.standard_normal(4)

        out = gru_layer(rng.standard_normal((8, 3)), params, h0=h0)
        np.testing.assert_allclose(out[0], np.tile(h0, (8, 1)), atol=1e-12)

    def test_single_step(self):
        """Ensure one GRU step matches the gate equations."""
        rng = np.random.default_rng(11)
        params = self.params(3, 2, rng)
        x, h0 = rng.standard_normal(3), rng.standard_normal(2)
        W, U, b = params["W"], params["U"], params["b"]

        p = x @ W + b
        z = expit(p[0:2] + h0 @ U[:, 0:2])
        r = expit(p[2:4] + h0 @ U[:, 2:4])
        n = np.tanh(p[4:6] + (r * h0) @ U[:, 4:6])
        expected = (1 - z) * h0 + z * n

        np.testing.assert_allclose(gru_layer(x[np.newaxis], params, h0=h0)[0, 0], expected, atol=1e-12)

    def test_gradients(self):
        """Ensure GRU gradients match finite differences."""
        rng = np.random.default_rng(12)
        self.check_layer(GRU(3, 4, rng), rng.standard_normal((2, 5, 3)))

    def test_gradients_last_step(self):
        """Ensure last-step GRU gradients match finite differences."""
        rng = np.random.default_rng(13)
        self.check_layer(GRU(3, 4, rng, return_sequences=False), rng.standard_normal((2, 5, 3)))


class Conv1DTestCase(GradientCheckMixin, unittest.TestCase):
    def test_unit_kernel_is_identity(self):
        """Ensure a length-one unit kernel copies its input."""
        x = np.random.default_rng(14).standard_normal((9, 1))

        np.testing.assert_array_equal(conv1d_layer(x, np.ones((1, 1, 1)), activation="linear")[0], x)

    def test_averaging_kernel(self):
        """Ensure an averaging kernel shortens the sequence and keeps a constant."""
        out = conv1d_layer(np.full((10, 1), 0.7), np.full((4, 1, 1), 0.25))

        self.assertEqual(out.shape, (1, 7, 1))
        np.testing.assert_allclose(out, 0.7)

    def test_nested_loop_oracle(self):
        """Ensure strided convolution matches explicit loops."""
        rng = np.random.default_rng(15)
        x = rng.standard_normal((2, 11, 3))
        kernels = rng.standard_normal((4, 3, 5))
        bias = rng.standard_normal(5)
        stride = 2

        steps = (11 - 4) // stride + 1
        expected = np.zeros((2, steps, 5))
        for n in range(2):
            for t in range(steps):
                for c in range(5):
                    total = bias[c]
                    for k in range(4):
                        for d in range(3):
                            total += x[n, t * stride + k, d] * kernels[k, d, c]
                    expected[n, t, c] = total

        out = conv1d_layer(x, kernels, stride=stride, bias=bias, activation="linear")
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_too_short(self):
        """Ensure a kernel longer than the input is refused."""
        with self.assertRaises(ShapeError):
            conv1d_layer(np.ones((3, 2)), np.ones((4, 2, 1)))

    def test_gradients(self):
        """Ensure conv gradients match finite differences."""
        rng = np.random.default_rng(16)
        self.check_layer(Conv1D(3, 4, 3, rng), rng.standard_normal((2, 9, 3)))

    def test_gradients_strided(self):
        """Ensure strided conv gradients match finite differences."""
        rng = np.random.default_rng(17)
        self.check_layer(Conv1D(2, 3, 3, rng, stride=3), rng.standard_normal((2, 12, 2)))


class DropoutTestCase(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(18)

    def test_zero_rate(self):
        """Ensure a zero dropout rate changes nothing."""
        x = self.rng.standard_normal(100)

        np.testing.assert_array_equal(dropout(x, 0.0, True, self.rng), x)

    def test_inference_is_identity(self):
        """Ensure dropout is off outside training."""
        x = self.rng.standard_normal(100)

        np.testing.assert_array_equal(dropout(x, 0.9, False), x)

    def test_keep_rate(self):
        """Ensure the kept share matches 1 - p and survivors are rescaled."""
        out = dropout(np.ones(100000), 0.4, True, self.rng)

        self.assertAlmostEqual(np.mean(out != 0), 0.6, delta=0.01)
        self.assertTrue(np.allclose(out[out != 0], 1 / 0.6))

    def test_backward_uses_the_mask(self):
        """Ensure gradients flow only through kept units."""
        layer = Dropout(0.5)
        out = layer.forward(np.ones((4, 10)), training=True, rng=self.rng)

        np.testing.assert_array_equal(layer.backward(np.ones((4, 10))), out)

    def test_invalid_rate(self):
        """Ensure a rate of one is refused."""
        with self.assertRaises(ValueError):
            dropout(np.ones(3), 1.0, True, self.rng)


class FlattenTestCase(unittest.TestCase):
    def test_round_trip_shape(self):
        """Ensure flatten and its backward pass restore shapes."""
        layer = Flatten()
        x = np.ones((2, 3, 4))

        self.assertEqual(layer.forward(x).shape, (2, 12))
        self.assertEqual(layer.backward(np.ones((2, 12))).shape, (2, 3, 4))
        self.assertEqual(layer.output_shape((3, 4)), (12,))


class LossTestCase(unittest.TestCase):
    def test_uniform_logits(self):
        """Ensure equal logits cost log of the class count."""
        loss, _ = softmax_xent(np.zeros(8), 3)

        self.assertAlmostEqual(loss, np.log(8))

    def test_confident_and_correct(self):
        """Ensure a confident correct prediction costs nothing."""
        loss, _ = softmax_xent(np.eye(4)[2] * 1e6, 2)

        self.assertAlmostEqual(loss, 0.0)

    def test_gradient(self):
        """Ensure the loss gradient matches finite differences."""
        logits = np.random.default_rng(19).standard_normal(6)
        _, grad = softmax_xent(logits, 4)

        numeric = numeric_gradient(lambda: softmax_xent(logits, 4)[0], logits, h=1e-6)
        self.assertLess(relative_error(grad, numeric), 1e-6)

    def test_batch_mean(self):
        """Ensure batch loss and gradient are means over the rows."""
        logits = np.random.default_rng(20).standard_normal((5, 3))
        labels = np.array([0, 2, 1, 1, 0])
        loss, grad = softmax_xent(logits, labels)

        single = [softmax_xent(row, label) for row, label in zip(logits, labels)]
        self.assertAlmostEqual(loss, np.mean([s[0] for s in single]))
        np.testing.assert_allclose(grad, np.array([s[1] for s in single]) / 5)

    def test_softmax(self):
        """Ensure softmax rows sum to one and ignore a constant shift."""
        logits = np.random.default_rng(21).standard_normal((3, 7))
        probs = softmax(logits)

        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        np.testing.assert_array_equal(np.argmax(softmax(logits + 100.0), axis=1), np.argmax(probs, axis=1))


class AdamTestCase(unittest.TestCase):
    def test_zero_gradient(self):
        """Ensure a zero gradient leaves parameters alone."""
        params = {"w": np.array([1.0, -2.0])}
        adam_step(params, {"w": np.zeros(2)}, AdamState(), 0.1)

        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_is_sign(self):
        """Ensure the first step moves each parameter by the learning rate against its gradient."""
        params = {"w": np.zeros(3)}
        adam_step(params, {"w": np.array([5.0, -0.2, 30.0])}, AdamState(), 0.01)

        np.testing.assert_allclose(params["w"], [-0.01, 0.01, -0.01], rtol=1e-5)

    def test_minimizes_square(self):
        """Ensure Adam drives x squared toward zero."""
        params = {"w": np.array([1.0])}
        state = AdamState()
        for _ in range(100):
            adam_step(params, {"w": 2 * params["w"]}, state, 0.1)

        self.assertLess(abs(params["w"][0]), 0.1)
        self.assertEqual(state.step, 100)


if __name__ == '__main__':
    unittest.main()
