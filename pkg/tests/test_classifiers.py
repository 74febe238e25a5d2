import os
import tempfile
import unittest

import numpy as np

from song_speech_emotion.classifiers import (
    CheckpointError,
    ModelSpec,
    TrainConfig,
    TrainingDivergedError,
    build_classifier,
    evaluate_loss,
    holdout_split,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from song_speech_emotion.layers import ShapeError, softmax


def separable(n_per_class, frames, features, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 0.3, (2 * n_per_class, frames, features))
    y = np.repeat([0, 1], n_per_class)
    X[y == 0] -= 1.0
    X[y == 1] += 1.0
    return X, y


FAST = TrainConfig(learning_rate=0.01, epochs=200, batch_size=8, validation_fraction=0.0)


class ModelSpecTestCase(unittest.TestCase):
    def test_architecture_is_normalized(self):
        """Ensure architecture names are upper-cased."""
        self.assertEqual(ModelSpec("lstm", (523, 23), 8).architecture, "LSTM")

    def test_rejects_unknown_architecture(self):
        """Ensure an unknown architecture is refused."""
        with self.assertRaises(ValueError):
            ModelSpec("CNN2D", (1, 46), 8)

    def test_rejects_single_class(self):
        """Ensure a single-class problem is refused."""
        with self.assertRaises(ValueError):
            ModelSpec("MLP", (1, 46), 1)

    def test_hsf_conv_uses_feature_axis(self):
        """Ensure a conv model on HSF input convolves over the features."""
        spec = ModelSpec("CONV1D", (1, 46), 8)

        self.assertTrue(spec.transposes_input)
        self.assertEqual(spec.layer_input_shape, (46, 1))

    def test_round_trip_dict(self):
        """Ensure a spec survives conversion to a dict and back."""
        spec = ModelSpec("GRU", (633, 34), 6, hidden_units=32, dropout_p=0.2)

        self.assertEqual(ModelSpec.from_dict(spec.to_dict()), spec)


class BuildTestCase(unittest.TestCase):
    def test_output_is_one_logit_per_class(self):
        """Ensure every architecture emits one logit per class."""
        for architecture in ("MLP", "LSTM", "GRU", "CONV1D"):
            spec = ModelSpec(architecture, (24, 5), 6, hidden_units=4)
            logits = build_classifier(spec, 0).forward(np.zeros((3, 24, 5)))

            self.assertEqual(logits.shape, (3, 6), architecture)

    def test_three_hidden_layers_then_head(self):
        """Ensure the LSTM stacks three layers before the dense head."""
        model = build_classifier(ModelSpec("LSTM", (10, 3), 8, hidden_units=4), 0)

        self.assertEqual([type(layer).__name__ for layer in model.layers],
                         ["LSTM", "LSTM", "LSTM", "Flatten", "Dropout", "Dense"])

    def test_same_seed_same_weights(self):
        """Ensure a seed fixes the initial weights."""
        spec = ModelSpec("GRU", (4, 3), 8, hidden_units=4)
        first = build_classifier(spec, 7).get_params()
        second = build_classifier(spec, 7).get_params()

        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_conv_hsf_feature_axis(self):
        """Ensure a conv model accepts one-frame HSF input."""
        model = build_classifier(ModelSpec("CONV1D", (1, 46), 8, hidden_units=4), 0)

        self.assertEqual(model.forward(np.zeros((2, 1, 46))).shape, (2, 8))

    def test_conv_stride_mode_too_short(self):
        """Ensure strided kernels that outgrow the input are refused."""
        with self.assertRaises(ShapeError):
            build_classifier(ModelSpec("CONV1D", (1, 46), 8, hidden_units=4, conv_mode="stride"), 0)

    def test_conv_hsf_time_axis_too_short(self):
        """Ensure convolving a one-frame input over time is refused."""
        with self.assertRaises(ShapeError):
            build_classifier(ModelSpec("CONV1D", (1, 46), 8, hidden_units=4, conv_hsf_layout="time_axis"), 0)

    def test_wrong_input_shape(self):
        """Ensure input of the wrong width is refused."""
        model = build_classifier(ModelSpec("MLP", (1, 46), 8, hidden_units=4), 0)

        with self.assertRaises(ShapeError):
            model.forward(np.zeros((2, 1, 68)))


class TrainTestCase(unittest.TestCase):
    def assert_learns(self, architecture, frames):
        X, y = separable(20, frames, 4)
        spec = ModelSpec(architecture, (frames, 4), 2, hidden_units=8, dropout_p=0.0)
        result = train(spec, X, y, FAST)
        _, accuracy = evaluate_loss(result.model, X, y)

        self.assertGreaterEqual(accuracy, 0.99)
        self.assertEqual(list(result.history.columns), ["epoch", "loss", "accuracy"])

    def test_mlp_learns_separable_data(self):
        """Ensure the MLP fits separable data."""
        self.assert_learns("MLP", 1)

    def test_lstm_learns_separable_data(self):
        """Ensure the LSTM fits separable sequences."""
        self.assert_learns("LSTM", 5)

    def test_gru_learns_separable_data(self):
        """Ensure the GRU fits separable sequences."""
        self.assert_learns("GRU", 5)

    def test_conv_learns_separable_data(self):
        """Ensure the conv model fits separable sequences."""
        self.assert_learns("CONV1D", 24)

    def test_identical_seeds_identical_parameters(self):
        """Ensure training twice with one seed gives identical parameters."""
        X, y = separable(10, 3, 4)
        spec = ModelSpec("LSTM", (3, 4), 2, hidden_units=4)
        config = TrainConfig(learning_rate=0.01, epochs=5, batch_size=4)
        first = train(spec, X, y, config).model.get_params()
        second = train(spec, X, y, config).model.get_params()

        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_zero_learning_rate(self):
        """Ensure a zero learning rate leaves the initial weights untouched."""
        X, y = separable(10, 1, 4)
        spec = ModelSpec("MLP", (1, 4), 2, hidden_units=4)
        config = TrainConfig(learning_rate=0.0, epochs=5, batch_size=4, validation_fraction=0.0, seed=3)
        result = train(spec, X, y, config)
        initial = build_classifier(spec, 3).get_params()

        for name, value in result.model.get_params().items():
            np.testing.assert_array_equal(value, initial[name])
        self.assertEqual(result.history["loss"].nunique(), 1)

    def test_early_stopping_restores_best(self):
        """Ensure the returned model is the one with the lowest validation loss."""
        X, y = separable(20, 1, 4, seed=1)
        X += np.random.default_rng(2).normal(0, 1.5, X.shape)
        spec = ModelSpec("MLP", (1, 4), 2, hidden_units=16, dropout_p=0.0)
        config = TrainConfig(learning_rate=0.05, epochs=60, batch_size=4, validation_fraction=0.2, patience=3)
        result = train(spec, X, y, config)

        _, held = holdout_split(y, 0.2, config.seed)
        val_loss, _ = evaluate_loss(result.model, X[held], y[held])
        self.assertAlmostEqual(val_loss, result.history["val_loss"].min(), places=10)
        self.assertIn("val_accuracy", result.history.columns)

    def test_divergence(self):
        """Ensure an infinite loss stops training with TrainingDivergedError."""
        X = np.full((4, 1, 3), np.inf)
        spec = ModelSpec("MLP", (1, 3), 2, hidden_units=4)

        with np.errstate(all="ignore"), self.assertRaises(TrainingDivergedError) as caught:
            train(spec, X, np.array([0, 1, 0, 1]), TrainConfig(validation_fraction=0.0))
        self.assertEqual(caught.exception.epoch, 0)

    def test_rejects_out_of_range_labels(self):
        """Ensure labels outside the class range are refused."""
        with self.assertRaises(ValueError):
            train(ModelSpec("MLP", (1, 3), 2), np.zeros((2, 1, 3)), np.array([0, 2]), FAST)


class HoldoutTestCase(unittest.TestCase):
    def test_stratified(self):
        """Ensure the held-out slice takes from every class without overlap."""
        y = np.repeat([0, 1, 2], 10)
        train_idx, held = holdout_split(y, 0.1, 0)

        self.assertEqual(sorted(y[held]), [0, 1, 2])
        self.assertEqual(len(train_idx) + len(held), 30)
        self.assertFalse(set(train_idx) & set(held))

    def test_singleton_class_stays_in_train(self):
        """Ensure a class with one member is never held out."""
        _, held = holdout_split(np.array([0, 0, 0, 0, 1]), 0.5, 0)

        self.assertNotIn(4, held)


class PredictTestCase(unittest.TestCase):
    def setUp(self):
        """Set up an untrained GRU and one input."""
        self.model = build_classifier(ModelSpec("GRU", (6, 3), 8, hidden_units=4), 1)
        self.x = np.random.default_rng(3).standard_normal((6, 3))

    def test_probabilities(self):
        """Ensure the label is the most probable class and probabilities sum to one."""
        label, probabilities = predict(self.model, self.x)

        self.assertAlmostEqual(probabilities.sum(), 1.0)
        self.assertEqual(label, int(np.argmax(probabilities)))

    def test_matches_forward_pass(self):
        """Ensure predict is the softmax of the forward pass."""
        _, probabilities = predict(self.model, self.x)

        np.testing.assert_allclose(probabilities, softmax(self.model.forward(self.x[np.newaxis]))[0])


class CheckpointTestCase(unittest.TestCase):
    def setUp(self):
        """Set up a conv model and a checkpoint path."""
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "model.serm")
        self.model = build_classifier(ModelSpec("CONV1D", (1, 34), 6, hidden_units=4), 5)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        """Ensure a reloaded checkpoint predicts exactly like the original."""
        x = np.random.default_rng(4).standard_normal((3, 1, 34))
        save_checkpoint(self.path, self.model)
        loaded = load_checkpoint(self.path)

        self.assertEqual(loaded.spec, self.model.spec)
        np.testing.assert_array_equal(loaded.predict_proba(x), self.model.predict_proba(x))

    def test_rejects_other_files(self):
        """Ensure a file with the wrong magic is refused."""
        with open(self.path, "wb") as handle:
            handle.write(b"RIFF....WAVE")

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_rejects_truncated_blob(self):
        """Ensure a checkpoint missing parameter bytes is refused."""
        save_checkpoint(self.path, self.model)
        with open(self.path, "rb") as handle:
            data = handle.read()
        with open(self.path, "wb") as handle:
            handle.write(data[:-16])

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)


if __name__ == '__main__':
    unittest.main()
