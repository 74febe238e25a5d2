import os
import tempfile
import unittest

import numpy as np
import pandas as pd
from click.testing import CliRunner

from song_speech_emotion.audio_io import AudioClip, write_wav
from song_speech_emotion.classifiers import load_checkpoint, predict
from song_speech_emotion.cli import main
from song_speech_emotion.evaluation import Standardizer
from song_speech_emotion.feature_cache import cache_path, load_cache, load_dataset
from song_speech_emotion.ravdess import scan_corpus

FS = 16000


def write_corpus(root):
    t = np.arange(int(0.2 * FS)) / FS
    for actor in (1, 2):
        actor_dir = os.path.join(root, f"Actor_{actor:02d}")
        os.makedirs(actor_dir)
        for emotion in range(1, 9):
            samples = 0.3 * np.sin(2 * np.pi * (100 + 30 * emotion + 7 * actor) * t)
            name = f"03-01-{emotion:02d}-01-01-01-{actor:02d}.wav"
            write_wav(os.path.join(actor_dir, name), AudioClip.from_samples(samples, FS))


class CliTestCase(unittest.TestCase):
    def setUp(self):
        """Set up paths for a corpus, a cache and a results directory."""
        self.tmp = tempfile.TemporaryDirectory()
        self.corpus = os.path.join(self.tmp.name, "ravdess")
        self.cache = os.path.join(self.tmp.name, "cache")
        self.output = os.path.join(self.tmp.name, "results")
        self.runner = CliRunner()

    def tearDown(self):
        self.tmp.cleanup()

    def invoke(self, *args):
        common = ["--corpus-root", self.corpus, "--cache-dir", self.cache, "--output-dir", self.output,
                  "--set", "progress=false"]
        return self.runner.invoke(main, ["-q", args[0], *common, *args[1:]])

    def test_missing_corpus(self):
        """Ensure extract fails cleanly without a corpus."""
        result = self.invoke("extract")

        self.assertNotEqual(result.exit_code, 0)
        self.assertIn("does not exist", result.output)

    def test_unknown_override(self):
        """Ensure an unknown --set key is named in the error."""
        write_corpus(self.corpus)
        result = self.invoke("extract", "--set", "bogus_key=1")

        self.assertNotEqual(result.exit_code, 0)
        self.assertIn("bogus_key", result.output)

    def test_extract_twice(self):
        """Ensure a second extract reuses every cached utterance."""
        write_corpus(self.corpus)
        first = self.invoke("extract", "--feature-set", "P34")
        second = self.invoke("extract", "--feature-set", "p34")

        self.assertEqual(first.exit_code, 0, first.output)
        self.assertIn("extracted 16", first.output)
        self.assertEqual(second.exit_code, 0, second.output)
        self.assertIn("all 16 utterances cached", second.output)

    def test_report_without_results(self):
        """Ensure report fails when there are no results files."""
        result = self.invoke("report")

        self.assertNotEqual(result.exit_code, 0)
        self.assertIn("results_", result.output)

    def test_grid_then_report(self):
        """Ensure a small grid followed by report writes every result file."""
        write_corpus(self.corpus)
        self.assertEqual(self.invoke("extract", "--feature-set", "P34").exit_code, 0)
        grid = self.invoke("grid", "--feature-set", "P34", "--feature-type", "HSF", "--classifier", "MLP",
                           "--epochs", "2", "--set", "n_folds=2", "--set", "hidden_units=4",
                           "--set", "validation_fraction=0")
        self.assertEqual(grid.exit_code, 0, grid.output)

        report = self.invoke("report")

        self.assertEqual(report.exit_code, 0, report.output)
        for name in ("results.csv", "results_speech.csv", "config_speech.yaml",
                     "confusion_speech_P34_HSF_MLP.csv", "confusion_speech_P34_HSF_MLP.ppm",
                     "confusion_speech_P34_HSF_MLP.png", "history_speech_P34_HSF_MLP.csv"):
            self.assertTrue(os.path.exists(os.path.join(self.output, name)), name)

    def test_train_saves_a_usable_model(self):
        """Ensure train writes a checkpoint and standardizer that classify cached utterances."""
        write_corpus(self.corpus)
        self.assertEqual(self.invoke("extract", "--feature-set", "P34").exit_code, 0)
        result = self.invoke("train", "--feature-set", "P34", "--feature-type", "HSF", "--classifier", "MLP",
                             "--epochs", "2", "--set", "n_folds=2", "--set", "hidden_units=4",
                             "--set", "validation_fraction=0")
        self.assertEqual(result.exit_code, 0, result.output)

        cell_dir = os.path.join(self.output, "P34_HSF_MLP")
        self.assertTrue(os.path.exists(os.path.join(cell_dir, "results_speech.csv")))
        model = load_checkpoint(os.path.join(cell_dir, "model_speech.serm"))
        dataset = load_dataset(load_cache(cache_path(self.cache, "speech", "P34", "HSF")),
                               scan_corpus(self.corpus, "speech"))
        self.assertEqual((model.spec.architecture, model.spec.n_classes), ("MLP", 8))
        self.assertEqual(model.spec.input_shape, dataset.X.shape[1:])

        stats = pd.read_csv(os.path.join(cell_dir, "standardizer_speech.csv"), index_col="column")
        scaler = Standardizer()
        scaler.mean, scaler.scale = stats["mean"].to_numpy(), stats["scale"].to_numpy()
        X = scaler.transform(dataset.X, dataset.lengths)
        for row in X[:4]:
            label, probabilities = predict(model, row)
            self.assertIn(label, range(8))
            self.assertEqual(label, int(np.argmax(probabilities)))
            self.assertAlmostEqual(float(probabilities.sum()), 1.0, places=9)


if __name__ == '__main__':
    unittest.main()
