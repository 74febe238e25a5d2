import os

from song_speech_emotion.config import load_config
from song_speech_emotion.experiment import extract_all, run_experiment
from song_speech_emotion.hsf import FEATURE_SETS, FEATURE_TYPES
from song_speech_emotion.log import configure_logging


parameters = {
    "corpus_root": "data/RAVDESS",
    "cache_dir": "cache",
    "output_dir": "results/experiment",
    "workers": os.cpu_count() or 1,
}


tasks = [
    "speech",
    "song",
]


# Feature-set comparison with the LSTM classifier
feature_choices = [(feature_set, feature_type) for feature_set in FEATURE_SETS for feature_type in FEATURE_TYPES]

# Classifier comparison on L193 HSF
classifiers = [
    "MLP",
    "LSTM",
    "GRU",
    "CONV1D",
]


def main():
    configure_logging()
    if not os.path.exists(parameters["output_dir"]):
        os.makedirs(parameters["output_dir"])

    for task in tasks:
        print(f"Running experiment for task: {task}")
        run_task(task)


def run_task(task):
    config = load_config(overrides={**parameters, "task": task}).validate(require_corpus=True)
    extract_all(config, FEATURE_SETS)

    run_experiment(config, feature_choices, ["LSTM"], os.path.join(config.output_dir, "features"))
    run_experiment(config, [("L193", "HSF")], classifiers, os.path.join(config.output_dir, "classifiers"))


if __name__ == '__main__':
    main()
