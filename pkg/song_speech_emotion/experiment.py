"""Glue between a config, the corpus, the caches and the grid runner."""

from __future__ import annotations

from dataclasses import replace
import logging
from pathlib import Path
from typing import Callable, Sequence

import pandas as pd

from .classifiers import save_checkpoint, train
from .config import ExperimentConfig
from .evaluation import GridResult, Standardizer, run_grid
from .extraction import ExtractionSummary, extract_corpus
from .feature_cache import Dataset, cache_path, load_cache, load_dataset
from .ravdess import UtteranceRecord, scan_corpus
from .reporting import write_grid_outputs

logger = logging.getLogger(__name__)


def dataset_loader(cache_dir: str | Path, task: str,
                   records: Sequence[UtteranceRecord]) -> Callable[[str, str], Dataset]:
    def load(set_id: str, kind: str) -> Dataset:
        return load_dataset(load_cache(cache_path(cache_dir, task, set_id, kind)), records)

    return load


def extract_all(config: ExperimentConfig, feature_sets: Sequence[str]) -> list[ExtractionSummary]:
    records = scan_corpus(config.corpus_root, config.task)
    return [
        extract_corpus(
            records,
            set_id,
            config.cache_dir,
            config.task,
            params=config.feature_params(),
            workers=config.workers,
            hsf_before_padding=config.hsf_before_padding,
            progress=config.progress,
        )
        for set_id in feature_sets
    ]


def run_experiment(
    config: ExperimentConfig,
    feature_choices: Sequence[tuple[str, str]],
    classifiers: Sequence[str],
    output_dir: str | Path | None = None,
) -> GridResult:
    """Cross-validate the requested cells from cached features and write every result file."""
    records = scan_corpus(config.corpus_root, config.task)
    grid = run_grid(
        dataset_loader(config.cache_dir, config.task, records),
        feature_choices,
        classifiers,
        config.train_config(),
        task=config.task,
        n_classes=config.n_classes,
        n_folds=config.n_folds,
        fold_seed=config.fold_seed,
        fold_mode=config.fold_mode,
        model_options=config.model_options(),
        workers=config.workers,
        standardize=config.standardize,
        class_names=config.class_names,
    )
    output_dir = Path(output_dir or config.output_dir)
    write_grid_outputs(grid, output_dir, config.task)
    config.write(output_dir / f"config_{config.task}.yaml")
    return grid


def fit_final_model(
    config: ExperimentConfig,
    set_id: str,
    kind: str,
    classifier: str,
    output_dir: str | Path,
) -> Path:
    """Train one model on every utterance and save it as `model_<task>.serm`.

    With standardization on, the z-score statistics go next to it as
    `standardizer_<task>.csv` (one row per feature column).
    """
    records = scan_corpus(config.corpus_root, config.task)
    dataset = dataset_loader(config.cache_dir, config.task, records)(set_id, kind)
    output_dir = Path(output_dir)
    X = dataset.X
    if config.standardize:
        scaler = Standardizer().fit(X, dataset.lengths)
        X = scaler.transform(X, dataset.lengths)
        output_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({"mean": scaler.mean, "scale": scaler.scale}).to_csv(
            output_dir / f"standardizer_{config.task}.csv", index_label="column")

    spec = config.model_spec(X.shape[1:], classifier)
    result = train(spec, X, dataset.y, replace(config.train_config(), progress=False))
    path = output_dir / f"model_{config.task}.serm"
    save_checkpoint(path, result.model)
    logger.info("saved %s model trained on %d utterances to %s", spec.architecture, len(X), path)
    return path
