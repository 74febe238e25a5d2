"""Cross-validation, confusion matrices and the experiment grid."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
from multiprocessing import Pool
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import SongSpeechEmotionError
from .classifiers import ARCHITECTURES, ModelSpec, TrainConfig, train
from .hsf import FEATURE_SETS, FEATURE_TYPES

logger = logging.getLogger(__name__)


class FoldError(SongSpeechEmotionError, ValueError):
    """Raised when a class or group is too small for the requested folds."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion counts must be square, got shape {counts.shape}")
        if np.any(counts < 0) or not np.all(counts == np.round(counts)):
            raise ValueError("confusion counts must be nonnegative integers")
        names = tuple(self.class_names) or tuple(str(i) for i in range(counts.shape[0]))
        if len(names) != counts.shape[0]:
            raise ValueError(f"{len(names)} class names for {counts.shape[0]} classes")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "class_names", names)

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int, class_names: Sequence[str] = ()) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
        return cls(counts, tuple(class_names))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ValueError("cannot add confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def recalls(self) -> np.ndarray:
        """Per-class recall; NaN where the class has no support."""
        supports = self.supports
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(supports > 0, np.diag(self.counts) / supports, np.nan)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.counts,
            index=pd.Index(self.class_names, name="true"),
            columns=pd.Index(self.class_names, name="predicted"),
        )


def accuracy(cm: ConfusionMatrix) -> float:
    """Correctly classified utterances over all utterances."""
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts) / cm.total)


def uar(cm: ConfusionMatrix) -> float:
    """Unweighted average recall; classes without support are skipped."""
    recalls = cm.recalls()
    missing = np.isnan(recalls)
    if missing.all():
        raise ValueError("UAR of an empty confusion matrix is undefined")
    if missing.any():
        logger.warning(
            "UAR excludes classes without support: %s",
            ", ".join(name for name, gone in zip(cm.class_names, missing) if gone),
        )
    return float(np.nanmean(recalls))


@dataclass(frozen=True)
class FoldPlan:
    """Fold index per item; the folds partition the dataset."""

    k: int
    assignments: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def splits(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        for fold in range(self.k):
            yield fold, np.flatnonzero(self.assignments != fold), self.test_indices(fold)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def stratified_kfold(labels, k: int, seed: int) -> FoldPlan:
    """Seeded per-class shuffle, then round-robin fold assignment.

    The round-robin position carries over from one class to the next so the
    fold totals stay within one item of each other. A class with fewer than
    k members is spread over as many folds as it can fill, so some test
    folds lack it.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise FoldError(f"need at least 2 folds, got {k}")
    if len(labels) < k:
        raise FoldError(f"{len(labels)} items cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    assignments = np.empty(len(labels), dtype=int)
    offset = 0
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if len(members) < k:
            logger.warning("class %s has %d members, fewer than %d folds", label, len(members), k)
        members = rng.permutation(members)
        assignments[members] = (offset + np.arange(len(members))) % k
        offset = (offset + len(members)) % k
    return FoldPlan(k, assignments)


def grouped_kfold(labels, groups, k: int, seed: int) -> FoldPlan:
    """Assign whole groups (actors) to folds so no group spans train and test."""
    groups = np.asarray(groups)
    if len(groups) != len(labels):
        raise ValueError("labels and groups must have the same length")
    unique = np.unique(groups)
    if len(unique) < k:
        raise FoldError(f"{len(unique)} groups cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(unique)
    fold_of = {group: index % k for index, group in enumerate(order)}
    return FoldPlan(k, np.array([fold_of[group] for group in groups], dtype=int))


class Standardizer:
    """Per-feature z-score fitted on the real (unpadded) frames."""

    def __init__(self):
        self.mean: np.ndarray | None = None
        self.scale: np.ndarray | None = None

    @staticmethod
    def _mask(X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        return np.arange(X.shape[1])[np.newaxis, :] < np.asarray(lengths)[:, np.newaxis]

    def fit(self, X: np.ndarray, lengths: np.ndarray) -> "Standardizer":
        frames = X[self._mask(X, lengths)]
        self.mean = frames.mean(axis=0)
        std = frames.std(axis=0)
        self.scale = np.where(std > 1e-12, std, 1.0)
        return self

    def transform(self, X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        if self.mean is None:
            raise RuntimeError("standardizer has not been fitted")
        mask = self._mask(X, lengths)
        return np.where(mask[..., np.newaxis], (X - self.mean) / self.scale, 0.0)


@dataclass
class CellResult:
    """Cross-validated outcome of one (features, classifier) cell."""

    folds: pd.DataFrame
    confusion: ConfusionMatrix
    histories: list[pd.DataFrame] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(self.folds["accuracy"].mean())

    @property
    def mean_uar(self) -> float:
        return float(self.folds["uar"].mean())


def _run_fold(job):
    fold, spec, config, X_train, y_train, X_test, y_test = job
    result = train(spec, X_train, y_train, config)
    predictions, _ = result.model.predict(X_test)
    return fold, predictions, result.history


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    lengths: np.ndarray,
    spec: ModelSpec,
    train_config: TrainConfig,
    plan: FoldPlan,
    workers: int = 1,
    standardize: bool = True,
    class_names: Sequence[str] = (),
) -> CellResult:
    """Train and test one model per fold.

    Each fold trains with seed `train_config.seed + fold`; folds may run in a
    worker pool, and results are assembled in fold order.
    """
    y = np.asarray(y, dtype=int)
    jobs = []
    for fold, train_idx, test_idx in plan.splits():
        X_train, X_test = X[train_idx], X[test_idx]
        if standardize:
            scaler = Standardizer().fit(X_train, lengths[train_idx])
            X_train = scaler.transform(X_train, lengths[train_idx])
            X_test = scaler.transform(X_test, lengths[test_idx])
        fold_config = replace(train_config, seed=train_config.seed + fold, progress=False)
        jobs.append((fold, spec, fold_config, X_train, y[train_idx], X_test, y[test_idx]))

    progress = dict(total=len(jobs), desc="folds", disable=not train_config.progress, leave=False)
    if workers > 1:
        with Pool(processes=workers) as pool:
            outcomes = list(tqdm(pool.imap(_run_fold, jobs), **progress))
    else:
        outcomes = [_run_fold(job) for job in tqdm(jobs, **progress)]

    rows, histories = [], []
    total = ConfusionMatrix(np.zeros((spec.n_classes, spec.n_classes)), tuple(class_names))
    for fold, predictions, history in sorted(outcomes, key=lambda outcome: outcome[0]):
        cm = ConfusionMatrix.from_predictions(y[plan.test_indices(fold)], predictions, spec.n_classes, class_names)
        total = total + cm
        rows.append({"fold": fold, "accuracy": accuracy(cm), "uar": uar(cm)})
        histories.append(history.assign(fold=fold))
        logger.info("%s fold %d: accuracy %.3f, UAR %.3f", spec.architecture, fold, rows[-1]["accuracy"], rows[-1]["uar"])

    return CellResult(pd.DataFrame(rows), total, histories)


class GridCell(NamedTuple):
    feature_set: str
    feature_type: str
    classifier: str

    @property
    def label(self) -> str:
        return f"{self.feature_set}_{self.feature_type}_{self.classifier}"


def grid_cells(feature_choices: Sequence[tuple[str, str]], classifier_choices: Sequence[str]) -> list[GridCell]:
    """Cells in table order: G23, P34, L193 with LLD before HSF, then MLP, LSTM, GRU, CONV1D."""
    feature_rank = {(s, t): i for i, (s, t) in enumerate((s, t) for s in FEATURE_SETS for t in FEATURE_TYPES)}
    features = sorted(set(feature_choices), key=lambda choice: feature_rank[choice])
    classifiers = sorted({c.upper() for c in classifier_choices}, key=ARCHITECTURES.index)
    return [GridCell(s, t, c) for s, t in features for c in classifiers]


@dataclass
class GridResult:
    results: pd.DataFrame
    confusions: dict[GridCell, ConfusionMatrix]
    histories: dict[GridCell, pd.DataFrame]


def run_grid(
    load_dataset: Callable[[str, str], "object"],
    feature_choices: Sequence[tuple[str, str]],
    classifier_choices: Sequence[str],
    train_config: TrainConfig,
    *,
    task: str,
    n_classes: int,
    n_folds: int = 10,
    fold_seed: int = 2020,
    fold_mode: str = "utterance",
    model_options: dict | None = None,
    workers: int = 1,
    standardize: bool = True,
    class_names: Sequence[str] = (),
) -> GridResult:
    """Cross-validate every (feature set, type) x classifier cell.

    Args:
        load_dataset: Returns a dataset with X, y, lengths and actors for a
            (feature_set, feature_type) pair; raises if the cache is missing.
        feature_choices: (feature_set, feature_type) pairs.
        classifier_choices: Architecture names.
        train_config: Optimizer and loop settings shared by all cells.
        task: "speech" or "song", copied into the result rows.
        n_classes: Size of the class inventory.
        model_options: Extra ModelSpec fields (hidden_units, conv_kernels, ...).

    Returns:
        Per-fold rows followed by one "mean" row per cell, the summed
        confusion matrix per cell and the concatenated training histories.
    """
    rows = []
    confusions: dict[GridCell, ConfusionMatrix] = {}
    histories: dict[GridCell, pd.DataFrame] = {}
    datasets = {}
    plans = {}

    for cell in grid_cells(feature_choices, classifier_choices):
        key = (cell.feature_set, cell.feature_type)
        if key not in datasets:
            datasets[key] = data = load_dataset(*key)
            if fold_mode == "actor":
                plans[key] = grouped_kfold(data.y, data.actors, n_folds, fold_seed)
            elif fold_mode == "utterance":
                plans[key] = stratified_kfold(data.y, n_folds, fold_seed)
            else:
                raise ValueError(f"unknown fold_mode {fold_mode!r}")
        data = datasets[key]

        spec = ModelSpec(cell.classifier, data.X.shape[1:], n_classes, **(model_options or {}))
        logger.info("cross-validating %s on %s (%d utterances)", cell.classifier, " ".join(key), len(data.y))
        result = cross_validate(data.X, data.y, data.lengths, spec, train_config, plans[key],
                                workers=workers, standardize=standardize, class_names=class_names)

        ident = {"feature_set": cell.feature_set, "feature_type": cell.feature_type,
                 "classifier": cell.classifier, "task": task}
        rows.extend({**ident, **fold_row} for fold_row in result.folds.to_dict("records"))
        rows.append({**ident, "fold": "mean", "accuracy": result.mean_accuracy, "uar": result.mean_uar})
        confusions[cell] = result.confusion
        histories[cell] = pd.concat(result.histories, ignore_index=True)

    columns = ["feature_set", "feature_type", "classifier", "task", "fold", "accuracy", "uar"]
    return GridResult(pd.DataFrame(rows, columns=columns), confusions, histories)
