"""The four emotion classifiers and their training loop.

Every architecture is a stack of three hidden layers (dense, LSTM, GRU or
Conv1D), flattened, followed by dropout and a softmax dense head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
import json
import logging
from pathlib import Path
import struct
from typing import NamedTuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import SongSpeechEmotionError
from .layers import (
    GRU,
    LSTM,
    AdamState,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    ShapeError,
    adam_step,
    softmax,
    softmax_xent,
)

logger = logging.getLogger(__name__)

ARCHITECTURES = ("MLP", "LSTM", "GRU", "CONV1D")
CONV_MODES = ("kernel_length", "stride")
CONV_HSF_LAYOUTS = ("feature_axis", "time_axis")

CHECKPOINT_MAGIC = b"SERM"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(SongSpeechEmotionError, ArithmeticError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss

    def __reduce__(self):
        return type(self), (self.epoch, self.batch, self.loss)


class CheckpointError(SongSpeechEmotionError, ValueError):
    """Raised when a checkpoint file cannot be read back."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of one classifier.

    Attributes:
        architecture: MLP, LSTM, GRU or CONV1D.
        input_shape: (frames, features); HSF input is (1, features).
        n_classes: 8 for speech, 6 for song.
        hidden_units: Units (or channels) per hidden layer.
        n_layers: Number of stacked hidden layers.
        dropout_p: Dropout probability before the head.
        conv_kernels: Kernel length per conv layer.
        conv_mode: "kernel_length" uses stride 1; "stride" uses stride = kernel length.
        conv_hsf_layout: For (1, D) input, "feature_axis" convolves over the D features.
    """

    architecture: str
    input_shape: tuple[int, int]
    n_classes: int
    hidden_units: int = 256
    n_layers: int = 3
    dropout_p: float = 0.4
    conv_kernels: tuple[int, ...] = (4, 8, 12)
    conv_mode: str = "kernel_length"
    conv_hsf_layout: str = "feature_axis"

    def __post_init__(self):
        object.__setattr__(self, "architecture", self.architecture.upper())
        object.__setattr__(self, "input_shape", tuple(int(n) for n in self.input_shape))
        object.__setattr__(self, "conv_kernels", tuple(int(k) for k in self.conv_kernels))
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}, expected one of {ARCHITECTURES}")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (frames, features), got {self.input_shape}")
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.hidden_units < 1 or self.n_layers < 1:
            raise ValueError("hidden_units and n_layers must be positive")
        if self.conv_mode not in CONV_MODES:
            raise ValueError(f"unknown conv_mode {self.conv_mode!r}")
        if self.conv_hsf_layout not in CONV_HSF_LAYOUTS:
            raise ValueError(f"unknown conv_hsf_layout {self.conv_hsf_layout!r}")
        if self.architecture == "CONV1D" and len(self.conv_kernels) < self.n_layers:
            raise ValueError(f"{self.n_layers} conv layers need as many kernel lengths, got {self.conv_kernels}")

    @property
    def transposes_input(self) -> bool:
        return (
            self.architecture == "CONV1D"
            and self.input_shape[0] == 1
            and self.conv_hsf_layout == "feature_axis"
        )

    @property
    def layer_input_shape(self) -> tuple[int, int]:
        """Shape seen by the first layer after any HSF re-layout."""
        return self.input_shape[::-1] if self.transposes_input else self.input_shape

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelSpec":
        return cls(**values)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 16
    seed: int = 42
    patience: int = 10
    validation_fraction: float = 0.1
    progress: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")


class Classifier:
    """An ordered stack of layers ending in class logits."""

    def __init__(self, spec: ModelSpec, layers: list[Layer], seed: int):
        self.spec = spec
        self.layers = layers
        self.seed = seed

    def arrange(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[np.newaxis]
        if X.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"model expects inputs of shape {self.spec.input_shape}, got {X.shape[1:]}")
        return X.transpose(0, 2, 1) if self.spec.transposes_input else X

    def forward(self, X: np.ndarray, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        out = self.arrange(X)
        for layer in self.layers:
            out = layer.forward(out, training=training, rng=rng)
        return out

    def backward(self, dlogits: np.ndarray) -> None:
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            f"{index}.{name}": array
            for index, layer in enumerate(self.layers)
            for name, array in layer.params.items()
        }

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            f"{index}.{name}": array
            for index, layer in enumerate(self.layers)
            for name, array in layer.grads.items()
        }

    def get_params(self) -> dict[str, np.ndarray]:
        return {name: array.copy() for name, array in self.parameters().items()}

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for name, array in self.parameters().items():
            array[...] = values[name]

    def predict_proba(self, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[np.newaxis]
        chunks = [softmax(self.forward(X[start:start + batch_size])) for start in range(0, len(X), batch_size)]
        return np.concatenate(chunks)

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (class indices, probability rows) for a batch."""
        probabilities = self.predict_proba(X)
        return probabilities.argmax(axis=1), probabilities


def build_classifier(spec: ModelSpec, seed: int) -> Classifier:
    """Initialize a classifier for `spec`; the seed fixes every weight."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    shape = spec.layer_input_shape
    layers: list[Layer] = []

    for index in range(spec.n_layers):
        n_in = shape[-1]
        if spec.architecture == "MLP":
            layer = Dense(n_in, spec.hidden_units, "relu", rng)
        elif spec.architecture == "LSTM":
            layer = LSTM(n_in, spec.hidden_units, rng)
        elif spec.architecture == "GRU":
            layer = GRU(n_in, spec.hidden_units, rng)
        else:
            kernel_len = spec.conv_kernels[index]
            stride = kernel_len if spec.conv_mode == "stride" else 1
            if shape[0] < kernel_len:
                raise ShapeError(
                    f"conv layer {index + 1} (kernel {kernel_len}) gets only {shape[0]} steps "
                    f"from input {spec.input_shape}"
                )
            layer = Conv1D(n_in, spec.hidden_units, kernel_len, rng, stride=stride)
        shape = layer.output_shape(shape)
        layers.append(layer)

    flatten = Flatten()
    layers.append(flatten)
    flat_width = flatten.output_shape(shape)[0]
    layers.append(Dropout(spec.dropout_p))
    layers.append(Dense(flat_width, spec.n_classes, "linear", rng))
    return Classifier(spec, layers, seed)


def evaluate_loss(model: Classifier, X: np.ndarray, y: np.ndarray, batch_size: int = 64) -> tuple[float, float]:
    """Inference-mode mean loss and accuracy."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(X), batch_size):
        logits = model.forward(X[start:start + batch_size])
        labels = y[start:start + batch_size]
        loss, _ = softmax_xent(logits, labels)
        total_loss += loss * len(labels)
        correct += int(np.sum(logits.argmax(axis=1) == labels))
    return total_loss / len(X), correct / len(X)


def holdout_split(y: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified split into (train indices, validation indices).

    Classes with fewer than two members stay entirely in the train part.
    """
    rng = np.random.default_rng(seed)
    train, held = [], []
    for label in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == label))
        n_held = int(round(fraction * len(members))) if len(members) > 1 else 0
        n_held = min(n_held, len(members) - 1)
        held.extend(members[:n_held])
        train.extend(members[n_held:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(held, dtype=int))


class TrainResult(NamedTuple):
    model: Classifier
    history: pd.DataFrame


def train(spec: ModelSpec, X: np.ndarray, y: np.ndarray, config: TrainConfig) -> TrainResult:
    """Train a freshly initialized classifier with mini-batch Adam.

    A stratified validation slice is held out when `validation_fraction` is
    positive; the parameters with the lowest validation loss are restored
    once `patience` epochs pass without improvement or training ends.

    Raises:
        TrainingDivergedError: If a batch loss is NaN or infinite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError(f"need matching nonempty data, got {len(X)} inputs and {len(y)} labels")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ValueError(f"labels must lie in [0, {spec.n_classes})")

    model = build_classifier(spec, config.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])

    X_val = y_val = None
    if config.validation_fraction > 0:
        train_idx, val_idx = holdout_split(y, config.validation_fraction, config.seed)
        if len(val_idx):
            X_val, y_val = X[val_idx], y[val_idx]
            X, y = X[train_idx], y[train_idx]

    params = model.parameters()
    state = AdamState()
    rows = []
    best_loss, best_params, waited = np.inf, None, 0

    epochs = tqdm(range(config.epochs), desc=spec.architecture, disable=not config.progress, leave=False)
    for epoch in epochs:
        order = shuffle_rng.permutation(len(X))
        for batch, start in enumerate(range(0, len(X), config.batch_size)):
            index = order[start:start + config.batch_size]
            logits = model.forward(X[index], training=True, rng=shuffle_rng)
            loss, dlogits = softmax_xent(logits, y[index])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, batch, loss)
            model.backward(dlogits)
            adam_step(params, model.gradients(), state, config.learning_rate,
                      config.beta1, config.beta2, config.epsilon)

        row = dict(zip(("epoch", "loss", "accuracy"), (epoch, *evaluate_loss(model, X, y))))
        if X_val is not None:
            row["val_loss"], row["val_accuracy"] = evaluate_loss(model, X_val, y_val)
        rows.append(row)
        logger.debug("epoch %d: %s", epoch, {k: round(v, 4) for k, v in row.items() if k != "epoch"})

        if X_val is not None:
            if row["val_loss"] < best_loss:
                best_loss, best_params, waited = row["val_loss"], model.get_params(), 0
            else:
                waited += 1
                if waited >= config.patience:
                    logger.debug("early stop after epoch %d", epoch)
                    break

    if best_params is not None:
        model.set_params(best_params)
    return TrainResult(model, pd.DataFrame(rows))


def predict(model: Classifier, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Class index and probability vector for one input."""
    labels, probabilities = model.predict(np.asarray(x)[np.newaxis])
    return int(labels[0]), probabilities[0]


# Checkpoints: b"SERM", u16 version, u32 header length, JSON header, f64 LE blob.

def save_checkpoint(path: str | Path, model: Classifier) -> None:
    params = model.parameters()
    header = json.dumps({
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "parameters": [{"name": name, "shape": list(array.shape)} for name, array in params.items()],
    }).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(array, dtype="<f8").tobytes() for array in params.values())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as file:
        file.write(CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
        file.write(header)
        file.write(blob)


def load_checkpoint(path: str | Path) -> Classifier:
    """Rebuild a classifier from a file written by save_checkpoint."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    try:
        version, header_len = struct.unpack_from("<HI", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(data[10:10 + header_len].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        model = build_classifier(spec, header["seed"])
    except (struct.error, json.JSONDecodeError, KeyError, TypeError, ValueError) as error:
        if isinstance(error, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable header ({error})") from error

    params = model.parameters()
    stored = [(entry["name"], tuple(entry["shape"])) for entry in header["parameters"]]
    expected = [(name, array.shape) for name, array in params.items()]
    if stored != expected:
        raise CheckpointError(f"{path}: parameter layout does not match the architecture")

    n_values = sum(array.size for array in params.values())
    if len(data) - 10 - header_len != 8 * n_values:
        raise CheckpointError(f"{path}: expected {n_values} values, found {(len(data) - 10 - header_len) / 8:g}")
    blob = np.frombuffer(data, dtype="<f8", offset=10 + header_len)
    offset = 0
    for array in params.values():
        array[...] = blob[offset:offset + array.size].reshape(array.shape)
        offset += array.size
    return model
