"""Turn per-utterance LLD matrices into fixed-shape model inputs."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence

import numpy as np

from .dsp_core import FrameMatrix

logger = logging.getLogger(__name__)

FEATURE_WIDTHS = {"G23": 23, "P34": 34, "L193": 193}
FEATURE_SETS = tuple(FEATURE_WIDTHS)
FEATURE_TYPES = ("LLD", "HSF")


@dataclass(frozen=True)
class FeatureVector:
    """One utterance-level feature vector.

    Attributes:
        values: The feature values.
        kind: "LLD" for a flattened padded matrix, "HSF" for Mean+Std.
        set_id: The feature set (G23, P34 or L193).
    """

    values: np.ndarray
    kind: str
    set_id: str

    def __post_init__(self):
        if self.kind not in FEATURE_TYPES:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.set_id not in FEATURE_WIDTHS:
            raise ValueError(f"unknown feature set {self.set_id!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector contains non-finite values")
        if self.kind == "HSF" and len(self.values) != 2 * FEATURE_WIDTHS[self.set_id]:
            raise ValueError(
                f"{self.set_id} HSF must have {2 * FEATURE_WIDTHS[self.set_id]} values, got {len(self.values)}"
            )


def set_id_for_width(width: int) -> str:
    for set_id, set_width in FEATURE_WIDTHS.items():
        if set_width == width:
            return set_id
    raise ValueError(f"no feature set has {width} columns")


def mean_std(m: FrameMatrix) -> FeatureVector:
    """Concatenate column means and population standard deviations."""
    values = np.concatenate((m.values.mean(axis=0), m.values.std(axis=0)))
    return FeatureVector(values, "HSF", m.set_id or set_id_for_width(m.n_columns))


def pad_or_truncate(m: FrameMatrix, target_frames: int) -> FrameMatrix:
    """Append zero rows or drop tail rows so the matrix has target_frames rows."""
    if target_frames < 1:
        raise ValueError(f"target_frames must be >= 1, got {target_frames}")
    if m.n_frames >= target_frames:
        values = m.values[:target_frames]
    else:
        values = np.zeros((target_frames, m.n_columns))
        values[:m.n_frames] = m.values
    return FrameMatrix(values, m.frame_hop_s, m.frame_len_s, m.column_names, m.set_id)


def utterance_hsf(m: FrameMatrix, target_frames: int, before_padding: bool = True) -> FeatureVector:
    """Mean+Std of one utterance.

    Statistics are taken over the real frames unless `before_padding` is
    False, in which case the padded matrix is used (sensitivity runs only).
    """
    if before_padding:
        return mean_std(m)
    return mean_std(pad_or_truncate(m, target_frames))


def to_model_input(
    matrices: Sequence[np.ndarray],
    kind: str,
    target_frames: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-utterance arrays into a model tensor.

    Args:
        matrices: LLD matrices (frames x features) or HSF vectors.
        kind: "LLD" pads/truncates to (N, target_frames, D); "HSF" gives (N, 1, D).
        target_frames: Frame count for the LLD tensor.

    Returns:
        (X, lengths): the tensor and the number of real frames per utterance.
    """
    if kind == "HSF":
        X = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in matrices])[:, np.newaxis, :]
        return X, np.ones(len(matrices), dtype=int)
    if kind != "LLD":
        raise ValueError(f"unknown feature kind {kind!r}")

    width = np.asarray(matrices[0]).shape[1]
    X = np.zeros((len(matrices), target_frames, width))
    lengths = np.zeros(len(matrices), dtype=int)
    for index, matrix in enumerate(matrices):
        rows = min(len(matrix), target_frames)
        X[index, :rows] = np.asarray(matrix)[:rows]
        lengths[index] = rows
    return X, lengths
