"""Result files: results.csv, confusion matrices, heatmaps and summary tables."""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from PIL import Image  # noqa: E402
import seaborn as sns  # noqa: E402

from .evaluation import ConfusionMatrix, GridCell, GridResult  # noqa: E402
from .hsf import FEATURE_SETS, FEATURE_TYPES  # noqa: E402
from .classifiers import ARCHITECTURES  # noqa: E402

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["feature_set", "feature_type", "classifier", "task", "fold", "accuracy", "uar"]
FEATURE_ORDER = [f"{s} {t}" for s in FEATURE_SETS for t in FEATURE_TYPES]


def write_results_csv(results: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results[RESULT_COLUMNS].to_csv(path, index=False, float_format="%.6f")
    return path


def read_results_csv(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"fold": str})


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cm.to_frame().to_csv(path)
    return path


def heatmap_pixels(cm: ConfusionMatrix, cell_px: int = 24) -> np.ndarray:
    """RGB image of row-normalized counts, white (0) to dark blue (1)."""
    supports = cm.supports[:, np.newaxis]
    share = np.divide(cm.counts, supports, out=np.zeros(cm.counts.shape), where=supports > 0)
    white = np.array([255.0, 255.0, 255.0])
    blue = np.array([8.0, 48.0, 107.0])
    rgb = white + share[..., np.newaxis] * (blue - white)
    pixels = np.kron(rgb, np.ones((cell_px, cell_px, 1)))
    return np.round(pixels).astype(np.uint8)


def write_heatmap(cm: ConfusionMatrix, stem: str | Path, title: str = "") -> tuple[Path, Path]:
    """Write `<stem>.ppm` (portable pixel map) and an annotated `<stem>.png`."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    ppm = stem.with_suffix(".ppm")
    Image.fromarray(heatmap_pixels(cm)).save(ppm, format="PPM")

    png = stem.with_suffix(".png")
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * cm.n_classes, 0.8 + 0.7 * cm.n_classes))
    sns.heatmap(cm.to_frame(), annot=True, fmt="d", cmap="Blues", cbar=False, ax=ax)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return ppm, png


def per_class_recall(confusions: dict[GridCell, ConfusionMatrix]) -> pd.DataFrame:
    """One row per cell, one column per emotion."""
    rows = []
    for cell, cm in confusions.items():
        rows.append({**cell._asdict(), **dict(zip(cm.class_names, cm.recalls()))})
    return pd.DataFrame(rows)


def mean_rows(results: pd.DataFrame) -> pd.DataFrame:
    means = results[results["fold"].astype(str) == "mean"].copy()
    means["accuracy"] = means["accuracy"].astype(float)
    means["uar"] = means["uar"].astype(float)
    return means


def feature_table(results: pd.DataFrame, classifier: str = "LSTM") -> pd.DataFrame:
    """Mean accuracy and UAR per feature set/type (rows) and task (columns)."""
    means = mean_rows(results)
    means = means[means["classifier"] == classifier]
    if means.empty:
        return pd.DataFrame()
    means = means.assign(features=means["feature_set"] + " " + means["feature_type"])
    table = means.pivot_table(index="features", columns="task", values=["accuracy", "uar"])
    table = table.swaplevel(axis=1).sort_index(axis=1)
    order = [name for name in FEATURE_ORDER if name in table.index]
    return table.loc[order]


def classifier_table(results: pd.DataFrame, feature_set: str = "L193", feature_type: str = "HSF") -> pd.DataFrame:
    """Mean accuracy and UAR per classifier (rows) and task (columns)."""
    means = mean_rows(results)
    means = means[(means["feature_set"] == feature_set) & (means["feature_type"] == feature_type)]
    if means.empty:
        return pd.DataFrame()
    table = means.pivot_table(index="classifier", columns="task", values=["accuracy", "uar"])
    table = table.swaplevel(axis=1).sort_index(axis=1)
    order = [name for name in ARCHITECTURES if name in table.index]
    return table.loc[order]


def write_grid_outputs(grid: GridResult, output_dir: str | Path, task: str) -> Path:
    """Write results, confusion CSVs/heatmaps, recalls and histories for one grid run."""
    output_dir = Path(output_dir)
    results_path = output_dir / f"results_{task}.csv"
    write_results_csv(grid.results, results_path)

    for cell, cm in grid.confusions.items():
        stem = output_dir / f"confusion_{task}_{cell.label}"
        write_confusion_csv(cm, stem.with_suffix(".csv"))
        write_heatmap(cm, stem, title=f"{task}: {cell.feature_set} {cell.feature_type} {cell.classifier}")

    per_class_recall(grid.confusions).assign(task=task).to_csv(
        output_dir / f"recall_{task}.csv", index=False, float_format="%.6f"
    )
    for cell, history in grid.histories.items():
        history.to_csv(output_dir / f"history_{task}_{cell.label}.csv", index=False)

    logger.info("wrote %s", results_path)
    return results_path


def combine_results(output_dir: str | Path) -> pd.DataFrame:
    """Concatenate every results_<task>.csv under output_dir into results.csv."""
    output_dir = Path(output_dir)
    frames = [read_results_csv(path) for path in sorted(output_dir.glob("results_*.csv"))]
    if not frames:
        raise FileNotFoundError(f"no results_<task>.csv files in {output_dir}")
    combined = pd.concat(frames, ignore_index=True)
    write_results_csv(combined, output_dir / "results.csv")
    return combined
