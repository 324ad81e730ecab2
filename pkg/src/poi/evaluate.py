"""Evaluation and reporting: accuracy, confusion, confidence-based analyses.

Accuracy is always measured against the clean labels; the deployed predictor
is the inference-mode target distribution. Confidence diagnostics come from a
training-mode forward pass over the frozen parameters and are reported
separately.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Sample, labels_of, stack_images
from .model import Model


def accuracy_and_confusion(preds: np.ndarray, truth: np.ndarray, num_classes: int):
    """Overall accuracy, per-class accuracy, and a row-normalized confusion matrix."""
    if preds.shape != truth.shape or preds.size == 0:
        raise ValueError("predictions and truth must be equal-length and nonempty")
    counts = np.zeros((num_classes, num_classes))
    np.add.at(counts, (truth, preds), 1.0)
    row_sums = counts.sum(axis=1)
    confusion = np.divide(counts, row_sums[:, None], out=np.zeros_like(counts), where=row_sums[:, None] > 0)
    per_class = np.divide(np.diag(counts), row_sums, out=np.zeros(num_classes), where=row_sums > 0)
    return float((preds == truth).mean()), per_class, confusion


def _forward_collect(model: Model, samples: Sequence[Sample], mode: str, batch_size: int = 64):
    """Run batches and gather argmax predictions plus confidence diagnostics."""
    images = stack_images(samples)
    q_preds, star_preds, avg_preds, w_values = [], [], [], []
    for start in range(0, len(samples), batch_size):
        fwd = model.forward(images[start:start + batch_size], mode=mode)
        q_preds.append(fwd.trn.q.data.argmax(axis=1))
        if mode == "train":
            star_preds.append(fwd.pin.intermediate.data.argmax(axis=1))
            avg_preds.append(fwd.pin.p_soft_stack.data.mean(axis=1).argmax(axis=1))
            if fwd.trn.w_au is not None:
                w_values.append(fwd.trn.w_au.data)
    out = {"q": np.concatenate(q_preds)}
    if mode == "train":
        out["intermediate"] = np.concatenate(star_preds)
        out["subregion_avg"] = np.concatenate(avg_preds)
        out["w_au"] = np.concatenate(w_values) if w_values else np.array([])
    return out


def confidence_scores(model: Model, samples: Sequence[Sample]) -> np.ndarray:
    """Per-sample ensemble-consistency confidence from a training-mode pass."""
    return _forward_collect(model, samples, "train")["w_au"]


@dataclass
class EvalMetrics:
    accuracy: float
    per_class_accuracy: dict[str, float]
    confusion: np.ndarray            # [C, C], rows are clean classes, row-normalized
    mean_w_au: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "mean_w_au": self.mean_w_au,
            "n_samples": self.n_samples,
        }


def evaluate(model: Model, samples: Sequence[Sample]) -> EvalMetrics:
    """Inference-mode accuracy against clean labels plus confidence diagnostics."""
    if not samples:
        raise ValueError("evaluate needs a nonempty sample set")
    clean = labels_of(samples, clean=True)
    preds = _forward_collect(model, samples, "infer")["q"]
    acc, per_class, confusion = accuracy_and_confusion(preds, clean, model.num_classes)
    w = confidence_scores(model, samples)
    return EvalMetrics(
        accuracy=acc,
        per_class_accuracy={cls: float(per_class[i]) for i, cls in enumerate(model.table.expressions)},
        confusion=confusion,
        mean_w_au=float(w.mean()) if w.size else 0.0,
        n_samples=len(samples),
    )


def stratify_by_confidence(
    model: Model,
    samples: Sequence[Sample],
    fractions: Sequence[float] = (0.3, 0.5, 0.7),
) -> dict[float, dict[str, float]]:
    """Accuracy on the most- and least-confident fractions of the sample set.

    Samples sort by confidence descending; ties keep their original order, so
    the top-f and bottom-(1-f) strata always partition the set.
    """
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fractions must lie in (0, 1], got {f}")
    clean = labels_of(samples, clean=True)
    preds = _forward_collect(model, samples, "infer")["q"]
    w = confidence_scores(model, samples)
    order = np.argsort(-w, kind="stable")
    correct = (preds == clean).astype(float)
    out = {}
    for f in fractions:
        k = int(round(f * len(samples)))
        top = order[:k]
        bottom = order[len(samples) - k:]
        out[float(f)] = {
            "top": float(correct[top].mean()) if k else 0.0,
            "bottom": float(correct[bottom].mean()) if k else 0.0,
        }
    return out


def stratum_indices(w: np.ndarray, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """(top-f, bottom-(1-f)) index partition under the stable descending order."""
    order = np.argsort(-w, kind="stable")
    k = int(round(fraction * len(w)))
    return order[:k], order[k:]


def uncertainty_histogram(
    model: Model,
    samples: Sequence[Sample],
    bins: int = 20,
) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width histogram of confidence over [1/C, 1]; counts sum to len(samples)."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    w = confidence_scores(model, samples)
    lo = 1.0 / model.num_classes
    counts, edges = np.histogram(np.clip(w, lo, 1.0), bins=bins, range=(lo, 1.0))
    return counts, edges


def compare_heads(model: Model, samples: Sequence[Sample]) -> dict[str, float]:
    """Accuracy of the gated intermediate, the subregion average, and the target head."""
    clean = labels_of(samples, clean=True)
    collected = _forward_collect(model, samples, "train")
    return {
        "intermediate": float((collected["intermediate"] == clean).mean()),
        "subregion_avg": float((collected["subregion_avg"] == clean).mean()),
        "target": float((collected["q"] == clean).mean()),
    }


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def write_metrics(out_dir: str | Path, metrics: EvalMetrics, class_names: Sequence[str]) -> None:
    """metrics.json + confusion.csv (+ heatmap figure) under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, indent=2)
        fh.write("\n")
    with open(out_dir / "confusion.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(class_names))
        for row in metrics.confusion:
            writer.writerow([f"{v:.6f}" for v in row])
    from .plots import confusion_figure

    confusion_figure(metrics.confusion, class_names, out_dir / "confusion.png")


def write_strata(out_dir: str | Path, strata: dict[float, dict[str, float]]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "strata.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "top_accuracy", "bottom_accuracy"])
        for f in sorted(strata):
            writer.writerow([f, f"{strata[f]['top']:.6f}", f"{strata[f]['bottom']:.6f}"])
    from .plots import strata_figure

    strata_figure(strata, out_dir / "strata.png")


def write_histogram(out_dir: str | Path, counts: np.ndarray, edges: np.ndarray) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "histogram.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count"])
        for i, count in enumerate(counts):
            writer.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", int(count)])
    from .plots import histogram_figure

    histogram_figure(counts, edges, out_dir / "histogram.png")


def write_heads(out_dir: str | Path, heads: dict[str, float]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "heads.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "accuracy"])
        for name, acc in heads.items():
            writer.writerow([name, f"{acc:.6f}"])
    from .plots import heads_figure

    heads_figure(heads, out_dir / "heads.png")
