"""Classification metrics over (joint, bin) predictions.

Averaging scheme (pinned, see README): precision and recall are
macro-averaged over bins within each joint (bins with a zero denominator are
excluded from the mean), then averaged over joints; F1 is computed from the
macro P and R via 2PR/(P+R).
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, LabelError
from .handmodel import JOINT_COUNT, NUM_BINS


class ConfusionMatrixSet:
    """Per-joint 10x10 count matrices; rows = true bin, cols = predicted bin."""

    def __init__(self, counts: np.ndarray | None = None):
        if counts is None:
            counts = np.zeros((JOINT_COUNT, NUM_BINS, NUM_BINS), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (JOINT_COUNT, NUM_BINS, NUM_BINS):
            raise LabelError(f"bad confusion shape {counts.shape}")
        if np.any(counts < 0):
            raise LabelError("confusion counts must be non-negative")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrixSet") -> "ConfusionMatrixSet":
        """Associative cell-wise sum, enabling parallel evaluation."""
        return ConfusionMatrixSet(self.counts + other.counts)


def accumulate(preds, labels, into: ConfusionMatrixSet | None = None) -> ConfusionMatrixSet:
    """Tally (N, 15) predicted bins against (N, 15) true bins."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 2 or preds.shape[1] != JOINT_COUNT:
        raise LabelError(
            f"expected matching (N, {JOINT_COUNT}) arrays, got {preds.shape} and {labels.shape}"
        )
    for name, arr in (("pred", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= NUM_BINS):
            raise LabelError(f"{name} bin outside 0..{NUM_BINS - 1}")
    cm = into if into is not None else ConfusionMatrixSet()
    for j in range(JOINT_COUNT):
        np.add.at(cm.counts[j], (labels[:, j], preds[:, j]), 1)
    return cm


def summarize(cm: ConfusionMatrixSet) -> dict:
    """Accuracy plus macro precision/recall/F1 over the matrix set."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise DataError("empty confusion matrices")
    diag = np.trace(counts, axis1=1, axis2=2).sum()
    accuracy = float(diag) / float(total)

    per_joint_p = []
    per_joint_r = []
    for j in range(JOINT_COUNT):
        m = counts[j]
        tp = np.diag(m).astype(np.float64)
        col = m.sum(axis=0).astype(np.float64)  # predicted-bin totals
        row = m.sum(axis=1).astype(np.float64)  # true-bin totals
        p_bins = tp[col > 0] / col[col > 0]
        r_bins = tp[row > 0] / row[row > 0]
        per_joint_p.append(p_bins.mean() if p_bins.size else 0.0)
        per_joint_r.append(r_bins.mean() if r_bins.size else 0.0)
    precision = float(np.mean(per_joint_p))
    recall = float(np.mean(per_joint_r))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1}


def report(cm: ConfusionMatrixSet, checkpoint_id: str = "") -> dict:
    """JSON-serializable evaluation report."""
    return {
        "per_joint_confusion": cm.counts.tolist(),
        "metrics": summarize(cm),
        "sample_count": int(cm.counts[0].sum()),
        "checkpoint": checkpoint_id,
    }
