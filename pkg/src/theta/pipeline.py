"""Glue between dataset files and the classifier: per-frame segmentation,
triplet fusion, and training-set preparation from a dataset manifest.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import net as thetanet
from .config import PipelineConfig
from .errors import DataError
from .segment import HsvMaskProvider, segment_frame
from .synthview import VIEW_ORDER, load_manifest, read_ppm

log = logging.getLogger(__name__)


def prepare_frame(frame: np.ndarray, config: PipelineConfig) -> np.ndarray:
    """Segment and normalize one RGB frame into a (3, 224, 224) tensor."""
    return segment_frame(frame, HsvMaskProvider(config.hsv))


def iter_triplet_samples(manifest: dict):
    """Group manifest samples into (gesture_id, frame_index) -> per-view dict.

    Yields only complete triplets, in sorted (gesture_id, frame_index) order.
    """
    grouped: dict = {}
    for sample in manifest["samples"]:
        key = (sample["gesture_id"], sample["frame_index"])
        grouped.setdefault(key, {})[sample["view"]] = sample
    for key in sorted(grouped):
        views = grouped[key]
        if all(v in views for v in VIEW_ORDER):
            yield key, views


def load_training_data(data_dir, config: PipelineConfig) -> thetanet.TrainingData:
    """Segment + fuse every triplet of a generated dataset.

    Fused tensors are quantized to uint8 to keep the default 2,000-triplet
    dataset under 1 GB of memory.
    """
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    triplets = list(iter_triplet_samples(manifest))
    if not triplets:
        raise DataError(f"no complete frame triplets in {data_dir}")
    n = len(triplets)
    inputs = np.empty((n, 9, 224, 224), dtype=np.uint8)
    labels = np.empty((n, 15), dtype=np.int64)
    groups = np.empty(n, dtype=np.int64)
    provider = HsvMaskProvider(config.hsv)
    for i, ((gid, _frame_idx), views) in enumerate(triplets):
        parts = []
        for view in VIEW_ORDER:
            frame = read_ppm(data_dir / views[view]["image_path"])
            parts.append(segment_frame(frame, provider))
        fused = np.concatenate(parts, axis=0)
        inputs[i] = thetanet.TrainingData.quantize(fused)
        labels[i] = views[VIEW_ORDER[0]]["label_bins"]
        groups[i] = gid
        if (i + 1) % 200 == 0:
            log.info("prepared %d/%d triplets", i + 1, n)
    return thetanet.TrainingData(inputs, labels, groups)
