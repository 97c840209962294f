"""Frame synchronization and 9-channel multi-view fusion.

Channel order of the fused tensor is fixed as [front R,G,B, right R,G,B,
left R,G,B]; training and inference must agree, so it is pinned here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StreamError, SyncError

DEFAULT_SYNC_WINDOW_MS = 16.0
FUSED_CHANNELS = 9


@dataclass(frozen=True)
class FrameTriplet:
    front: np.ndarray  # prepared (3, 224, 224) image
    right: np.ndarray
    left: np.ndarray
    timestamps: tuple  # (front_ms, right_ms, left_ms)

    @property
    def skew_ms(self) -> float:
        return max(self.timestamps) - min(self.timestamps)


@dataclass(frozen=True)
class SyncResult:
    triplets: list
    dropped: int


def synchronize(front, right, left, sync_window_ms: float = DEFAULT_SYNC_WINDOW_MS) -> SyncResult:
    """Greedily match three timestamped frame streams into triplets.

    Each stream is a sequence of (timestamp_ms, frame) with monotone
    timestamps. A triplet is emitted only when the three head frames all fall
    within the window; otherwise the earliest head is dropped. Frames left
    over when any stream is exhausted are dropped and counted.
    """
    streams = [list(front), list(right), list(left)]
    for name, stream in zip(("front", "right", "left"), streams):
        ts = [t for t, _ in stream]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise StreamError(f"{name} stream timestamps are not monotone")
    idx = [0, 0, 0]
    triplets = []
    dropped = 0
    while all(idx[i] < len(streams[i]) for i in range(3)):
        heads = [streams[i][idx[i]][0] for i in range(3)]
        if max(heads) - min(heads) <= sync_window_ms:
            frames = [streams[i][idx[i]][1] for i in range(3)]
            triplets.append(
                FrameTriplet(frames[0], frames[1], frames[2], tuple(heads))
            )
            for i in range(3):
                idx[i] += 1
        else:
            earliest = min(range(3), key=lambda i: heads[i])
            idx[earliest] += 1
            dropped += 1
    dropped += sum(len(streams[i]) - idx[i] for i in range(3))
    return SyncResult(triplets, dropped)


def compose(triplet: FrameTriplet, sync_window_ms: float = DEFAULT_SYNC_WINDOW_MS) -> np.ndarray:
    """Stack a triplet's prepared images into a (9, 224, 224) fused tensor."""
    if triplet.skew_ms > sync_window_ms:
        raise SyncError(
            f"triplet skew {triplet.skew_ms} ms exceeds window {sync_window_ms} ms"
        )
    return np.concatenate(
        [np.asarray(triplet.front), np.asarray(triplet.right), np.asarray(triplet.left)],
        axis=0,
    )
