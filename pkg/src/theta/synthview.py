"""Deterministic synthetic stand-in for the three-camera capture rig.

Renders schematic red-hand frames (filled palm rectangle plus per-finger
capsules around a planar forward-kinematic chain) under orthographic
projection for three azimuths, and emits labeled PPM datasets with a JSON
manifest. Everything is pure given the seed, so datasets are byte-identical
across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import handmodel as hm
from .errors import ArgumentError, ParseError

VIEW_ORDER = ("front", "right", "left")
VIEW_AZIMUTH_DEG = {"front": 0.0, "right": 120.0, "left": -120.0}

PX_PER_MM = 2.0


@dataclass(frozen=True)
class CameraRig:
    radius_mm: float = 228.6  # 9 inches
    image_width: int = 640
    image_height: int = 480
    frame_rate_hz: float = 30.0

    @property
    def views(self) -> dict:
        return dict(VIEW_AZIMUTH_DEG)


@dataclass(frozen=True)
class HandSpec:
    palm_width_mm: float = 90.0
    palm_height_mm: float = 100.0
    finger_phalanx_mm: tuple = (45.0, 28.0, 22.0)  # proximal, middle, distal
    thumb_phalanx_mm: tuple = (40.0, 32.0, 25.0)
    hand_color: tuple = (255, 0, 0)
    finger_radius_mm: float = 7.0

    def __post_init__(self):
        for lengths in (self.finger_phalanx_mm, self.thumb_phalanx_mm):
            prox, mid, dist = lengths
            if not (0 < dist <= mid <= prox):
                raise ArgumentError(
                    f"phalanx lengths must satisfy 0 < distal <= middle <= proximal, got {lengths}"
                )
        if self.palm_width_mm <= 0 or self.palm_height_mm <= 0:
            raise ArgumentError("palm dimensions must be positive")

    def phalanx_lengths(self, finger: hm.Finger) -> tuple:
        return self.thumb_phalanx_mm if finger == hm.Finger.THUMB else self.finger_phalanx_mm

    @property
    def knuckle_base_points(self) -> np.ndarray:
        """Five knuckle anchors, evenly spaced on the palm top edge (y = 0)."""
        w = self.palm_width_mm
        xs = -w / 2 + w * (np.arange(5) + 0.5) / 5
        pts = np.zeros((5, 3))
        pts[:, 0] = xs
        return pts

    @property
    def max_reach_mm(self) -> float:
        return max(sum(self.finger_phalanx_mm), sum(self.thumb_phalanx_mm))


@dataclass(frozen=True)
class SceneParams:
    background_color: tuple = (0, 0, 0)
    brightness_scale: float = 1.0
    noise_density: float = 0.0  # fraction of pixels replaced with random color
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.brightness_scale <= 1.5:
            raise ArgumentError(f"brightness_scale {self.brightness_scale} outside [0.5, 1.5]")
        if not 0.0 <= self.noise_density <= 0.05:
            raise ArgumentError(f"noise_density {self.noise_density} outside [0, 0.05]")


@dataclass(frozen=True)
class SceneRanges:
    """Per-frame scene parameter ranges sampled during dataset generation."""

    background_color: tuple = (0, 0, 0)
    brightness_range: tuple = (0.7, 1.3)
    noise_density_range: tuple = (0.0, 0.02)


def finger_chain_points(angles, spec: HandSpec, finger: hm.Finger) -> np.ndarray:
    """3D points (knuckle, PIP, DIP, tip) of one finger's planar flexion chain.

    The chain lives in the plane spanned by the palm-extension direction (+y)
    and the palm normal (+z); each segment rotates by the cumulative flexion
    (180 - joint angle) from the previous segment's direction.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (3,):
        raise ArgumentError(f"expected 3 joint angles, got shape {angles.shape}")
    if np.any(angles < hm.ANGLE_MIN_DEG) or np.any(angles > hm.ANGLE_MAX_DEG):
        raise ArgumentError(f"finger angles {angles} outside [85, 185]")
    anchor = spec.knuckle_base_points[int(finger)]
    lengths = spec.phalanx_lengths(finger)
    pts = [anchor]
    phi = 0.0  # flexion from +y toward +z, degrees
    pos = anchor.astype(np.float64).copy()
    for angle, length in zip(angles, lengths):
        phi += 180.0 - angle
        rad = math.radians(phi)
        pos = pos + length * np.array([0.0, math.cos(rad), math.sin(rad)])
        pts.append(pos)
    return np.array(pts)


def hand_chain_points(angles15, spec: HandSpec) -> np.ndarray:
    """Chains for all five fingers: (5, 4, 3) points."""
    angles15 = np.asarray(angles15, dtype=np.float64)
    return np.array(
        [
            finger_chain_points(angles15[f * 3 : f * 3 + 3], spec, hm.Finger(f))
            for f in range(5)
        ]
    )


def _rotate_y(points: np.ndarray, azimuth_deg: float) -> np.ndarray:
    a = math.radians(azimuth_deg)
    c, s = math.cos(a), math.sin(a)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return points @ rot.T


def _project(points: np.ndarray, spec: HandSpec, width: int, height: int) -> np.ndarray:
    """Orthographic mm -> pixel coordinates (px, py), y up becomes py down."""
    y_mid = (spec.max_reach_mm - spec.palm_height_mm) / 2.0
    px = width / 2.0 + PX_PER_MM * points[..., 0]
    py = height / 2.0 - PX_PER_MM * (points[..., 1] - y_mid)
    return np.stack([px, py], axis=-1)


def render_silhouette(angles, azimuth_deg: float, spec: HandSpec, rig: CameraRig = CameraRig()) -> np.ndarray:
    """Boolean hand mask: palm rectangle plus finger capsules, projected.

    The hand is a single solid color, so occlusion order between primitives
    does not affect the silhouette; primitives are simply unioned.
    """
    w, h = rig.image_width, rig.image_height
    mask = np.zeros((h, w), dtype=bool)

    # Palm rectangle: corners (+-w/2, 0 / -palm_h, 0). Under a rotation about
    # the vertical axis and orthographic projection it stays axis-aligned.
    pw, ph = spec.palm_width_mm, spec.palm_height_mm
    corners = np.array(
        [[-pw / 2, 0, 0], [pw / 2, 0, 0], [pw / 2, -ph, 0], [-pw / 2, -ph, 0]]
    )
    proj = _project(_rotate_y(corners, azimuth_deg), spec, w, h)
    x0, x1 = proj[:, 0].min(), proj[:, 0].max()
    y0, y1 = proj[:, 1].min(), proj[:, 1].max()
    cols = np.arange(w)
    rows = np.arange(h)
    mask |= ((rows[:, None] >= y0) & (rows[:, None] <= y1)) & (
        (cols[None, :] >= x0) & (cols[None, :] <= x1)
    )

    # Finger capsules around each chain segment.
    chains = hand_chain_points(angles, spec)
    radius_px = spec.finger_radius_mm * PX_PER_MM
    for f in range(5):
        pts = _project(_rotate_y(chains[f], azimuth_deg), spec, w, h)
        for i in range(3):
            _draw_capsule(mask, pts[i], pts[i + 1], radius_px)
    return mask


def _draw_capsule(mask: np.ndarray, p0: np.ndarray, p1: np.ndarray, radius: float) -> None:
    h, w = mask.shape
    lo_x = max(int(math.floor(min(p0[0], p1[0]) - radius)), 0)
    hi_x = min(int(math.ceil(max(p0[0], p1[0]) + radius)) + 1, w)
    lo_y = max(int(math.floor(min(p0[1], p1[1]) - radius)), 0)
    hi_y = min(int(math.ceil(max(p0[1], p1[1]) + radius)) + 1, h)
    if lo_x >= hi_x or lo_y >= hi_y:
        return
    xs = np.arange(lo_x, hi_x, dtype=np.float64)
    ys = np.arange(lo_y, hi_y, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    d = p1 - p0
    len2 = d[0] * d[0] + d[1] * d[1]
    if len2 == 0:
        t = np.zeros_like(gx)
    else:
        t = np.clip(((gx - p0[0]) * d[0] + (gy - p0[1]) * d[1]) / len2, 0.0, 1.0)
    dist2 = (gx - (p0[0] + t * d[0])) ** 2 + (gy - (p0[1] + t * d[1])) ** 2
    mask[lo_y:hi_y, lo_x:hi_x] |= dist2 <= radius * radius


def render_view(
    angles,
    azimuth_deg: float,
    spec: HandSpec = HandSpec(),
    scene: SceneParams = SceneParams(),
    rig: CameraRig = CameraRig(),
) -> np.ndarray:
    """Render one RGB frame (H, W, 3) uint8; deterministic for fixed inputs."""
    sil = render_silhouette(angles, azimuth_deg, spec, rig)
    frame = np.empty((rig.image_height, rig.image_width, 3), dtype=np.float32)
    frame[:] = np.asarray(scene.background_color, dtype=np.float32)
    frame[sil] = np.asarray(spec.hand_color, dtype=np.float32)
    frame = np.clip(np.rint(frame * scene.brightness_scale), 0, 255).astype(np.uint8)
    if scene.noise_density > 0:
        rng = np.random.default_rng(scene.seed)
        n_pix = rig.image_height * rig.image_width
        count = int(round(scene.noise_density * n_pix))
        if count > 0:
            idx = rng.choice(n_pix, size=count, replace=False)
            colors = rng.integers(0, 256, size=(count, 3), dtype=np.uint8)
            flat = frame.reshape(-1, 3)
            flat[idx] = colors
    return frame


def write_ppm(path, frame: np.ndarray) -> None:
    """Binary PPM (P6), maxval 255."""
    h, w = frame.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ParseError(f"not a binary PPM file: {path}")
    # Header: magic, width, height, maxval, separated by whitespace.
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ParseError(f"unsupported PPM maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def _dataclass_dict(obj) -> dict:
    out = {}
    for key, val in vars(obj).items():
        if isinstance(val, tuple):
            val = list(val)
        out[key] = val
    return out


def generate_dataset(
    table,
    frames_per_gesture_per_view: int,
    out_dir,
    rig: CameraRig = CameraRig(),
    spec: HandSpec = HandSpec(),
    scene_ranges: SceneRanges = SceneRanges(),
    seed: int = 0,
) -> dict:
    """Render a labeled dataset and write it plus manifest.json to out_dir.

    Per (gesture, frame) a single jitter draw is shared by the three views,
    since the cameras observe the same hand. Labels are the bins of the
    un-jittered annotation angles, so the +-5 degree jitter is appearance
    augmentation only.
    """
    if not table:
        raise ArgumentError("gesture table is empty")
    if frames_per_gesture_per_view < 1:
        raise ArgumentError(
            f"frames_per_gesture_per_view must be >= 1, got {frames_per_gesture_per_view}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    counts: dict = {}
    for ann in table:
        label_bins = hm.bin_encode_array(ann.angles).tolist()
        counts[str(ann.gesture_id)] = {v: frames_per_gesture_per_view for v in VIEW_ORDER}
        for frame_idx in range(frames_per_gesture_per_view):
            jit_rng = np.random.default_rng([seed, ann.gesture_id, frame_idx, 0])
            jittered = hm.jitter(ann.angles, hm.JITTER_DEG, jit_rng)
            for view_idx, view in enumerate(VIEW_ORDER):
                scene_rng = np.random.default_rng(
                    [seed, ann.gesture_id, frame_idx, 1 + view_idx]
                )
                brightness = float(
                    scene_rng.uniform(*scene_ranges.brightness_range)
                )
                noise = float(scene_rng.uniform(*scene_ranges.noise_density_range))
                noise_seed = int(scene_rng.integers(0, 2**31 - 1))
                scene = SceneParams(
                    background_color=scene_ranges.background_color,
                    brightness_scale=brightness,
                    noise_density=noise,
                    seed=noise_seed,
                )
                frame = render_view(jittered, VIEW_AZIMUTH_DEG[view], spec, scene, rig)
                rel = f"g{ann.gesture_id}/{view}/f{frame_idx}.ppm"
                dest = out_dir / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                write_ppm(dest, frame)
                samples.append(
                    {
                        "gesture_id": ann.gesture_id,
                        "view": view,
                        "frame_index": frame_idx,
                        "image_path": rel,
                        "label_bins": label_bins,
                        "jittered_angles": [float(a) for a in jittered],
                    }
                )
    manifest = {
        "header": {
            "schema_version": 1,
            "seed": seed,
            "rig": _dataclass_dict(rig),
            "hand_spec": _dataclass_dict(spec),
            "scene_ranges": _dataclass_dict(scene_ranges),
        },
        "counts": counts,
        "samples": samples,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
    return manifest


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
