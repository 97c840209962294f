"""Pipeline configuration: one JSON document driving every stage.

Missing fields are filled from the documented defaults; unknown keys are
rejected. The THETA_SEED environment variable overrides the config seed.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .net import NetworkSpec
from .segment import HsvThresholds
from .synthview import CameraRig, HandSpec, SceneRanges
from .wire import SERVO_COUNT

DEFAULTS = {
    "seed": 0,
    "rig": {
        "radius_mm": 228.6,
        "image_width": 640,
        "image_height": 480,
        "frame_rate_hz": 30.0,
    },
    "hand": {
        "palm_width_mm": 90.0,
        "palm_height_mm": 100.0,
        "finger_phalanx_mm": [45.0, 28.0, 22.0],
        "thumb_phalanx_mm": [40.0, 32.0, 25.0],
        "hand_color": [255, 0, 0],
        "finger_radius_mm": 7.0,
    },
    "scene": {
        "background_color": [0, 0, 0],
        "brightness_range": [0.7, 1.3],
        "noise_density_range": [0.0, 0.02],
    },
    "hsv": {
        "hue_bands": [[0.0, 20.0], [340.0, 360.0]],
        "sat_min": 0.4,
        "val_min": 0.2,
    },
    "sync_window_ms": 16.0,
    "network": {
        "stem_channels": 16,
        "blocks": [[6, 1, 16], [6, 2, 24], [6, 2, 32], [6, 1, 32]],
    },
    "training": {
        "epochs": 10,
        "lr": 0.001,
        "batch_size": 16,
        "gamma": 2.0,
        "temperature": 2.0,
        "freeze": "none",
        "val_fraction": 0.2,
        "bf16": True,
    },
    "calibration": {
        "scale": 1.0,
        "offset_deg": 0.0,
        "invert": False,
    },
    "link": {
        "endpoint": "loopback",  # or a serial device path
        "baud": 115200,
    },
    "gesture_table": None,  # path to a gesture_angles.csv; None = built-in 40
}


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"expected object at {path or 'top level'}, got {type(user).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            out[key] = _merge(defaults[key], value, path + key + ".")
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    rig: CameraRig
    hand: HandSpec
    scene: SceneRanges
    hsv: HsvThresholds
    sync_window_ms: float
    network: NetworkSpec
    training: dict
    calibration: dict
    link: dict
    gesture_table: str | None

    @property
    def calibration_arrays(self):
        """Broadcast scalar calibration values to the 15 servo channels."""
        def expand(value, dtype):
            arr = np.asarray(value, dtype=dtype)
            if arr.ndim == 0:
                arr = np.full(SERVO_COUNT, value, dtype=dtype)
            return arr

        return (
            expand(self.calibration["scale"], np.float64),
            expand(self.calibration["offset_deg"], np.float64),
            expand(self.calibration["invert"], bool),
        )


def config_from_dict(raw: dict) -> PipelineConfig:
    merged = _merge(DEFAULTS, raw)
    env_seed = os.environ.get("THETA_SEED")
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"THETA_SEED must be an integer, got {env_seed!r}")
    try:
        rig = CameraRig(**merged["rig"])
        hand_kwargs = dict(merged["hand"])
        hand_kwargs["finger_phalanx_mm"] = tuple(hand_kwargs["finger_phalanx_mm"])
        hand_kwargs["thumb_phalanx_mm"] = tuple(hand_kwargs["thumb_phalanx_mm"])
        hand_kwargs["hand_color"] = tuple(hand_kwargs["hand_color"])
        hand = HandSpec(**hand_kwargs)
        scene = SceneRanges(
            background_color=tuple(merged["scene"]["background_color"]),
            brightness_range=tuple(merged["scene"]["brightness_range"]),
            noise_density_range=tuple(merged["scene"]["noise_density_range"]),
        )
        hsv = HsvThresholds(
            hue_bands=tuple(tuple(b) for b in merged["hsv"]["hue_bands"]),
            sat_min=merged["hsv"]["sat_min"],
            val_min=merged["hsv"]["val_min"],
        )
        network = NetworkSpec.from_dict(merged["network"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return PipelineConfig(
        seed=int(merged["seed"]),
        rig=rig,
        hand=hand,
        scene=scene,
        hsv=hsv,
        sync_window_ms=float(merged["sync_window_ms"]),
        network=network,
        training=merged["training"],
        calibration=merged["calibration"],
        link=merged["link"],
        gesture_table=merged["gesture_table"],
    )


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return config_from_dict({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}")
    return config_from_dict(raw)
