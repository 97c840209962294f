"""Simulated DexHand: joint->servo calibration and 15 slew-limited servo channels.

Servo dynamics are a first-order lag clipped by a hard slew bound; distal
(DIP-row) channels carry a spring return that pulls them to a target when
unpowered, mimicking passive fingertip retraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import handmodel as hm
from .errors import ArgumentError
from .wire import SERVO_COUNT, ServoFrame


@dataclass(frozen=True)
class ServoCalibration:
    """Per-servo affine map: servo = clamp(round(scale*(joint-90)+offset), 0, 180).

    When invert is set the clamped result is reflected to 180 - servo.
    """

    scale: np.ndarray = None
    offset_deg: np.ndarray = None
    invert: np.ndarray = None

    def __post_init__(self):
        scale = np.ones(SERVO_COUNT) if self.scale is None else np.asarray(self.scale, dtype=np.float64)
        offset = np.zeros(SERVO_COUNT) if self.offset_deg is None else np.asarray(self.offset_deg, dtype=np.float64)
        invert = np.zeros(SERVO_COUNT, dtype=bool) if self.invert is None else np.asarray(self.invert, dtype=bool)
        for name, arr in (("scale", scale), ("offset_deg", offset), ("invert", invert)):
            if arr.shape != (SERVO_COUNT,):
                raise ArgumentError(f"{name} must have shape ({SERVO_COUNT},), got {arr.shape}")
        if np.any(scale == 0):
            raise ArgumentError("calibration scale must be nonzero")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "offset_deg", offset)
        object.__setattr__(self, "invert", invert)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def map_joint_to_servo(angles, cal: ServoCalibration = ServoCalibration()) -> ServoFrame:
    """Affine joint-space [90, 180] -> servo-space 0..180 mapping."""
    arr = np.asarray(angles, dtype=np.float64)
    raw = cal.scale * (arr - 90.0) + cal.offset_deg
    cmd = np.clip(_round_half_away(raw), 0, 180).astype(np.int64)
    cmd = np.where(cal.invert, 180 - cmd, cmd)
    return ServoFrame(tuple(int(c) for c in cmd))


def servo_to_joint(servo_angles, cal: ServoCalibration = ServoCalibration()) -> np.ndarray:
    """Inverse of map_joint_to_servo (up to rounding), for fidelity checks.

    Accepts a ServoFrame or a plain array of servo-space angles.
    """
    if isinstance(servo_angles, ServoFrame):
        servo_angles = servo_angles.angles
    cmd = np.asarray(servo_angles, dtype=np.float64)
    cmd = np.where(cal.invert, 180.0 - cmd, cmd)
    return (cmd - cal.offset_deg) / cal.scale + 90.0


@dataclass
class HandSim:
    """15 servo channels with first-order tracking and slew clipping."""

    max_slew_deg_per_s: float = 300.0
    time_constant_s: float = 0.05
    spring_target_deg: float = 0.0
    current_deg: np.ndarray = field(default_factory=lambda: np.zeros(SERVO_COUNT))
    commanded_deg: np.ndarray = field(default_factory=lambda: np.zeros(SERVO_COUNT))
    powered: np.ndarray = field(default_factory=lambda: np.ones(SERVO_COUNT, dtype=bool))
    spring_return: np.ndarray = field(
        default_factory=lambda: np.isin(np.arange(SERVO_COUNT), hm.DIP_INDICES)
    )

    def __post_init__(self):
        if self.max_slew_deg_per_s <= 0 or self.time_constant_s <= 0:
            raise ArgumentError("slew rate and time constant must be positive")
        self.current_deg = np.asarray(self.current_deg, dtype=np.float64).copy()
        self.commanded_deg = np.asarray(self.commanded_deg, dtype=np.float64).copy()

    def command(self, frame: ServoFrame) -> None:
        """Latch a new command; does not move the servos."""
        self.commanded_deg = np.asarray(frame.angles, dtype=np.float64)

    def step(self, dt_s: float) -> None:
        """Advance the dynamics by dt seconds."""
        if dt_s <= 0:
            raise ArgumentError(f"dt must be positive, got {dt_s}")
        target = np.where(
            self.powered,
            self.commanded_deg,
            np.where(self.spring_return, self.spring_target_deg, self.current_deg),
        )
        delta = (target - self.current_deg) * (1.0 - math.exp(-dt_s / self.time_constant_s))
        bound = self.max_slew_deg_per_s * dt_s
        delta = np.clip(delta, -bound, bound)
        self.current_deg = np.clip(self.current_deg + delta, 0.0, 180.0)


class TraceWriter:
    """Optional CSV state trace: time, 15 current, 15 commanded columns."""

    def __init__(self, fh):
        self._fh = fh
        cols = ["time_s"]
        cols += [f"current_{i}" for i in range(SERVO_COUNT)]
        cols += [f"commanded_{i}" for i in range(SERVO_COUNT)]
        fh.write(",".join(cols) + "\n")

    def record(self, time_s: float, sim: HandSim) -> None:
        row = [format(time_s, "g")]
        row += [format(v, "g") for v in sim.current_deg]
        row += [format(v, "g") for v in sim.commanded_deg]
        self._fh.write(",".join(row) + "\n")
