"""Canonical hand model: joint indexing, angle/bin codec, gesture tables, jitter.

Angle convention: degrees, 180 = fully extended, 90 = fully flexed.
Flat joint index = finger * 3 + joint, 15 joints total (5 fingers x MCP/PIP/DIP;
the thumb's CMC/MCP/IP are folded into the same MCP/PIP/DIP slots).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ArgumentError, DegenerateGeometryError, ParseError, RangeError

JOINT_COUNT = 15
NUM_BINS = 10
BIN_MIN_DEG = 90.0
BIN_MAX_DEG = 180.0
BIN_WIDTH_DEG = 10.0
JITTER_DEG = 5.0

# Valid angle range after +-5 degree jitter.
ANGLE_MIN_DEG = BIN_MIN_DEG - JITTER_DEG
ANGLE_MAX_DEG = BIN_MAX_DEG + JITTER_DEG


class Finger(IntEnum):
    THUMB = 0
    INDEX = 1
    MIDDLE = 2
    RING = 3
    PINKY = 4


class Joint(IntEnum):
    MCP = 0
    PIP = 1
    DIP = 2


@dataclass(frozen=True)
class JointId:
    finger: Finger
    joint: Joint

    @property
    def flat(self) -> int:
        return int(self.finger) * 3 + int(self.joint)

    @classmethod
    def from_flat(cls, flat: int) -> "JointId":
        if not 0 <= flat < JOINT_COUNT:
            raise RangeError(f"flat joint index {flat} outside 0..{JOINT_COUNT - 1}")
        return cls(Finger(flat // 3), Joint(flat % 3))


# Column order of the 15 angles in gesture_angles.csv and all flat arrays.
JOINT_NAMES = tuple(
    f"{finger.name.lower()}_{joint.name.lower()}"
    for finger in Finger
    for joint in Joint
)

CSV_HEADER = ["gesture_id", "gesture_name"] + [f"{name}_deg" for name in JOINT_NAMES]

# Flat indices of the distal (DIP) row, used for spring-return servo channels.
DIP_INDICES = tuple(f * 3 + 2 for f in range(5))


def as_joint_angles(values, jittered: bool = False) -> np.ndarray:
    """Validate and return a (15,) float64 angle array.

    Before jitter angles must lie in [90, 180]; after jitter in [85, 185].
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (JOINT_COUNT,):
        raise RangeError(f"expected {JOINT_COUNT} joint angles, got shape {arr.shape}")
    lo, hi = (ANGLE_MIN_DEG, ANGLE_MAX_DEG) if jittered else (BIN_MIN_DEG, BIN_MAX_DEG)
    if np.any(arr < lo) or np.any(arr > hi):
        bad = arr[(arr < lo) | (arr > hi)][0]
        raise RangeError(f"joint angle {bad} outside [{lo}, {hi}]")
    return arr


@dataclass(frozen=True)
class AngleBin:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < NUM_BINS:
            raise RangeError(f"bin index {self.index} outside 0..{NUM_BINS - 1}")

    @property
    def center_deg(self) -> float:
        return BIN_MIN_DEG + BIN_WIDTH_DEG * self.index


def bin_encode(angle_deg: float) -> AngleBin:
    """Nearest-center bin for an angle; ties at .5 round half-away-from-zero."""
    if not ANGLE_MIN_DEG <= angle_deg <= ANGLE_MAX_DEG:
        raise RangeError(
            f"angle {angle_deg} outside [{ANGLE_MIN_DEG}, {ANGLE_MAX_DEG}]"
        )
    r = (angle_deg - BIN_MIN_DEG) / BIN_WIDTH_DEG
    idx = math.floor(r + 0.5) if r >= 0 else math.ceil(r - 0.5)
    return AngleBin(min(max(idx, 0), NUM_BINS - 1))


def bin_encode_array(angles) -> np.ndarray:
    """Vectorized bin_encode over an array of angles."""
    arr = np.asarray(angles, dtype=np.float64)
    if np.any(arr < ANGLE_MIN_DEG) or np.any(arr > ANGLE_MAX_DEG):
        bad = arr[(arr < ANGLE_MIN_DEG) | (arr > ANGLE_MAX_DEG)].ravel()[0]
        raise RangeError(f"angle {bad} outside [{ANGLE_MIN_DEG}, {ANGLE_MAX_DEG}]")
    r = (arr - BIN_MIN_DEG) / BIN_WIDTH_DEG
    idx = np.where(r >= 0, np.floor(r + 0.5), np.ceil(r - 0.5))
    return np.clip(idx, 0, NUM_BINS - 1).astype(np.int64)


def bin_decode(bin_: AngleBin | int) -> float:
    """Bin center in degrees."""
    if isinstance(bin_, AngleBin):
        return bin_.center_deg
    return AngleBin(int(bin_)).center_deg


def bin_decode_array(bins) -> np.ndarray:
    arr = np.asarray(bins, dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= NUM_BINS):
        raise RangeError(f"bin index outside 0..{NUM_BINS - 1}: {arr}")
    return BIN_MIN_DEG + BIN_WIDTH_DEG * arr.astype(np.float64)


def jitter(angles, amplitude_deg: float = JITTER_DEG, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add independent uniform [-amplitude, +amplitude] noise to each joint."""
    if amplitude_deg < 0:
        raise ArgumentError(f"jitter amplitude must be >= 0, got {amplitude_deg}")
    arr = as_joint_angles(angles)
    if rng is None:
        rng = np.random.default_rng()
    return arr + rng.uniform(-amplitude_deg, amplitude_deg, size=JOINT_COUNT)


def joint_angle_from_points(a, b, c, tol: float = 1e-9) -> float:
    """Interior angle at b of the triangle a-b-c, in degrees [0, 180].

    arccos of the normalized dot product of (a-b) and (c-b); the cosine is
    clamped to [-1, 1] before arccos.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    u = a - b
    v = c - b
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu <= tol or nv <= tol:
        raise DegenerateGeometryError(
            f"segment length below tolerance {tol} (|a-b|={nu}, |c-b|={nv})"
        )
    cos = float(np.dot(u, v) / (nu * nv))
    cos = min(1.0, max(-1.0, cos))
    return math.degrees(math.acos(cos))


@dataclass(frozen=True)
class GestureAnnotation:
    gesture_id: int
    gesture_name: str
    angles: np.ndarray  # (15,) degrees in [90, 180]

    def __post_init__(self):
        if self.gesture_id <= 0:
            raise RangeError(f"gesture_id must be positive, got {self.gesture_id}")
        object.__setattr__(self, "angles", as_joint_angles(self.angles))


def parse_gesture_table(stream) -> list[GestureAnnotation]:
    """Parse gesture_angles.csv from a byte or text stream.

    Header must match CSV_HEADER exactly; angles must be numeric and within
    [90, 180]; gesture ids must be unique. Errors carry the 1-based data row.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif hasattr(stream, "read") and isinstance(stream.read(0), bytes):
        stream = io.TextIOWrapper(stream, encoding="utf-8")
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header row")
    if header != CSV_HEADER:
        raise ParseError(f"bad header: expected {CSV_HEADER}, got {header}")
    out: list[GestureAnnotation] = []
    seen: set[int] = set()
    for row_no, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ParseError(
                f"expected {len(CSV_HEADER)} columns, got {len(row)}", row=row_no
            )
        try:
            gid = int(row[0])
        except ValueError:
            raise ParseError(f"non-integer gesture_id {row[0]!r}", row=row_no)
        if gid in seen:
            raise ParseError(f"duplicate gesture_id {gid}", row=row_no)
        seen.add(gid)
        angles = []
        for col, cell in zip(CSV_HEADER[2:], row[2:]):
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric angle {cell!r} in {col}", row=row_no)
            if not BIN_MIN_DEG <= val <= BIN_MAX_DEG:
                raise ParseError(
                    f"angle {val} in {col} outside [{BIN_MIN_DEG}, {BIN_MAX_DEG}]",
                    row=row_no,
                )
            angles.append(val)
        try:
            out.append(GestureAnnotation(gid, row[1], np.array(angles)))
        except RangeError as exc:
            raise ParseError(str(exc), row=row_no)
    return out


def serialize_gesture_table(table: list[GestureAnnotation]) -> bytes:
    """Inverse of parse_gesture_table for well-formed tables."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for ann in table:
        writer.writerow(
            [ann.gesture_id, ann.gesture_name]
            + [format(a, "g") for a in ann.angles]
        )
    return buf.getvalue().encode("utf-8")


def _finger_levels(*levels) -> list[float]:
    """Expand 5 per-finger (mcp, pip, dip) triples into a flat 15-angle list."""
    out: list[float] = []
    for lvl in levels:
        out.extend(lvl)
    return out


def _uniform(deg: float) -> tuple[float, float, float]:
    return (deg, deg, deg)


def default_gesture_table() -> list[GestureAnnotation]:
    """Built-in 40-gesture table; all angles are multiples of 10 degrees.

    Gestures 1..32 enumerate per-finger extended/flexed combinations; 33..40
    add intermediate flexion levels so every bin occurs in the label set.
    """
    table: list[GestureAnnotation] = []
    combo_names = {
        0b00000: "Closed Fist",
        0b11111: "Open Palm",
        0b01000: "Number One",
        0b01100: "Peace Sign",
        0b01110: "Number Three",
        0b01111: "Number Four",
        0b10000: "Thumbs Up",
        0b00001: "Pinky Out",
        0b10001: "Shaka",
        0b01001: "Rock Horns",
    }
    # Fixed id order: the three Table-style gestures first, then the rest.
    masks = [0b00000, 0b11111, 0b01000]
    masks += [m for m in range(32) if m not in masks]
    for gid, mask in enumerate(masks, start=1):
        levels = []
        for f in range(5):
            extended = bool(mask & (1 << (4 - f)))
            levels.append(_uniform(180.0) if extended else _uniform(90.0))
        name = combo_names.get(mask, f"Combo {mask:05b}")
        table.append(GestureAnnotation(gid, name, _finger_levels(*levels)))
    specials = [
        ("Claw", [_uniform(180), (180, 120, 120), (180, 120, 120), (180, 120, 120), (180, 120, 120)]),
        ("Half Flex", [_uniform(140)] * 5),
        ("Soft Fist", [_uniform(100)] * 5),
        ("Tabletop", [(90, 180, 180)] * 5),
        ("Hook", [(180, 90, 90)] * 5),
        ("Gentle Curl", [(160, 150, 140)] * 5),
        ("Pinch", [_uniform(130), _uniform(130), _uniform(180), _uniform(180), _uniform(180)]),
        ("Wave Curl", [_uniform(90), _uniform(110), _uniform(130), _uniform(150), _uniform(170)]),
    ]
    for offset, (name, levels) in enumerate(specials):
        table.append(GestureAnnotation(33 + offset, name, _finger_levels(*levels)))
    return table
