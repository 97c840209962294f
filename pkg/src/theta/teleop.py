"""Live teleoperation loop: frames -> segment -> fuse -> classify -> decode ->
servo mapping -> wire encode -> parser -> simulated hand, with per-stage
latency instrumentation and tracking-fidelity scoring.

The servo simulator steps on a fixed 100 Hz tick, decoupled from the 30 Hz
frame rate. Latencies are wall-clock; the loop itself runs on a simulated
clock so results are machine-independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import handmodel as hm
from .config import PipelineConfig
from .dexsim import HandSim, ServoCalibration, map_joint_to_servo, servo_to_joint
from .errors import ArgumentError, StreamError
from .fusion import FrameTriplet, compose
from .net import JointBinNet, predict_bins
from .pipeline import prepare_frame
from .synthview import VIEW_AZIMUTH_DEG, VIEW_ORDER, SceneParams, render_view
from .wire import FrameParser, TopicBus, encode_frame

SERVO_TICK_S = 0.01
COMMAND_TOPIC = "dexhand_hw_command"

STAGES = ("segment", "fuse", "infer", "encode", "transmit")

STARVATION_LIMIT_S = 2.0


@dataclass
class FrameEvent:
    time_s: float
    gt_angles: np.ndarray  # ground-truth joint angles, degrees
    frames: dict  # view name -> RGB frame


def parse_script(text: str, table) -> list:
    """Parse 'Gesture Name:seconds,...' against a gesture table."""
    by_name = {ann.gesture_name: ann for ann in table}
    out = []
    for part in text.split(","):
        if ":" not in part:
            raise ArgumentError(f"bad script entry {part!r}, expected 'name:seconds'")
        name, _, secs = part.rpartition(":")
        name = name.strip()
        if name not in by_name:
            raise ArgumentError(f"unknown gesture {name!r}")
        out.append((by_name[name], float(secs)))
    return out


def script_source(script, config: PipelineConfig, jitter_deg: float = hm.JITTER_DEG):
    """Frame events for a scripted gesture sequence at the rig frame rate."""
    frame_period = 1.0 / config.rig.frame_rate_hz
    t = 0.0
    end = 0.0
    frame_idx = 0
    for gesture, duration in script:
        end += duration
        while t < end - 1e-9:
            rng = np.random.default_rng([config.seed, gesture.gesture_id, frame_idx, 99])
            jittered = hm.jitter(gesture.angles, jitter_deg, rng)
            frames = {}
            for view_idx, view in enumerate(VIEW_ORDER):
                brightness = float(rng.uniform(*config.scene.brightness_range))
                noise = float(rng.uniform(*config.scene.noise_density_range))
                scene = SceneParams(
                    background_color=config.scene.background_color,
                    brightness_scale=brightness,
                    noise_density=noise,
                    seed=int(rng.integers(0, 2**31 - 1)),
                )
                frames[view] = render_view(
                    jittered, VIEW_AZIMUTH_DEG[view], config.hand, scene, config.rig
                )
            yield FrameEvent(t, gesture.angles.copy(), frames)
            t += frame_period
            frame_idx += 1


def dataset_source(data_dir, config: PipelineConfig):
    """Replay a recorded dataset directory as frame events at the rig rate."""
    from pathlib import Path

    from .pipeline import iter_triplet_samples
    from .synthview import load_manifest, read_ppm

    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    frame_period = 1.0 / config.rig.frame_rate_hz
    t = 0.0
    for (_gid, _fidx), views in iter_triplet_samples(manifest):
        gt = hm.bin_decode_array(views[VIEW_ORDER[0]]["label_bins"])
        frames = {
            view: read_ppm(data_dir / views[view]["image_path"]) for view in VIEW_ORDER
        }
        yield FrameEvent(t, gt, frames)
        t += frame_period


@dataclass
class LatencyReport:
    stages: dict  # stage -> {count, mean_ms, p50_ms, p95_ms, max_ms}
    end_to_end: dict

    @staticmethod
    def _stats(samples_ms) -> dict:
        arr = np.asarray(samples_ms, dtype=np.float64)
        if arr.size == 0:
            return {"count": 0, "mean_ms": 0.0, "p50_ms": 0.0, "p95_ms": 0.0, "max_ms": 0.0}
        return {
            "count": int(arr.size),
            "mean_ms": float(arr.mean()),
            "p50_ms": float(np.percentile(arr, 50)),
            "p95_ms": float(np.percentile(arr, 95)),
            "max_ms": float(arr.max()),
        }

    @classmethod
    def from_samples(cls, stage_samples: dict) -> "LatencyReport":
        stages = {name: cls._stats(stage_samples[name]) for name in STAGES}
        totals = [sum(vals) for vals in zip(*(stage_samples[name] for name in STAGES))]
        return cls(stages, cls._stats(totals))

    def to_dict(self) -> dict:
        return {"stages": self.stages, "end_to_end": self.end_to_end}


@dataclass
class TeleopResult:
    latency: LatencyReport
    fidelity: float
    ticks: int
    post_settle_ticks: int
    frames_processed: int
    frames_ok: int
    parser_counters: dict
    sync_drops: int


class LoopbackLink:
    """In-process serial loopback: encoded bytes go straight to a parser."""

    def __init__(self, parser: FrameParser):
        self.parser = parser

    def send(self, data: bytes):
        return self.parser.feed(data)


class SerialFileLink:
    """Writes encoded frames to a serial device path (or any writable file)."""

    def __init__(self, path):
        self._fh = open(path, "wb", buffering=0)

    def send(self, data: bytes):
        self._fh.write(data)
        return []

    def close(self):
        self._fh.close()


def run_teleop(
    config: PipelineConfig,
    net: JointBinNet,
    source,
    sink: str = "loopback",
    settle_s: float = 0.5,
    tolerance_deg: float = 5.0,
) -> TeleopResult:
    """Run the full loop over a frame-event source.

    Fidelity is the fraction of post-settling servo ticks where all 15
    simulated joints are within tolerance of the source's ground truth.
    """
    cal = ServoCalibration(*config.calibration_arrays)
    parser = FrameParser()
    link = LoopbackLink(parser) if sink == "loopback" else SerialFileLink(sink)
    sim = HandSim()
    # Start extended so the first gesture requires real travel.
    sim.current_deg[:] = map_joint_to_servo(np.full(15, 180.0), cal).angles
    sim.commanded_deg = sim.current_deg.copy()
    bus = TopicBus()
    command_sub = bus.subscribe(COMMAND_TOPIC)

    stage_samples = {name: [] for name in STAGES}
    events = iter(source)
    pending = next(events, None)
    if pending is None:
        raise StreamError("teleoperation source produced no frames")

    gt_angles = pending.gt_angles
    gesture_change_time = 0.0
    last_triplet_time = 0.0
    frames_processed = 0
    good_ticks = 0
    post_settle_ticks = 0
    ticks = 0
    sync_drops = 0

    t = 0.0
    while pending is not None or t <= last_triplet_time + settle_s:
        while pending is not None and pending.time_s <= t + 1e-9:
            event = pending
            pending = next(events, None)
            if not np.array_equal(event.gt_angles, gt_angles):
                gt_angles = event.gt_angles
                gesture_change_time = event.time_s
            ts_ms = event.time_s * 1000.0
            t0 = time.perf_counter()
            prepared = {
                view: prepare_frame(event.frames[view], config) for view in VIEW_ORDER
            }
            t1 = time.perf_counter()
            triplet = FrameTriplet(
                prepared["front"], prepared["right"], prepared["left"], (ts_ms, ts_ms, ts_ms)
            )
            if triplet.skew_ms > config.sync_window_ms:
                sync_drops += 3
                continue
            fused = compose(triplet, config.sync_window_ms)
            t2 = time.perf_counter()
            bins, _conf = predict_bins(net, fused, config.training["temperature"])
            t3 = time.perf_counter()
            angles = hm.bin_decode_array(bins)
            frame = map_joint_to_servo(angles, cal)
            payload = encode_frame(frame)
            t4 = time.perf_counter()
            bus.publish(COMMAND_TOPIC, frame)
            for parsed in link.send(payload):
                sim.command(parsed)
            t5 = time.perf_counter()
            stage_samples["segment"].append((t1 - t0) * 1000)
            stage_samples["fuse"].append((t2 - t1) * 1000)
            stage_samples["infer"].append((t3 - t2) * 1000)
            stage_samples["encode"].append((t4 - t3) * 1000)
            stage_samples["transmit"].append((t5 - t4) * 1000)
            frames_processed += 1
            last_triplet_time = event.time_s
            command_sub.drain()
        if pending is not None and t - last_triplet_time > STARVATION_LIMIT_S:
            raise StreamError(
                f"no synchronized triplet for {t - last_triplet_time:.2f} s"
            )
        sim.step(SERVO_TICK_S)
        t += SERVO_TICK_S
        ticks += 1
        if t >= gesture_change_time + settle_s and frames_processed > 0:
            post_settle_ticks += 1
            joints = servo_to_joint(sim.current_deg, cal)
            if np.all(np.abs(joints - gt_angles) <= tolerance_deg):
                good_ticks += 1

    fidelity = good_ticks / post_settle_ticks if post_settle_ticks else 0.0
    counters = {
        "frames_ok": parser.frames_ok,
        "frames_bad_checksum": parser.frames_bad_checksum,
        "frames_malformed": parser.frames_malformed,
        "bytes_discarded": parser.bytes_discarded,
    }
    if isinstance(link, SerialFileLink):
        link.close()
    return TeleopResult(
        latency=LatencyReport.from_samples(stage_samples),
        fidelity=fidelity,
        ticks=ticks,
        post_settle_ticks=post_settle_ticks,
        frames_processed=frames_processed,
        frames_ok=parser.frames_ok,
        parser_counters=counters,
        sync_drops=sync_drops,
    )
