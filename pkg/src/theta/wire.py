"""Actuation transport: serial frame codec, incremental parser, topic bus.

Wire grammar (bit-exact): 'S' ',' then 15 base-10 servo angles (0..180)
joined by ',', then '*', two uppercase hex digits (XOR of all payload bytes,
i.e. everything between 'S,' and '*', exclusive), then '\\n'.

The parser is microcontroller-style: it never raises on bad input, keeps a
bounded buffer, resynchronizes on the next 'S', and reports everything it
sees through counters.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

from .errors import ArgumentError, RangeError

SERVO_COUNT = 15
SERVO_MIN = 0
SERVO_MAX = 180

# Total parser buffer bound. A valid frame is at most 65 bytes
# ('S,' + 15 three-digit fields + 14 commas + '*HH\n'), so any frame that
# fits the wire grammar always fits the buffer.
PAYLOAD_LIMIT = 128
BUFFER_LIMIT = 128


@dataclass(frozen=True)
class ServoFrame:
    angles: tuple  # 15 integers, degrees 0..180

    def __post_init__(self):
        angles = tuple(int(a) for a in self.angles)
        if len(angles) != SERVO_COUNT:
            raise RangeError(f"expected {SERVO_COUNT} servo angles, got {len(angles)}")
        for a in angles:
            if not SERVO_MIN <= a <= SERVO_MAX:
                raise RangeError(f"servo angle {a} outside {SERVO_MIN}..{SERVO_MAX}")
        object.__setattr__(self, "angles", angles)


def xor_checksum(payload: bytes) -> int:
    acc = 0
    for b in payload:
        acc ^= b
    return acc


def encode_frame(frame: ServoFrame) -> bytes:
    payload = ",".join(str(a) for a in frame.angles).encode("ascii")
    return b"S," + payload + b"*" + format(xor_checksum(payload), "02X").encode("ascii") + b"\n"


# Parser phases, derived from buffer contents (see FrameParser.state).
SEEKING_START = "seeking_start"
READING_PAYLOAD = "reading_payload"
READING_CHECKSUM = "reading_checksum"


class FrameParser:
    """Incremental frame parser tolerant to garbage and arbitrary chunking.

    Bytes are buffered (payload portion bounded at PAYLOAD_LIMIT); candidate
    frames are cut at newlines and validated structurally, then by checksum,
    then field-wise. On any violation the parser discards to the next 'S'
    and bumps the matching counter. Errors are counters, never exceptions.
    """

    def __init__(self):
        self._buf = bytearray()
        self.frames_ok = 0
        self.frames_bad_checksum = 0
        self.frames_malformed = 0
        self.bytes_discarded = 0
        self.bytes_accepted = 0
        self.max_buffered = 0

    @property
    def bytes_pending(self) -> int:
        return len(self._buf)

    @property
    def state(self) -> str:
        start = self._buf.find(b"S")
        if start < 0:
            return SEEKING_START
        star = self._buf.find(b"*", start)
        return READING_CHECKSUM if star >= 0 else READING_PAYLOAD

    def feed(self, data: bytes) -> list[ServoFrame]:
        """Consume a chunk of bytes and return any complete valid frames."""
        frames: list[ServoFrame] = []
        pos = 0
        while pos < len(data):
            take = max(1, BUFFER_LIMIT - len(self._buf))
            self._buf += data[pos : pos + take]
            pos += take
            self.max_buffered = max(self.max_buffered, len(self._buf))
            self._drain(frames)
        return frames

    def _drain(self, frames: list[ServoFrame]) -> None:
        while True:
            start = self._buf.find(b"S")
            if start < 0:
                self.bytes_discarded += len(self._buf)
                self._buf.clear()
                return
            if start > 0:
                self.bytes_discarded += start
                del self._buf[:start]
            nl = self._buf.find(b"\n")
            if nl < 0:
                if len(self._buf) >= BUFFER_LIMIT:
                    # No newline within the buffer bound: dead start.
                    self.bytes_discarded += 1
                    del self._buf[:1]
                    continue
                return
            candidate = bytes(self._buf[: nl + 1])
            frame = self._validate(candidate)
            if frame is not None:
                self.frames_ok += 1
                self.bytes_accepted += len(candidate)
                del self._buf[: nl + 1]
                frames.append(frame)
            else:
                # Resync: drop only the 'S' so a frame nested in garbage
                # is still found on the next pass.
                self.bytes_discarded += 1
                del self._buf[:1]

    def _validate(self, candidate: bytes) -> ServoFrame | None:
        # Layout: S , payload * H H \n
        if len(candidate) < 7 or candidate[:2] != b"S," or candidate[-4:-3] != b"*":
            self.frames_malformed += 1
            return None
        payload = candidate[2:-4]
        if len(payload) > PAYLOAD_LIMIT or b"*" in payload:
            self.frames_malformed += 1
            return None
        hexdigits = candidate[-3:-1]
        if not all(c in b"0123456789ABCDEF" for c in hexdigits):
            self.frames_malformed += 1
            return None
        if int(hexdigits, 16) != xor_checksum(payload):
            self.frames_bad_checksum += 1
            return None
        fields = payload.split(b",")
        if len(fields) != SERVO_COUNT or not all(f.isdigit() for f in fields):
            self.frames_malformed += 1
            return None
        values = [int(f) for f in fields]
        if any(not SERVO_MIN <= v <= SERVO_MAX for v in values):
            self.frames_malformed += 1
            return None
        return ServoFrame(tuple(values))


def run_fuzz(seed: int, n_frames: int) -> dict:
    """Protocol robustness harness: n valid frames interleaved with garbage
    bursts and single-byte-corrupted frames, fed in random chunks.

    Returns the parser counters plus corrupt_accepted: the number of emitted
    frames that do not match the injected schedule (must be 0).
    """
    import numpy as np

    rng = np.random.default_rng([seed, 0xF422])
    stream = bytearray()
    injected: list[ServoFrame] = []
    for _ in range(n_frames):
        roll = rng.random()
        if roll < 0.3:
            # Garbage burst; may contain 'S' bytes but never a valid frame.
            burst = rng.integers(0, 256, size=int(rng.integers(1, 80))).astype("uint8")
            stream += burst.tobytes()
        elif roll < 0.5:
            # Valid frame with one corrupted byte.
            frame = ServoFrame(tuple(int(v) for v in rng.integers(0, 181, size=SERVO_COUNT)))
            encoded = bytearray(encode_frame(frame))
            pos = int(rng.integers(0, len(encoded)))
            old = encoded[pos]
            new = int(rng.integers(0, 256))
            encoded[pos] = new if new != old else (old ^ 0xFF)
            stream += encoded
        frame = ServoFrame(tuple(int(v) for v in rng.integers(0, 181, size=SERVO_COUNT)))
        injected.append(frame)
        stream += encode_frame(frame)

    parser = FrameParser()
    emitted: list[ServoFrame] = []
    pos = 0
    while pos < len(stream):
        take = int(rng.integers(1, 201))
        emitted.extend(parser.feed(bytes(stream[pos : pos + take])))
        pos += take

    corrupt_accepted = sum(
        1 for got, want in zip(emitted, injected) if got.angles != want.angles
    ) + abs(len(emitted) - len(injected))
    return {
        "frames_injected": n_frames,
        "frames_ok": parser.frames_ok,
        "frames_bad_checksum": parser.frames_bad_checksum,
        "frames_malformed": parser.frames_malformed,
        "bytes_discarded": parser.bytes_discarded,
        "bytes_accepted": parser.bytes_accepted,
        "bytes_pending": parser.bytes_pending,
        "max_buffered": parser.max_buffered,
        "corrupt_accepted": corrupt_accepted,
    }


class Subscription:
    """Single-consumer bounded FIFO; drop-oldest on overflow."""

    def __init__(self, capacity: int):
        self._queue = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def _push(self, message) -> None:
        with self._lock:
            self._queue.append(message)  # deque(maxlen) drops the oldest

    def get_nowait(self):
        with self._lock:
            return self._queue.popleft() if self._queue else None

    def drain(self) -> list:
        with self._lock:
            items = list(self._queue)
            self._queue.clear()
        return items

    def __len__(self):
        return len(self._queue)


class TopicBus:
    """In-process pub-sub bus with per-subscriber bounded queues."""

    def __init__(self, capacity: int = 4):
        self._capacity = capacity
        self._topics: dict[str, list[Subscription]] = {}
        self._lock = threading.Lock()

    def subscribe(self, topic: str) -> Subscription:
        if not topic:
            raise ArgumentError("topic name must be non-empty")
        sub = Subscription(self._capacity)
        with self._lock:
            self._topics.setdefault(topic, []).append(sub)
        return sub

    def publish(self, topic: str, message) -> None:
        if not topic:
            raise ArgumentError("topic name must be non-empty")
        with self._lock:
            subs = list(self._topics.setdefault(topic, []))
        for sub in subs:
            sub._push(message)
