"""Frame-synchronous inference with carried layer state."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff.tensor import no_grad
from .channel import ChannelConfig, utterance_rng
from .errors import FramingError
from .models.system import System

SAMPLE_RATE = 16000


@dataclass
class StreamState:
    """Everything one stream carries between frames.

    ``buffers`` maps each stateful layer to its history (the last
    ``(K - 1) * dilation`` inputs of a causal conv, the running sums of a
    cumulative norm). Their sizes are fixed after the first frame.
    """

    frame_len: int
    channel: ChannelConfig | None = None
    utterance_index: int = 0
    buffers: dict = field(default_factory=dict)
    frames: int = 0
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = self._fresh_rng()

    def _fresh_rng(self):
        if self.channel is None or self.channel.noiseless:
            return None
        return utterance_rng(self.channel.seed, self.utterance_index)

    def reset(self) -> None:
        self.buffers.clear()
        self.frames = 0
        self.rng = self._fresh_rng()

    def buffer_sizes(self) -> dict[str, int]:
        sizes = {}
        for key, value in self.buffers.items():
            if isinstance(value, tuple):
                sizes[key] = sum(np.asarray(v).size for v in value)
            else:
                sizes[key] = value.size
        return sizes

    def __eq__(self, other) -> bool:
        if not isinstance(other, StreamState):
            return NotImplemented
        if (self.frame_len, self.channel, self.utterance_index, self.frames) != (
                other.frame_len, other.channel, other.utterance_index, other.frames):
            return False
        if self.buffers.keys() != other.buffers.keys():
            return False
        for k, v in self.buffers.items():
            w = other.buffers[k]
            pairs = zip(v, w) if isinstance(v, tuple) else [(v, w)]
            if not all(np.array_equal(a, b) for a, b in pairs):
                return False
        if (self.rng is None) != (other.rng is None):
            return False
        return self.rng is None or self.rng.bit_generator.state == other.rng.bit_generator.state


def open_stream(system: System, channel: ChannelConfig | None = None, utterance_index: int = 0) -> StreamState:
    return StreamState(system.frame_len, channel, utterance_index)


def process_frame(system: System, state: StreamState, frame) -> np.ndarray:
    """Consume one frame of ``n`` samples and emit the matching ``n`` output samples."""
    x = np.asarray(frame, dtype=np.float64)
    if x.shape != (state.frame_len,):
        raise FramingError(f"expected a frame of {state.frame_len} samples, got shape {x.shape}")
    rngs = None if state.rng is None else [state.rng]
    with no_grad():
        out = system.forward(x[None, :], state.channel, rngs=rngs, state=state.buffers)
    state.frames += 1
    return out.data[0].copy()


def stream(system: System, y, channel: ChannelConfig | None = None, utterance_index: int = 0) -> np.ndarray:
    """Process a whole signal frame by frame (length must be a multiple of the frame)."""
    y = np.asarray(y, dtype=np.float64)
    n = system.frame_len
    if y.size % n:
        raise FramingError(f"length {y.size} is not a multiple of the {n}-sample frame")
    state = open_stream(system, channel, utterance_index)
    return np.concatenate([process_frame(system, state, y[i: i + n]) for i in range(0, y.size, n)])


def batch_forward(system: System, y, channel: ChannelConfig | None = None, utterance_index: int = 0) -> np.ndarray:
    """Whole-utterance inference using the same per-utterance noise stream as :func:`stream`."""
    y = np.asarray(y, dtype=np.float64)
    rngs = None
    if channel is not None and not channel.noiseless:
        rngs = [utterance_rng(channel.seed, utterance_index)]
    with no_grad():
        return system.forward(y[None, :], channel, rngs=rngs).data[0].copy()


def pad_to_frames(y: np.ndarray, frame_len: int) -> tuple[np.ndarray, int]:
    y = np.asarray(y, dtype=np.float64)
    pad = (-y.size) % frame_len
    return np.concatenate([y, np.zeros(pad)]), y.size


@dataclass
class LatencyReport:
    frame_len: int
    latency_samples: int
    latency_ms: float
    frames_timed: int
    compute_ms_p50: float | None
    compute_ms_p90: float | None
    compute_ms_p99: float | None
    realtime: bool | None

    def as_dict(self) -> dict:
        return dict(vars(self))


def latency_report(system_or_frame_len, frames: int = 1000, channel: ChannelConfig | None = None,
                   seed: int = 0) -> LatencyReport:
    """Algorithmic latency (one frame) plus measured per-frame compute time.

    Pass an integer frame length to get the arithmetic part only.
    """
    if isinstance(system_or_frame_len, (int, np.integer)):
        n = int(system_or_frame_len)
        return LatencyReport(n, n, n / SAMPLE_RATE * 1000.0, 0, None, None, None, None)
    system = system_or_frame_len
    n = system.frame_len
    rng = np.random.default_rng(seed)
    state = open_stream(system, channel)
    times = []
    for _ in range(frames):
        frame = 0.1 * rng.standard_normal(n)
        t0 = time.perf_counter()
        process_frame(system, state, frame)
        times.append((time.perf_counter() - t0) * 1000.0)
    p50, p90, p99 = np.percentile(times, [50, 90, 99])
    ms = n / SAMPLE_RATE * 1000.0
    return LatencyReport(n, n, ms, frames, float(p50), float(p90), float(p99), bool(p50 < ms))
