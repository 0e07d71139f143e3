"""Power constraint and AWGN channel between the transmitter and receiver halves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .errors import ConfigurationError, InputError

NORMALIZATIONS = ("per-frame", "per-utterance")
NOISELESS = math.inf


@dataclass(frozen=True)
class ChannelConfig:
    snr_w_db: float = 10.0
    seed: int = 0
    normalization: str = "per-frame"

    def __post_init__(self):
        if math.isnan(self.snr_w_db) or self.snr_w_db == -math.inf:
            raise ConfigurationError(f"snr_w_db must be finite or +inf, got {self.snr_w_db}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigurationError(f"normalization must be one of {NORMALIZATIONS}")

    @property
    def noiseless(self) -> bool:
        return self.snr_w_db == NOISELESS

    @property
    def noise_std(self) -> float:
        return 0.0 if self.noiseless else 10.0 ** (-self.snr_w_db / 20.0)


def power_normalize(z, cfg: ChannelConfig | None = None, frame_steps: int | None = None):
    """Unit mean-square power over each frame (or each utterance).

    Accepts numpy arrays or tensors; tensors stay in the graph so the scale
    factor is differentiated through.
    """
    scope = None
    if cfg is None or cfg.normalization == "per-frame":
        scope = frame_steps
    out = ops.power_normalize(z, scope)
    return out if isinstance(z, Tensor) else out.data


def utterance_rng(seed: int, index: int) -> np.random.Generator:
    """Independent noise stream for one utterance (or one training call)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def draw_noise(rng: np.random.Generator, channels: int, steps: int, frame_steps: int | None) -> np.ndarray:
    """Standard normal (channels, steps) drawn frame after frame.

    Drawing in frame order means a receiver that consumes one frame at a time
    sees exactly the same realization as whole-utterance processing.
    """
    fs = steps if frame_steps is None else frame_steps
    if steps % fs:
        raise InputError(f"{steps} latent steps do not split into frames of {fs}")
    raw = rng.standard_normal((steps // fs, channels, fs))
    return raw.transpose(1, 0, 2).reshape(channels, steps)


def awgn_transmit(z, cfg: ChannelConfig, call_index: int = 0, frame_steps: int | None = None, rngs=None):
    """Add white Gaussian noise of variance 10^(-snr_w/10).

    ``z`` is 1-D, (C, T) or (B, C, T). Each batch item gets its own stream,
    taken from ``rngs`` when given, else derived from (seed, call_index, item).
    The noise enters the graph as a constant.
    """
    if cfg.noiseless:
        return z
    data = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if data.ndim == 1:
        rng = rngs[0] if rngs is not None else utterance_rng(cfg.seed, call_index)
        noise = rng.standard_normal(data.size)
    elif data.ndim in (2, 3):
        items = data[None] if data.ndim == 2 else data
        b, c, t = items.shape
        if rngs is None:
            rngs = [np.random.default_rng(np.random.SeedSequence([cfg.seed, call_index, i])) for i in range(b)]
        if len(rngs) != b:
            raise InputError(f"need one noise stream per batch item ({b}), got {len(rngs)}")
        noise = np.stack([draw_noise(r, c, t, frame_steps) for r in rngs]).reshape(data.shape)
    else:
        raise InputError(f"channel symbols must have 1 to 3 dims, got {data.shape}")
    noise *= cfg.noise_std
    if isinstance(z, Tensor):
        return ops.add(z, Tensor(noise))
    return data + noise


def empirical_snr(z_in, z_out) -> float:
    """10·log10(P_in / P_(out - in)); +inf when nothing was added."""
    a = np.asarray(z_in.data if isinstance(z_in, Tensor) else z_in, dtype=np.float64).ravel()
    b = np.asarray(z_out.data if isinstance(z_out, Tensor) else z_out, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InputError(f"length mismatch: {a.size} vs {b.size}")
    p_noise = float(np.mean((b - a) ** 2))
    if p_noise == 0.0:
        return math.inf
    return float(10.0 * np.log10(np.mean(a * a) / p_noise))
