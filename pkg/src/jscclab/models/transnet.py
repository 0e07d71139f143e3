"""Convolutional speech codec that maps waveform frames to analog channel symbols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor, as_tensor
from ..errors import ConfigurationError, FramingError
from .layers import Conv1d, ConvTranspose1d, Downsample, FrameLayerNorm, Module, PReLU

SAMPLE_RATE = 16000
RATIOS = (0.25, 0.5, 1.0)
LATENCIES_MS = (3, 5, 9)


@dataclass(frozen=True)
class TransNetConfig:
    frame_len: int = 48
    widths: tuple = (4, 8, 16, 16)
    c_last: int = 8
    kernel_outer: int = 7
    kernel_res: int = 3
    dilations: tuple = (1, 3, 9)
    stride: int = 2
    upsample_kernel: int = 4
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "dilations", tuple(self.dilations))
        if len(self.widths) != 4:
            raise ConfigurationError("TransNet needs four widths before the last layer")
        if self.stride != 2:
            raise ConfigurationError("the encoder uses stride 2 in each of its three blocks")
        if self.frame_len <= 0 or self.frame_len % self.downsampling:
            raise ConfigurationError(f"frame length {self.frame_len} must be a positive multiple of {self.downsampling}")
        if self.c_last <= 0:
            raise ConfigurationError("c_last must be positive")

    @property
    def downsampling(self) -> int:
        return self.stride ** 3

    @property
    def ratio(self) -> float:
        return self.c_last / self.downsampling

    @property
    def latent_steps(self) -> int:
        return self.frame_len // self.downsampling

    @property
    def symbols_per_frame(self) -> int:
        return self.c_last * self.latent_steps

    @property
    def latency_ms(self) -> float:
        return self.frame_len / SAMPLE_RATE * 1000.0

    @classmethod
    def create(cls, ratio: float = 1.0, latency_ms: float = 3, **kw) -> "TransNetConfig":
        if ratio not in RATIOS:
            raise ConfigurationError(f"ratio {ratio} not in {RATIOS}")
        return cls(frame_len=frame_len_for(latency_ms), c_last=int(round(ratio * 8)), **kw)


def frame_len_for(latency_ms: float) -> int:
    n = latency_ms * SAMPLE_RATE / 1000.0
    if n != int(n) or int(n) % 8:
        raise ConfigurationError(f"latency {latency_ms} ms gives {n} samples, not a multiple of 8")
    return int(n)


class ResidualUnit(Module):
    def __init__(self, channels, kernel, dilation, rng, bias=True):
        self.act1 = PReLU(channels)
        self.conv = Conv1d(channels, channels, kernel, rng, dilation=dilation, bias=bias)
        self.act2 = PReLU(channels)
        self.proj = Conv1d(channels, channels, 1, rng, bias=bias)

    def forward(self, x, state=None):
        h = self.conv.forward(self.act1.forward(x), state)
        h = self.proj.forward(self.act2.forward(h), state)
        return ops.add(x, h)


class EncoderBlock(Module):
    def __init__(self, c_in, c_out, cfg: TransNetConfig, rng):
        self.units = [ResidualUnit(c_in, cfg.kernel_res, d, rng, cfg.bias) for d in cfg.dilations]
        self.down = Downsample(c_in, c_out, cfg.stride, rng, cfg.bias)
        self.act = PReLU(c_out)

    def forward(self, x, state=None):
        for u in self.units:
            x = u.forward(x, state)
        return self.act.forward(self.down.forward(x, state))


class DecoderBlock(Module):
    def __init__(self, c_in, c_out, cfg: TransNetConfig, rng):
        self.up = ConvTranspose1d(c_in, c_out, cfg.upsample_kernel, cfg.stride, rng, cfg.bias)
        self.act = PReLU(c_out)
        self.units = [ResidualUnit(c_out, cfg.kernel_res, d, rng, cfg.bias) for d in cfg.dilations]

    def forward(self, x, state=None):
        x = self.act.forward(self.up.forward(x, state))
        for u in self.units:
            x = u.forward(x, state)
        return x


class TransNet(Module):
    """Encoder, power constraint and mirrored decoder.

    Frames of ``n`` samples become ``c_last x n/8`` symbols. Every layer is
    causal, the strided reductions are aligned to block ends and the
    normalization layers operate per frame, so a frame's symbols depend on
    that frame and earlier ones only.
    """

    kind = "transnet"

    def __init__(self, cfg: TransNetConfig = TransNetConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        w = cfg.widths
        self.enc_in = Conv1d(1, w[0], cfg.kernel_outer, rng, bias=cfg.bias)
        self.enc_blocks = [EncoderBlock(w[i], w[i + 1], cfg, rng) for i in range(3)]
        self.enc_out = Conv1d(w[3], cfg.c_last, cfg.kernel_outer, rng, bias=cfg.bias)
        self.norm = FrameLayerNorm(cfg.c_last, cfg.latent_steps)
        self.dec_in = Conv1d(cfg.c_last, w[3], cfg.kernel_outer, rng, bias=cfg.bias)
        self.dec_act = PReLU(w[3])
        self.dec_blocks = [DecoderBlock(w[3 - i], w[2 - i], cfg, rng) for i in range(3)]
        self.dec_out = Conv1d(w[0], 1, cfg.kernel_outer, rng, bias=cfg.bias)
        self.bind_paths()

    def _as_waveform_batch(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 1:
            x = ops.reshape(x, (1, 1, x.shape[0]))
        elif x.ndim == 2:
            x = ops.reshape(x, (x.shape[0], 1, x.shape[1]))
        if x.ndim != 3 or x.shape[1] != 1:
            raise ConfigurationError(f"expected waveform (T,), (B, T) or (B, 1, T), got {x.shape}")
        if x.shape[2] % self.cfg.frame_len:
            raise FramingError(f"length {x.shape[2]} is not a multiple of the {self.cfg.frame_len}-sample frame")
        return x

    def encode(self, x, state=None, normalize_power: bool = True) -> Tensor:
        """(B, T) waveform -> (B, c_last, T/8) unit-power symbols."""
        h = self.enc_in.forward(self._as_waveform_batch(x), state)
        for blk in self.enc_blocks:
            h = blk.forward(h, state)
        h = self.norm.forward(self.enc_out.forward(h, state))
        if normalize_power:
            h = ops.power_normalize(h, self.cfg.latent_steps)
        return h

    def decode(self, z, state=None) -> Tensor:
        """(B, c_last, S) symbols -> (B, 8 S) waveform."""
        z = as_tensor(z)
        if z.ndim == 2:
            z = ops.reshape(z, (1,) + z.shape)
        if z.ndim != 3 or z.shape[1] != self.cfg.c_last:
            raise ConfigurationError(f"expected symbols (B, {self.cfg.c_last}, S), got {z.shape}")
        if z.shape[2] % self.cfg.latent_steps:
            raise FramingError(
                f"{z.shape[2]} symbol steps do not align to frames of {self.cfg.latent_steps} steps")
        h = self.dec_act.forward(self.dec_in.forward(z, state))
        for blk in self.dec_blocks:
            h = blk.forward(h, state)
        h = self.dec_out.forward(h, state)
        return ops.reshape(h, (h.shape[0], h.shape[2]))
