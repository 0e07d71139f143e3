"""Causal Conv-TasNet style enhancer: learned basis, TCN mask estimator, learned synthesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor, as_tensor
from ..errors import ConfigurationError, FramingError
from .layers import Conv1d, ConvTranspose1d, CumulativeLayerNorm, Module, PReLU


@dataclass(frozen=True)
class EnhancerConfig:
    n_basis: int = 64
    window: int = 48
    bottleneck: int = 16
    hidden: int = 32
    kernel: int = 3
    blocks: int = 4
    repeats: int = 2

    def __post_init__(self):
        if self.window < 2 or self.window % 2:
            raise ConfigurationError(f"window {self.window} must be even and at least 2")
        for name in ("n_basis", "bottleneck", "hidden", "kernel", "blocks", "repeats"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def hop(self) -> int:
        return self.window // 2

    @property
    def latency_samples(self) -> int:
        return self.window


class TCNBlock(Module):
    def __init__(self, cfg: EnhancerConfig, dilation: int, rng, residual: bool = True):
        h, b = cfg.hidden, cfg.bottleneck
        self.inp = Conv1d(b, h, 1, rng)
        self.act1 = PReLU(1)
        self.norm1 = CumulativeLayerNorm(h)
        self.depthwise = Conv1d(h, h, cfg.kernel, rng, dilation=dilation, groups=h)
        self.act2 = PReLU(1)
        self.norm2 = CumulativeLayerNorm(h)
        # the final block only feeds the skip sum
        self.res = Conv1d(h, b, 1, rng) if residual else None
        self.skip = Conv1d(h, b, 1, rng)

    def forward(self, x, state=None):
        h = self.norm1.forward(self.act1.forward(self.inp.forward(x)), state)
        h = self.norm2.forward(self.act2.forward(self.depthwise.forward(h, state)), state)
        out = x if self.res is None else ops.add(x, self.res.forward(h))
        return out, self.skip.forward(h)


class Enhancer(Module):
    """Single-source masking network operating on half-overlapping windows.

    The waveform is cut into hop-sized blocks; analysis window ``j`` spans
    blocks ``j - 1`` and ``j`` and its masked representation is synthesized
    back onto blocks ``j`` and ``j + 1``. Output block ``j`` therefore depends
    on input blocks up to ``j`` only.
    """

    kind = "enhancer"

    def __init__(self, cfg: EnhancerConfig = EnhancerConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.analysis = Conv1d(cfg.hop, cfg.n_basis, 2, rng, bias=False)
        self.in_norm = CumulativeLayerNorm(cfg.n_basis)
        self.bottleneck = Conv1d(cfg.n_basis, cfg.bottleneck, 1, rng)
        depth = cfg.repeats * cfg.blocks
        self.tcn = [TCNBlock(cfg, 2 ** (i % cfg.blocks), rng, residual=i < depth - 1) for i in range(depth)]
        self.out_act = PReLU(1)
        self.mask_conv = Conv1d(cfg.bottleneck, cfg.n_basis, 1, rng)
        self.synthesis = ConvTranspose1d(cfg.n_basis, cfg.hop, 2, 1, rng, bias=False)
        self.bind_paths()

    def _blocks(self, y) -> Tensor:
        y = as_tensor(y)
        if y.ndim == 1:
            y = ops.reshape(y, (1, 1, y.shape[0]))
        elif y.ndim == 2:
            y = ops.reshape(y, (y.shape[0], 1, y.shape[1]))
        if y.ndim != 3 or y.shape[1] != 1:
            raise ConfigurationError(f"expected waveform (T,), (B, T) or (B, 1, T), got {y.shape}")
        if y.shape[2] % self.cfg.hop:
            raise FramingError(f"length {y.shape[2]} is not a multiple of the {self.cfg.hop}-sample hop")
        return ops.fold(y, self.cfg.hop)

    def mask(self, y, state=None) -> tuple[Tensor, Tensor]:
        """Return the nonnegative basis activations and the sigmoid mask."""
        w = ops.relu(self.analysis.forward(self._blocks(y), state))
        h = self.bottleneck.forward(self.in_norm.forward(w, state))
        skip = None
        for blk in self.tcn:
            h, s = blk.forward(h, state)
            skip = s if skip is None else ops.add(skip, s)
        m = ops.sigmoid(self.mask_conv.forward(self.out_act.forward(skip)))
        return w, m

    def forward(self, y, state=None) -> Tensor:
        """(B, T) noisy waveform -> (B, T) enhanced waveform."""
        w, m = self.mask(y, state)
        out = ops.unfold(self.synthesis.forward(ops.mul(w, m), state), self.cfg.hop)
        return ops.reshape(out, (out.shape[0], out.shape[2]))
