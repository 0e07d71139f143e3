"""Parameterized building blocks with optional streaming state.

Every layer's ``forward`` takes an optional ``state`` dict. When it is
``None`` the layer processes a whole utterance with zero left-padding. When
given, the layer reads its carried history from ``state[self.path]`` (absent
on the first chunk) and writes the updated history back, so feeding an
utterance chunk by chunk reproduces the whole-utterance output exactly.
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor
from ..errors import CheckpointError, ConfigurationError


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Module:
    path: str = ""

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
        for name, child in self.children():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def bind_paths(self, prefix: str = "") -> None:
        """Give every submodule a unique dotted name used as its state key."""
        self.path = prefix
        for name, child in self.children():
            child.bind_paths(f"{prefix}.{name}" if prefix else name)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"shape mismatch for {name}: stored {value.shape}, model {p.shape}")
            p.data = value.copy()


class Conv1d(Module):
    """Causal dilated convolution; weight (C_out, C_in/groups, K)."""

    def __init__(self, c_in, c_out, kernel, rng, dilation=1, groups=1, bias=True):
        if c_in % groups or c_out % groups:
            raise ConfigurationError(f"channels {c_in}->{c_out} not divisible into {groups} groups")
        fan_in = c_in // groups * kernel
        self.c_in, self.kernel, self.dilation, self.groups = c_in, kernel, dilation, groups
        self.weight = parameter(_uniform(rng, fan_in, (c_out, c_in // groups, kernel)))
        self.bias = parameter(_uniform(rng, fan_in, (c_out,))) if bias else None

    @property
    def receptive(self) -> int:
        return (self.kernel - 1) * self.dilation

    def forward(self, x, state=None):
        pad = self.receptive
        if state is None or pad == 0:
            return ops.conv1d_causal(x, self.weight, self.bias, dilation=self.dilation, groups=self.groups)
        hist = state.get(self.path)
        out = ops.conv1d_causal(x, self.weight, self.bias, dilation=self.dilation,
                                groups=self.groups, history=hist)
        xd = x.data if isinstance(x, Tensor) else np.asarray(x)
        if hist is None:
            hist = np.zeros(xd.shape[:2] + (pad,))
        state[self.path] = np.concatenate([hist, xd], axis=2)[:, :, -pad:].copy()
        return out


class ConvTranspose1d(Module):
    """Transposed convolution; output step j sees input steps <= j // stride."""

    def __init__(self, c_in, c_out, kernel, stride, rng, bias=True):
        fan_in = max(1, c_in * kernel // stride)
        self.kernel, self.stride = kernel, stride
        self.weight = parameter(_uniform(rng, fan_in, (c_in, c_out, kernel)))
        self.bias = parameter(_uniform(rng, fan_in, (c_out,))) if bias else None

    @property
    def history_steps(self) -> int:
        return -(-(self.kernel - self.stride) // self.stride) if self.kernel > self.stride else 0

    def forward(self, x, state=None):
        h = self.history_steps
        if state is None or h == 0:
            return ops.conv_transpose1d(x, self.weight, self.bias, stride=self.stride)
        hist = state.get(self.path)
        out = ops.conv_transpose1d(x, self.weight, self.bias, stride=self.stride, history=hist)
        xd = x.data if isinstance(x, Tensor) else np.asarray(x)
        full = xd if hist is None else np.concatenate([hist, xd], axis=2)
        if full.shape[2] < h:
            full = np.concatenate([np.zeros(full.shape[:2] + (h - full.shape[2],)), full], axis=2)
        state[self.path] = full[:, :, -h:].copy()
        return out


class PReLU(Module):
    def __init__(self, channels: int = 1, init: float = 0.25):
        self.alpha = parameter(np.full(channels, init))

    def forward(self, x, state=None):
        return ops.prelu(x, self.alpha)


class CumulativeLayerNorm(Module):
    """Per-step normalization over all channels and all steps so far."""

    def __init__(self, channels: int, eps: float = ops.EPS):
        self.eps = eps
        self.gain = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))

    def forward(self, x, state=None):
        if state is None:
            return ops.cumulative_layer_norm(x, self.gain, self.bias, self.eps)
        carry = state.get(self.path)
        if carry is None:
            b = x.shape[0] if x.ndim == 3 else 1
            carry = (np.zeros(b), np.zeros(b), 0)
        out, state[self.path] = ops.cumulative_layer_norm(x, self.gain, self.bias, self.eps, carry=carry)
        return out


class FrameLayerNorm(Module):
    """Layer norm with statistics over each frame of ``frame_steps`` steps."""

    def __init__(self, channels: int, frame_steps: int, eps: float = ops.EPS):
        self.frame_steps, self.eps = frame_steps, eps
        self.gain = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))

    def forward(self, x, state=None):
        return ops.frame_layer_norm(x, self.gain, self.bias, self.frame_steps, self.eps)


class Downsample(Module):
    """Block-causal stride-``factor`` reduction: fold blocks into channels, then a 2-tap causal conv.

    Output step ``s`` sees input blocks ``s`` and ``s - 1``, that is inputs
    up to the end of its own block and never beyond.
    """

    def __init__(self, c_in, c_out, factor, rng, bias=True):
        self.factor = factor
        self.conv = Conv1d(c_in * factor, c_out, 2, rng, bias=bias)

    def forward(self, x, state=None):
        return self.conv.forward(ops.fold(x, self.factor), state)
