"""Differentiable operations on :class:`Tensor`.

Convolution layouts follow the usual ``(batch, channels, time)`` order;
unbatched ``(channels, time)`` inputs are accepted and returned unbatched.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ChannelError, ConfigurationError, FramingError, InputError
from . import _kernels
from .tensor import Tensor, as_tensor, make_result

EPS = 1e-8
_UNIT_POWER_TOL = 64 * np.finfo(np.float64).eps


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigurationError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return make_result("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_result("sub", a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return make_result("mul", ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return make_result("div", out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return make_result("scale", a.data * factor, (a,), lambda g: (g * factor,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result("exp", out, (a,), lambda g: (g * out,))


def log10(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result("log10", np.log10(ad), (a,), lambda g: (g / (ad * math.log(10.0)),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return make_result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def prelu(a, alpha) -> Tensor:
    """Leaky rectifier with a learnable slope per channel (axis -2)."""
    a, alpha = as_tensor(a), as_tensor(alpha)
    ad = a.data
    if ad.ndim >= 2:
        if alpha.data.shape not in ((ad.shape[-2],), (1,)):
            raise ConfigurationError(
                f"prelu: slope shape {alpha.shape} does not match {ad.shape[-2]} channels")
        x3 = np.ascontiguousarray(ad.reshape((-1,) + ad.shape[-2:]))
    else:
        if alpha.data.size != 1:
            raise ConfigurationError("prelu on a vector needs a single slope")
        x3 = np.ascontiguousarray(ad.reshape(1, 1, -1))
    al = np.ascontiguousarray(alpha.data.reshape(-1))
    out = _kernels.prelu_forward(x3, al).reshape(ad.shape)
    ashape = alpha.shape

    def back(g):
        gx, ga = _kernels.prelu_backward(np.ascontiguousarray(g.reshape(x3.shape)), x3, al)
        if al.size == 1 and ga.size > 1:
            ga = np.array([ga.sum()])
        return gx.reshape(ad.shape), ga.reshape(ashape)

    return make_result("prelu", out, (a, alpha), back)


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return make_result("clamp", np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def pointwise(x, kind: str, other=None, alpha=None, factor: float | None = None) -> Tensor:
    """Dispatch to one of the elementwise kinds used inside the networks."""
    if kind == "prelu":
        return prelu(x, alpha)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    if kind == "add":
        return add(x, other)
    if kind == "mul":
        return mul(x, other)
    if kind == "scale":
        return scale(x, factor)
    raise ConfigurationError(f"unknown pointwise kind {kind!r}")


# -- shape and reduction -----------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_result("sum", out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def fold(x, block: int) -> Tensor:
    """Stack each run of ``block`` samples into channels: (B, C, T) -> (B, C*block, T/block)."""
    x = as_tensor(x)
    b, c, t = x.shape
    if t % block:
        raise FramingError(f"length {t} is not a multiple of the block size {block}")
    y = reshape(x, (b, c, t // block, block))
    y = transpose(y, (0, 1, 3, 2))
    return reshape(y, (b, c * block, t // block))


def unfold(x, block: int) -> Tensor:
    """Inverse of :func:`fold`."""
    x = as_tensor(x)
    b, cb, t = x.shape
    if cb % block:
        raise ConfigurationError(f"{cb} channels cannot be split into blocks of {block}")
    y = reshape(x, (b, cb // block, block, t))
    y = transpose(y, (0, 1, 3, 2))
    return reshape(y, (b, cb // block, t * block))


# -- convolution -------------------------------------------------------------

def _as_batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise ConfigurationError(f"{op} expects (C, T) or (B, C, T) input, got {x.shape}")


def conv1d_causal(x, weight, bias=None, stride: int = 1, dilation: int = 1,
                  groups: int = 1, history: np.ndarray | None = None) -> Tensor:
    """Causal dilated 1-D convolution.

    The input is left-padded with ``(K - 1) * dilation`` zeros, or with
    ``history`` when streaming, so output step ``t`` sees inputs up to
    ``t * stride`` only. Output length is ``ceil(T / stride)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xd, squeeze = _as_batched(x, "conv1d_causal")
    if weight.ndim != 3:
        raise ConfigurationError(f"conv weight must be (C_out, C_in/groups, K), got {weight.shape}")
    c_out, c_per_group, k = weight.shape
    batch, c_in, t_in = xd.shape
    if t_in == 0:
        raise InputError("conv1d_causal on a zero-length input")
    if stride < 1 or dilation < 1 or groups < 1:
        raise ConfigurationError("stride, dilation and groups must be positive")
    if c_in != c_per_group * groups or c_out % groups:
        raise ConfigurationError(
            f"conv1d_causal: input has {c_in} channels but weight expects "
            f"{c_per_group * groups} ({groups} groups of {c_per_group})")
    pad = (k - 1) * dilation
    if history is None:
        xp = np.zeros((batch, c_in, pad + t_in))
        xp[:, :, pad:] = xd
    else:
        if history.shape != (batch, c_in, pad):
            raise ConfigurationError(f"history shape {history.shape} != {(batch, c_in, pad)}")
        xp = np.concatenate([history, xd], axis=2)
    t_out = -(-t_in // stride)
    w = np.ascontiguousarray(weight.data)
    if bias is None:
        inputs = (x, weight)
        b = np.zeros(c_out)
    else:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ConfigurationError(f"bias shape {bias.shape} != ({c_out},)")
        inputs = (x, weight, bias)
        b = bias.data
    out = _kernels.conv1d_forward(xp, w, b, stride, dilation, groups, t_out)

    def back(g):
        g3 = np.ascontiguousarray(g[None] if squeeze else g)
        gxp, gw = _kernels.conv1d_backward(g3, xp, w, stride, dilation, groups)
        gx = gxp[:, :, pad:]
        grads = [gx[0] if squeeze else gx, gw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    return make_result("conv1d_causal", out[0] if squeeze else out, inputs, back)


def conv_transpose1d(x, weight, bias=None, stride: int = 1,
                     history: np.ndarray | None = None) -> Tensor:
    """Transposed 1-D convolution trimmed to exactly ``T * stride`` samples.

    Output sample ``j`` receives contributions from input steps
    ``t <= j // stride`` only; the spill-over past the end is dropped.
    ``history`` supplies earlier input steps when streaming.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xd, squeeze = _as_batched(x, "conv_transpose1d")
    if weight.ndim != 3:
        raise ConfigurationError(f"transpose weight must be (C_in, C_out, K), got {weight.shape}")
    c_in_w, c_out, k = weight.shape
    batch, c_in, t_in = xd.shape
    if c_in != c_in_w:
        raise ConfigurationError(
            f"conv_transpose1d: input has {c_in} channels but weight expects {c_in_w}")
    if stride < 1:
        raise ConfigurationError("stride must be positive")
    if history is None:
        h = 0
        xin = np.ascontiguousarray(xd)
    else:
        h = history.shape[2]
        if history.shape[:2] != (batch, c_in):
            raise ConfigurationError(f"history shape {history.shape} incompatible with input")
        xin = np.concatenate([history, xd], axis=2)
    total = xin.shape[2]
    t_full = max((total - 1) * stride + k, total * stride)
    w = np.ascontiguousarray(weight.data)
    if bias is None:
        inputs = (x, weight)
        b = np.zeros(c_out)
    else:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ConfigurationError(f"bias shape {bias.shape} != ({c_out},)")
        inputs = (x, weight, bias)
        b = bias.data
    full = _kernels.conv_transpose1d_forward(xin, w, b, stride, t_full)
    lo, hi = h * stride, (h + t_in) * stride
    out = full[:, :, lo:hi]

    def back(g):
        g3 = g[None] if squeeze else g
        gfull = np.zeros((batch, c_out, t_full))
        gfull[:, :, lo:hi] = g3
        gx, gw = _kernels.conv_transpose1d_backward(gfull, xin, w, stride)
        gx = gx[:, :, h:]
        grads = [gx[0] if squeeze else gx, gw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    return make_result("conv_transpose1d", out[0] if squeeze else out, inputs, back)


# -- normalization -----------------------------------------------------------

def cumulative_layer_norm(x, gain, bias, eps: float = EPS, carry=None):
    """Normalize step ``t`` by statistics over all channels and steps ``<= t``.

    ``carry`` is ``(sum, sum_of_squares, steps)`` from an earlier chunk of the
    same stream; when given, the updated carry is returned alongside the output.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd, squeeze = _as_batched(x, "cumulative_layer_norm")
    batch, c, t = xd.shape
    if gain.shape != (c,) or bias.shape != (c,):
        raise ConfigurationError(f"cLN gain/bias must have shape ({c},)")
    xd = np.ascontiguousarray(xd)
    s1, s2 = _kernels.channel_moments(xd)
    if carry is None:
        t0 = 0
        big1 = np.cumsum(s1, axis=1)
        big2 = np.cumsum(s2, axis=1)
    else:
        c1, c2, t0 = carry
        big1 = np.cumsum(np.concatenate([c1[:, None], s1], axis=1), axis=1)[:, 1:]
        big2 = np.cumsum(np.concatenate([c2[:, None], s2], axis=1), axis=1)[:, 1:]
    count = c * np.arange(t0 + 1, t0 + t + 1, dtype=np.float64)
    mu = big1 / count
    var = np.maximum(big2 / count - mu * mu, 0.0)
    sigma = np.sqrt(var + eps)
    xhat = (xd - mu[:, None, :]) / sigma[:, None, :]
    gd, bd = gain.data, bias.data
    out = gd[:, None] * xhat + bd[:, None]

    def back(g):
        g3 = g[None] if squeeze else g
        gxhat = g3 * gd[:, None]
        dsigma = -(gxhat * xhat).sum(axis=1) / sigma
        dvar = dsigma / (2.0 * sigma)
        dmu = -gxhat.sum(axis=1) / sigma
        d_big1 = (dmu - 2.0 * mu * dvar) / count
        d_big2 = dvar / count
        ds1 = np.cumsum(d_big1[:, ::-1], axis=1)[:, ::-1]
        ds2 = np.cumsum(d_big2[:, ::-1], axis=1)[:, ::-1]
        gx = gxhat / sigma[:, None, :] + ds1[:, None, :] + 2.0 * xd * ds2[:, None, :]
        return (gx[0] if squeeze else gx,
                (g3 * xhat).sum(axis=(0, 2)),
                g3.sum(axis=(0, 2)))

    result = make_result("cumulative_layer_norm", out[0] if squeeze else out, (x, gain, bias), back)
    if carry is None:
        return result
    return result, (big1[:, -1].copy(), big2[:, -1].copy(), t0 + t)


def _frame_stats(xd: np.ndarray, frame_steps: int, op: str):
    t = xd.shape[2]
    if t % frame_steps:
        raise FramingError(f"{op}: length {t} is not a multiple of the frame size {frame_steps}")
    return _kernels.frame_moments(np.ascontiguousarray(xd), frame_steps)


def frame_layer_norm(x, gain, bias, frame_steps: int, eps: float = EPS) -> Tensor:
    """Layer normalization whose statistics span each block of ``frame_steps`` steps.

    Every frame is normalized with its own mean and variance over all
    channels, so the op is causal at frame granularity.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd, squeeze = _as_batched(x, "frame_layer_norm")
    batch, c, t = xd.shape
    if gain.shape != (c,) or bias.shape != (c,):
        raise ConfigurationError(f"layer norm gain/bias must have shape ({c},)")
    s1, s2 = _frame_stats(xd, frame_steps, "frame_layer_norm")
    n = c * frame_steps
    mu = s1 / n
    var = np.maximum(s2 / n - mu * mu, 0.0)
    sigma = np.sqrt(var + eps)
    mu_t = np.repeat(mu, frame_steps, axis=1)[:, None, :]
    sigma_t = np.repeat(sigma, frame_steps, axis=1)[:, None, :]
    xhat = (xd - mu_t) / sigma_t
    gd, bd = gain.data, bias.data
    out = gd[:, None] * xhat + bd[:, None]
    n_frames = t // frame_steps

    def block_sum(a):
        return a.reshape(batch, c, n_frames, frame_steps).sum(axis=(1, 3))

    def back(g):
        g3 = g[None] if squeeze else g
        gxhat = g3 * gd[:, None]
        dsigma = -block_sum(gxhat * xhat) / sigma
        dvar = dsigma / (2.0 * sigma)
        dmu = -block_sum(gxhat) / sigma
        d1 = np.repeat((dmu - 2.0 * mu * dvar) / n, frame_steps, axis=1)[:, None, :]
        d2 = np.repeat(dvar / n, frame_steps, axis=1)[:, None, :]
        gx = gxhat / sigma_t + d1 + 2.0 * xd * d2
        return (gx[0] if squeeze else gx,
                (g3 * xhat).sum(axis=(0, 2)),
                g3.sum(axis=(0, 2)))

    return make_result("frame_layer_norm", out[0] if squeeze else out, (x, gain, bias), back)


def power_normalize(x, frame_steps: int | None = None) -> Tensor:
    """Scale each frame to unit mean-square power.

    ``frame_steps`` is the number of time steps per frame on the last axis;
    ``None`` treats each batch item (or a plain vector) as one frame. Frames
    already at unit power within a few ulps pass through unchanged, which
    makes the op idempotent bit for bit.
    """
    x = as_tensor(x)
    shape = x.shape
    if x.ndim == 1:
        xd = x.data[None, None, :]
    elif x.ndim == 2:
        xd = x.data[None]
    elif x.ndim == 3:
        xd = x.data
    else:
        raise ConfigurationError(f"power_normalize expects up to 3 dims, got {shape}")
    batch, c, t = xd.shape
    fs = t if frame_steps is None else frame_steps
    _, s2 = _frame_stats(xd, fs, "power_normalize")
    if np.any(s2 == 0.0):
        raise ChannelError("cannot power-normalize an all-zero frame: SNR is undefined")
    n = c * fs
    ms = s2 / n
    r = 1.0 / np.sqrt(ms)
    r = np.where(np.abs(ms - 1.0) <= _UNIT_POWER_TOL, 1.0, r)
    r_t = np.repeat(r, fs, axis=1)[:, None, :]
    out = (xd * r_t).reshape(shape)
    n_frames = t // fs

    def back(g):
        g3 = g.reshape(xd.shape)
        dot = (g3 * xd).reshape(batch, c, n_frames, fs).sum(axis=(1, 3))
        coef = np.repeat(dot / (n * ms ** 1.5), fs, axis=1)[:, None, :]
        return ((g3 * r_t - xd * coef).reshape(shape),)

    return make_result("power_normalize", out, (x,), back)
