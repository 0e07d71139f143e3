"""Compiled inner loops for the convolution and normalization ops.

Every forward kernel accumulates each output element in a fixed order that
does not depend on the sequence length, so an output sample is bit-identical
whether it is computed on a whole utterance or on a short streaming window.
BLAS matmul does not give that guarantee (its blocking depends on the matrix
extents), which is why the contractions are written out here.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv1d_forward(xp, w, b, stride, dilation, groups, t_out):
    batch = xp.shape[0]
    c_out, c_per_group, k_size = w.shape
    o_per_group = c_out // groups
    out = np.empty((batch, c_out, t_out))
    for bi in range(batch):
        for o in range(c_out):
            g = o // o_per_group
            row = out[bi, o]
            for t in range(t_out):
                row[t] = b[o]
            for c in range(c_per_group):
                xr = xp[bi, g * c_per_group + c]
                for k in range(k_size):
                    wv = w[o, c, k]
                    off = k * dilation
                    if stride == 1:
                        seg = xr[off: off + t_out]
                        for t in range(t_out):
                            row[t] += wv * seg[t]
                    else:
                        for t in range(t_out):
                            row[t] += wv * xr[off + t * stride]
    return out


@njit(cache=True, fastmath={"reassoc"})
def conv1d_backward(gout, xp, w, stride, dilation, groups):
    batch, c_out, t_out = gout.shape
    _, c_per_group, k_size = w.shape
    o_per_group = c_out // groups
    gxp = np.zeros(xp.shape)
    gw = np.zeros(w.shape)
    for bi in range(batch):
        for o in range(c_out):
            g = o // o_per_group
            grow = gout[bi, o]
            for c in range(c_per_group):
                ci = g * c_per_group + c
                xr = xp[bi, ci]
                gxr = gxp[bi, ci]
                for k in range(k_size):
                    wv = w[o, c, k]
                    off = k * dilation
                    acc = 0.0
                    if stride == 1:
                        seg = xr[off: off + t_out]
                        gseg = gxr[off: off + t_out]
                        for t in range(t_out):
                            acc += grow[t] * seg[t]
                        for t in range(t_out):
                            gseg[t] += wv * grow[t]
                    else:
                        for t in range(t_out):
                            acc += grow[t] * xr[off + t * stride]
                            gxr[off + t * stride] += wv * grow[t]
                    gw[o, c, k] += acc
    return gxp, gw


@njit(cache=True)
def prelu_forward(x, alpha):
    """x is (rows, C, T); alpha has C entries or one shared entry."""
    rows, chans, steps = x.shape
    out = np.empty_like(x)
    for r in range(rows):
        for c in range(chans):
            a = alpha[c] if alpha.size > 1 else alpha[0]
            for t in range(steps):
                v = x[r, c, t]
                out[r, c, t] = v if v > 0 else a * v
    return out


@njit(cache=True, fastmath={"reassoc"})
def prelu_backward(g, x, alpha):
    rows, chans, steps = x.shape
    gx = np.empty_like(x)
    ga = np.zeros(chans)
    for r in range(rows):
        for c in range(chans):
            a = alpha[c] if alpha.size > 1 else alpha[0]
            acc = 0.0
            for t in range(steps):
                v = x[r, c, t]
                gv = g[r, c, t]
                if v > 0:
                    gx[r, c, t] = gv
                else:
                    gx[r, c, t] = a * gv
                    acc += gv * v
            ga[c] += acc
    return gx, ga


@njit(cache=True)
def conv_transpose1d_forward(x, w, b, stride, t_full):
    batch, c_in, t_in = x.shape
    _, c_out, k_size = w.shape
    out = np.empty((batch, c_out, t_full))
    for bi in range(batch):
        for o in range(c_out):
            row = out[bi, o]
            for j in range(t_full):
                row[j] = b[o]
            for c in range(c_in):
                xr = x[bi, c]
                for k in range(k_size):
                    wv = w[c, o, k]
                    for t in range(t_in):
                        row[t * stride + k] += wv * xr[t]
    return out


@njit(cache=True)
def conv_transpose1d_backward(gout_full, x, w, stride):
    batch, c_in, t_in = x.shape
    _, c_out, k_size = w.shape
    gx = np.zeros(x.shape)
    gw = np.zeros(w.shape)
    for bi in range(batch):
        for c in range(c_in):
            xr = x[bi, c]
            gxr = gx[bi, c]
            for o in range(c_out):
                grow = gout_full[bi, o]
                for k in range(k_size):
                    wv = w[c, o, k]
                    acc = 0.0
                    for t in range(t_in):
                        g = grow[t * stride + k]
                        acc += g * xr[t]
                        gxr[t] += wv * g
                    gw[c, o, k] += acc
    return gx, gw


@njit(cache=True)
def channel_moments(x):
    """Per (batch, time) sum and sum of squares over the channel axis."""
    batch, chans, steps = x.shape
    s1 = np.zeros((batch, steps))
    s2 = np.zeros((batch, steps))
    for bi in range(batch):
        for c in range(chans):
            xr = x[bi, c]
            for t in range(steps):
                v = xr[t]
                s1[bi, t] += v
                s2[bi, t] += v * v
    return s1, s2


@njit(cache=True)
def frame_moments(x, frame_steps):
    """Sum and sum of squares over each (channels x frame_steps) block."""
    batch, chans, steps = x.shape
    n_frames = steps // frame_steps
    s1 = np.zeros((batch, n_frames))
    s2 = np.zeros((batch, n_frames))
    for bi in range(batch):
        for f in range(n_frames):
            a1 = 0.0
            a2 = 0.0
            for c in range(chans):
                for t in range(f * frame_steps, (f + 1) * frame_steps):
                    v = x[bi, c, t]
                    a1 += v
                    a2 += v * v
            s1[bi, f] = a1
            s2[bi, f] = a2
    return s1, s2
