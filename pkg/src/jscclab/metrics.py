"""Objective quality metrics and the matching differentiable training losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import resample_poly

from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor
from .errors import InputError

SI_SDR_EPS = 1e-12
SI_SDR_CLAMP = 100.0

# intelligibility front end
_FS = 10000
_FRAME = 256
_NFFT = 512
_BANDS = 15
_MIN_FREQ = 150.0
_SEGMENT = 30
_DYN_RANGE = 40.0
_TINY = np.finfo(np.float64).eps


def _samples(x) -> np.ndarray:
    if hasattr(x, "samples"):
        x = x.samples
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    r, e = _samples(reference), _samples(estimate)
    if r.shape != e.shape:
        raise InputError(f"length mismatch: reference {r.shape} vs estimate {e.shape}")
    return r, e


def si_sdr(reference, estimate) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, clamped to +/-100."""
    r, e = _pair(reference, estimate)
    if r.ndim != 1 or r.size < 2:
        raise InputError("SI-SDR needs 1-D signals of at least two samples")
    rr = float(np.dot(r, r))
    if rr == 0.0:
        raise InputError("reference signal is all zeros")
    target = (np.dot(e, r) / rr) * r
    num = float(np.dot(target, target))
    resid = target - e
    den = float(np.dot(resid, resid)) + SI_SDR_EPS
    if num == 0.0:
        return -SI_SDR_CLAMP
    return float(np.clip(10.0 * np.log10(num / den), -SI_SDR_CLAMP, SI_SDR_CLAMP))


def mse(x, x_hat) -> float:
    a, b = _pair(x, x_hat)
    return float(np.mean((a - b) ** 2))


# -- differentiable versions ---------------------------------------------------

def si_sdr_loss(reference, estimate) -> Tensor:
    """Negative SI-SDR averaged over the batch; gradient flows into ``estimate``.

    ``reference`` is constant data of shape (T,) or (B, T); ``estimate`` a
    tensor of the same shape.
    """
    ref = _samples(reference)
    est = as_tensor(estimate)
    if ref.shape != est.shape:
        raise InputError(f"length mismatch: reference {ref.shape} vs estimate {est.shape}")
    rr = np.sum(ref * ref, axis=-1, keepdims=True)
    if np.any(rr == 0.0):
        raise InputError("reference signal is all zeros")
    ref_t = Tensor(ref)
    alpha = ops.div(ops.sum(ops.mul(est, ref_t), axis=-1, keepdims=True), Tensor(rr))
    target = ops.mul(alpha, ref_t)
    num = ops.sum(ops.square(target), axis=-1)
    den = ops.add(ops.sum(ops.square(ops.sub(target, est)), axis=-1), SI_SDR_EPS)
    lim = 10.0 ** (SI_SDR_CLAMP / 10.0)
    ratio = ops.clamp(ops.div(num, den), 1.0 / lim, lim)
    return ops.neg(ops.mean(ops.scale(ops.log10(ratio), 10.0)))


def mse_loss(reference, estimate) -> Tensor:
    ref = _samples(reference)
    est = as_tensor(estimate)
    if ref.shape != est.shape:
        raise InputError(f"length mismatch: reference {ref.shape} vs estimate {est.shape}")
    return ops.mean(ops.square(ops.sub(est, Tensor(ref))))


# -- ESTOI ---------------------------------------------------------------------

@lru_cache(maxsize=None)
def _third_octave_matrix() -> np.ndarray:
    f = np.linspace(0, _FS, _NFFT + 1)[: _NFFT // 2 + 1]
    k = np.arange(_BANDS, dtype=np.float64)
    lo = _MIN_FREQ * 2.0 ** ((2 * k - 1) / 6)
    hi = _MIN_FREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((_BANDS, f.size))
    for i in range(_BANDS):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _window() -> np.ndarray:
    return np.hanning(_FRAME + 2)[1:-1]


def _frames(x: np.ndarray, hop: int) -> np.ndarray:
    starts = range(0, x.size - _FRAME, hop)
    w = _window()
    return np.array([w * x[s: s + _FRAME] for s in starts]).reshape(-1, _FRAME)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    out = np.zeros((frames.shape[0] - 1) * hop + _FRAME)
    for i, fr in enumerate(frames):
        out[i * hop: i * hop + _FRAME] += fr
    return out


def _drop_silence(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hop = _FRAME // 2
    xf, yf = _frames(x, hop), _frames(y, hop)
    if xf.shape[0] == 0:
        raise InputError("signal too short for intelligibility analysis")
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _TINY)
    keep = energy > energy.max() - _DYN_RANGE
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x, _FRAME // 2), n=_NFFT, axis=1)
    return np.sqrt(_third_octave_matrix() @ (np.abs(spec) ** 2).T)


def _normalize(seg: np.ndarray, axis: int) -> np.ndarray:
    seg = seg - seg.mean(axis=axis, keepdims=True)
    return seg / (np.linalg.norm(seg, axis=axis, keepdims=True) + _TINY)


def estoi(clean, processed, sample_rate: int = 16000) -> float:
    """Extended short-time objective intelligibility, in [-1, 1]."""
    x, y = _pair(clean, processed)
    if x.ndim != 1:
        raise InputError("ESTOI needs 1-D signals")
    if sample_rate != 16000:
        raise InputError("ESTOI expects 16 kHz input")
    if not np.any(x):
        raise InputError("clean signal is silent")
    x, y = resample_poly(x, 5, 8), resample_poly(y, 5, 8)
    x, y = _drop_silence(x, y)
    xb, yb = _band_envelopes(x), _band_envelopes(y)
    frames = xb.shape[1]
    if frames < _SEGMENT:
        raise InputError(
            f"only {frames} active analysis frames; at least {_SEGMENT} (384 ms of active speech) are needed"
        )
    idx = np.arange(_SEGMENT)[None, :] + np.arange(frames - _SEGMENT + 1)[:, None]
    xs = xb[:, idx].transpose(1, 0, 2)
    ys = yb[:, idx].transpose(1, 0, 2)
    xn = _normalize(_normalize(xs, 2), 1)
    yn = _normalize(_normalize(ys, 2), 1)
    return float(np.sum(xn * yn) / (_SEGMENT * xn.shape[0]))


# -- bundle --------------------------------------------------------------------

@dataclass
class MetricReport:
    si_sdr_db: float | None = None
    estoi: float | None = None
    mse: float | None = None
    pesq: None = None
    errors: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"si_sdr_db": self.si_sdr_db, "estoi": self.estoi, "mse": self.mse}


def report(reference, estimate) -> MetricReport:
    """All metrics at once; a failing metric is left empty and its error kept."""
    out = MetricReport()
    for name, fn in (("si_sdr_db", si_sdr), ("estoi", estoi), ("mse", mse)):
        try:
            setattr(out, name, fn(reference, estimate))
        except InputError as exc:
            out.errors[name] = str(exc)
    return out
