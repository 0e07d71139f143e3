"""Self-contained property suite behind ``jscclab verify``."""

from __future__ import annotations

import contextlib
import math
import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import gradient_check
from .autodiff.tensor import Tensor, no_grad
from .channel import ChannelConfig, awgn_transmit, empirical_snr, power_normalize
from .metrics import estoi, mse_loss, si_sdr, si_sdr_loss
from .models.convtasnet import Enhancer, EnhancerConfig
from .models.layers import (
    Conv1d,
    ConvTranspose1d,
    CumulativeLayerNorm,
    Downsample,
    FrameLayerNorm,
    Module,
    PReLU,
)
from .models.system import ORDERS, System
from .models.transnet import LATENCIES_MS, RATIOS, TransNet, TransNetConfig, frame_len_for
from .signal_io import mix_at_snr, synth_noise, synth_speechlike
from .streaming import batch_forward, latency_report, stream

FAULTS = ("causal-padding",)
GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<10} {self.detail}"


# -- gradient cases --------------------------------------------------------------

def _param_fn(layer: Module, attr: str, run: Callable[[], Tensor]):
    """Function of one parameter tensor, swapping it into ``layer`` for the call."""
    owner, name = layer, attr
    if "." in attr:
        head, name = attr.rsplit(".", 1)
        for part in head.split("."):
            owner = getattr(owner, part)

    def f(v):
        saved = getattr(owner, name)
        setattr(owner, name, v)
        try:
            return run()
        finally:
            setattr(owner, name, saved)

    return f


def _projected(out: Tensor, seed: int) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(np.random.default_rng(seed).normal(size=out.shape))))


def _layer_for(kind: str, rng: np.random.Generator):
    """A freshly built layer and a matching random input of shape (B, C, T)."""
    b, t = int(rng.integers(1, 3)), int(rng.integers(2, 7))
    c = int(rng.integers(2, 4))
    if kind == "Conv1d":
        groups = int(rng.choice([1, c]))
        cout = c * int(rng.integers(1, 3)) if groups > 1 else int(rng.integers(1, 4))
        layer = Conv1d(c, cout, int(rng.integers(1, 4)), rng, dilation=int(rng.integers(1, 4)), groups=groups)
    elif kind == "ConvTranspose1d":
        s = int(rng.integers(1, 3))
        layer = ConvTranspose1d(c, int(rng.integers(1, 4)), s + int(rng.integers(0, 3)), s, rng)
    elif kind == "PReLU":
        layer = PReLU(int(rng.choice([1, c])), init=float(rng.uniform(0.05, 0.5)))
    elif kind == "CumulativeLayerNorm":
        layer = CumulativeLayerNorm(c)
        layer.gain.data = rng.normal(size=c)
        layer.bias.data = rng.normal(size=c)
    elif kind == "FrameLayerNorm":
        layer = FrameLayerNorm(c, t)
        layer.gain.data = rng.normal(size=c)
        t *= 2
    elif kind == "Downsample":
        f = int(rng.integers(2, 4))
        layer = Downsample(c, int(rng.integers(1, 4)), f, rng)
        t *= f
    else:
        raise KeyError(kind)
    layer.bind_paths()
    x = rng.normal(size=(b, c, t))
    if kind == "PReLU":
        x = np.sign(x) * (np.abs(x) + 0.01)
    return layer, x


LAYER_KINDS = ("Conv1d", "ConvTranspose1d", "PReLU", "CumulativeLayerNorm", "FrameLayerNorm", "Downsample")
FUNCTION_KINDS = ("sigmoid", "relu", "power_normalize", "fold", "si_sdr_loss", "mse_loss")


def _function_case(kind: str, rng: np.random.Generator):
    b, c, t = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(2, 7))
    x = rng.normal(size=(b, c, t))
    seed = int(rng.integers(1 << 30))
    if kind == "sigmoid":
        return lambda v: _projected(ops.sigmoid(v), seed), x
    if kind == "relu":
        return lambda v: _projected(ops.relu(v), seed), np.sign(x) * (np.abs(x) + 0.01)
    if kind == "power_normalize":
        return lambda v: _projected(power_normalize(v, frame_steps=t), seed), x
    if kind == "fold":
        x2 = rng.normal(size=(b, c, 2 * t))
        return lambda v: _projected(ops.unfold(ops.sigmoid(ops.fold(v, 2)), 2), seed), x2
    ref = rng.normal(size=(b, 8 * t))
    est = ref + 0.5 * rng.normal(size=ref.shape)
    if kind == "si_sdr_loss":
        return lambda v: si_sdr_loss(ref, v), est
    if kind == "mse_loss":
        return lambda v: mse_loss(ref, v), est
    raise KeyError(kind)


def gradient_cases(shapes: int = 20) -> dict[str, float]:
    """Worst relative error per (layer, argument) over ``shapes`` random draws."""
    worst: dict[str, float] = {}
    for kind in LAYER_KINDS:
        rng = np.random.default_rng(zlib.crc32(kind.encode()))
        for _ in range(shapes):
            layer, x = _layer_for(kind, rng)
            seed = int(rng.integers(1 << 30))
            key = f"{kind}/input"
            worst[key] = max(worst.get(key, 0.0),
                             gradient_check(lambda v: _projected(layer.forward(v), seed), x))
            for name, p in layer.named_parameters():
                xt = Tensor(x)
                f = _param_fn(layer, name, lambda: _projected(layer.forward(xt), seed))
                key = f"{kind}/{name}"
                worst[key] = max(worst.get(key, 0.0), gradient_check(f, p.data.copy()))
    for kind in FUNCTION_KINDS:
        rng = np.random.default_rng(zlib.crc32(kind.encode()))
        for _ in range(shapes):
            f, x = _function_case(kind, rng)
            worst[kind] = max(worst.get(kind, 0.0), gradient_check(f, x))
    return worst


def check_gradients(shapes: int = 20) -> CheckResult:
    worst = gradient_cases(shapes)
    bad = {k: v for k, v in worst.items() if not v < GRAD_TOL}
    top = max(worst.values())
    if bad:
        return CheckResult("gradients", False, "above 1e-4: " + ", ".join(f"{k}={v:.1e}" for k, v in bad.items()))
    return CheckResult("gradients", True, f"{len(worst)} cases x {shapes} shapes, worst rel err {top:.1e}")


# -- channel -------------------------------------------------------------------

def check_channel(symbols: int = 1_000_000, targets=(0.0, 10.0, 20.0), tol_db: float = 0.1) -> CheckResult:
    z = power_normalize(np.random.default_rng(11).standard_normal(symbols))
    parts, ok = [], True
    for i, target in enumerate(targets):
        got = empirical_snr(z, awgn_transmit(z, ChannelConfig(target, seed=100 + i)))
        ok &= abs(got - target) <= tol_db
        parts.append(f"{target:g} dB -> {got:.3f}")
    clean = awgn_transmit(z, ChannelConfig(math.inf))
    ok &= bool(np.array_equal(clean, z))
    return CheckResult("channel", ok, ", ".join(parts) + f" ({symbols} symbols, inf is identity)")


# -- metrics -------------------------------------------------------------------

def check_metrics() -> CheckResult:
    x = synth_speechlike(5, 1.0).samples
    rng = np.random.default_rng(5)
    est = x + 0.3 * rng.standard_normal(x.size) * np.std(x)
    base = si_sdr(x, est)
    scale = max(abs(si_sdr(x, a * est) - base) for a in (0.5, 2.0, 10.0))
    orth = np.array([1.0, 0.0] * 4)
    ok = scale < 1e-9 and si_sdr(x, x) == 100.0 and si_sdr(orth, np.roll(orth, 1)) == -100.0
    ident = estoi(x, x)
    ok &= abs(ident - 1.0) <= 1e-6 and abs(estoi(x, 3.0 * est) - estoi(x, est)) < 1e-9
    curve = []
    for snr in (-10.0, 0.0, 10.0):
        vals = []
        for s in range(10):
            clean = synth_speechlike(100 + s, 1.0)
            noise = synth_noise(200 + s, 1.0, "white")
            vals.append(estoi(clean.samples, mix_at_snr(clean, noise, snr).samples))
        curve.append(float(np.mean(vals)))
    ok &= curve[0] < curve[1] < curve[2]
    return CheckResult("metrics", bool(ok), f"si-sdr scale drift {scale:.1e} dB, estoi(x,x)={ident:.7f}, "
                       f"estoi vs SNR {[round(v, 3) for v in curve]}")


# -- causality -------------------------------------------------------------------

def _causal_layers(model: Module, prefix: str):
    for name, child in model.children():
        path = f"{prefix}.{name}"
        if isinstance(child, (Conv1d, ConvTranspose1d, CumulativeLayerNorm, Downsample)):
            yield path, child
            if isinstance(child, Downsample):
                continue
        yield from _causal_layers(child, path)


def _layer_io(layer, rng):
    """Random input plus (input steps per output step numerator, denominator)."""
    if isinstance(layer, Downsample):
        c, f = layer.conv.c_in // layer.factor, layer.factor
        return rng.standard_normal((1, c, 12 * f)), f, 1, f
    if isinstance(layer, ConvTranspose1d):
        return rng.standard_normal((1, layer.weight.shape[0], 12)), 1, layer.stride, 1
    if isinstance(layer, CumulativeLayerNorm):
        return rng.standard_normal((1, layer.gain.size, 12)), 1, 1, 1
    return rng.standard_normal((1, layer.c_in, 12)), 1, 1, 1


def layer_causality_failures(models: dict[str, Module], seed: int = 0) -> list[str]:
    """Names of layers whose output before a cut moves when inputs after the cut change."""
    rng = np.random.default_rng(seed)
    failed = []
    for label, model in models.items():
        for path, layer in _causal_layers(model, label):
            x, align, up, down = _layer_io(layer, rng)
            steps = x.shape[2]
            for cut in range(align, steps, align):
                x2 = x.copy()
                x2[:, :, cut:] += rng.standard_normal(x2[:, :, cut:].shape)
                with no_grad():
                    a, b = layer.forward(x).data, layer.forward(x2).data
                keep = cut * up // down
                if not np.array_equal(a[:, :, :keep], b[:, :, :keep]):
                    failed.append(path)
                    break
    return failed


def system_causality_failures(seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    failed = []
    for ms in LATENCIES_MS:
        n = frame_len_for(ms)
        for order in ORDERS:
            system = System(Enhancer(EnhancerConfig(window=n), seed=1), TransNet(TransNetConfig(frame_len=n), seed=2),
                            order)
            ch = ChannelConfig(10.0, seed=4)
            y = 0.1 * rng.standard_normal(5 * n)
            base = batch_forward(system, y, ch)
            for t in rng.integers(0, 5 * n, size=3):
                y2 = y.copy()
                y2[t:] += rng.standard_normal(5 * n - t)
                out = batch_forward(system, y2, ch)
                start = (t // n) * n
                if not np.array_equal(out[:start], base[:start]) or np.array_equal(out[start:], base[start:]):
                    failed.append(f"system[{ms} ms, {order}] at sample {t}")
                    break
    return failed


def models_under_test() -> dict[str, Module]:
    models = {}
    for ms in LATENCIES_MS:
        n = frame_len_for(ms)
        models[f"transnet[{ms}ms]"] = TransNet(TransNetConfig(frame_len=n), seed=ms)
        models[f"enhancer[{ms}ms]"] = Enhancer(EnhancerConfig(window=n), seed=ms)
    return models


def check_causality() -> CheckResult:
    layers = layer_causality_failures(models_under_test())
    systems = system_causality_failures()
    if layers or systems:
        shown = layers[:6] + (["..."] if len(layers) > 6 else [])
        return CheckResult("causality", False, "lookahead in " + ", ".join(shown + systems))
    return CheckResult("causality", True, "every causal layer and every latency/order cascade")


# -- streaming -------------------------------------------------------------------

def check_streaming(configs: int = 10, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = []
    for i in range(configs):
        n = int(rng.choice([48, 80, 144]))
        ratio = float(rng.choice(RATIOS))
        order = str(rng.choice(ORDERS))
        parts = str(rng.choice(["both", "enh", "tn"]))
        snr_w = float(rng.choice([0.0, 10.0, 20.0, math.inf]))
        s = int(rng.integers(1 << 16))
        enh = Enhancer(EnhancerConfig(window=n), seed=s) if parts != "tn" else None
        tn = TransNet(TransNetConfig(frame_len=n, c_last=int(8 * ratio)), seed=s + 1) if parts != "enh" else None
        system = System(enh, tn, order)
        y = 0.1 * rng.standard_normal(n * int(rng.integers(3, 9)))
        ch = ChannelConfig(snr_w, seed=s)
        if not np.array_equal(stream(system, y, ch, i), batch_forward(system, y, ch, i)):
            bad.append(f"n={n} R={ratio:g} {order} {parts} snr_w={snr_w:g}")
    lat = [latency_report(frame_len_for(ms)) for ms in LATENCIES_MS]
    lat_ok = [r.latency_samples for r in lat] == [48, 80, 144] and [r.latency_ms for r in lat] == [3.0, 5.0, 9.0]
    if bad or not lat_ok:
        return CheckResult("streaming", False, "mismatch for " + "; ".join(bad) if bad else "latency arithmetic")
    return CheckResult("streaming", True, f"{configs} random configs bit-exact; latency 48/80/144 samples")


# -- fault injection -------------------------------------------------------------

@contextlib.contextmanager
def injected_fault(name: str | None):
    """Deliberately break a property so the suite can prove it notices."""
    if name is None:
        yield
        return
    if name != "causal-padding":
        raise ValueError(f"unknown fault {name!r}; known: {FAULTS}")
    original = Conv1d.forward

    def lookahead(self, x, state=None):
        # pad on the right instead of the left: output t sees input t + shift
        shift = max(self.receptive, 1)
        xd = x.data if isinstance(x, Tensor) else np.asarray(x)
        moved = np.concatenate([xd[:, :, shift:], np.zeros(xd.shape[:2] + (min(shift, xd.shape[2]),))], axis=2)
        return original(self, moved, state)

    Conv1d.forward = lookahead
    try:
        yield
    finally:
        Conv1d.forward = original


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "gradients": check_gradients,
    "channel": check_channel,
    "metrics": check_metrics,
    "causality": check_causality,
    "streaming": check_streaming,
}


def run_verify(fault: str | None = None, only=None, report: Callable[[str], None] | None = None) -> list[CheckResult]:
    results = []
    with injected_fault(fault):
        for name, fn in CHECKS.items():
            if only and name not in only:
                continue
            start = time.perf_counter()
            try:
                res = fn()
            except Exception as exc:  # a crashing check is a failing check
                res = CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
            res.seconds = time.perf_counter() - start
            results.append(res)
            if report:
                report(res.line())
    return results
