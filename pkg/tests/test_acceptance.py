"""Acceptance criteria, one printed pass/fail line each.

The trend block (criterion 7) trains the full desk-scale matrix for three
seeds and takes roughly 25 minutes on one core. Set JSCC_TREND_OUT to keep
its checkpoints and CSVs somewhere persistent.
"""

import math
import os
import re
import time

import numpy as np
import pytest

from jscclab.autodiff import no_grad
from jscclab.channel import ChannelConfig, awgn_transmit, empirical_snr, power_normalize
from jscclab.cli import main
from jscclab.metrics import estoi, si_sdr
from jscclab.models import Enhancer, System, TransNet, TransNetConfig
from jscclab.signal_io import DatasetSpec, Signal, build_dataset, mix_at_snr, synth_noise, synth_speechlike, write_wav
from jscclab.streaming import latency_report
from jscclab.training import TrainConfig, overfit
from jscclab.trends import run_trends
from jscclab.verify import (
    check_streaming,
    gradient_cases,
    layer_causality_failures,
    models_under_test,
    system_causality_failures,
)

GRAD_TOL = 1e-4
GRAD_SECONDS = 60.0
CHANNEL_TOL_DB = 0.1
SCALE_TOL_DB = 1e-9
ESTOI_TOL = 1e-6
TREND_MINUTES = 45.0
LATENCY_ALLOWANCE_DB = 0.3
OVERFIT_DB = 20.0
OVERFIT_STEPS = 2000


def test_1_gradient_correctness(acceptance):
    start = time.perf_counter()
    worst = gradient_cases(shapes=20)
    elapsed = time.perf_counter() - start
    top_case = max(worst, key=worst.get)
    ok = all(v < GRAD_TOL for v in worst.values()) and elapsed < GRAD_SECONDS
    assert {"si_sdr_loss", "mse_loss"} <= set(worst)
    assert acceptance("1 gradient correctness", ok,
                      f"{len(worst)} layer/loss cases x 20 shapes, worst {worst[top_case]:.1e} ({top_case}) "
                      f"< {GRAD_TOL:g}, {elapsed:.1f}s < {GRAD_SECONDS:g}s")


def test_2_channel_fidelity(acceptance):
    z = power_normalize(np.random.default_rng(0).standard_normal(1_000_000))
    got = {w: empirical_snr(z, awgn_transmit(z, ChannelConfig(w, seed=int(w) + 1))) for w in (0.0, 10.0, 20.0)}
    ok = all(abs(v - w) <= CHANNEL_TOL_DB for w, v in got.items())
    assert acceptance("2 channel fidelity", ok,
                      ", ".join(f"{w:g} dB -> {v:.3f} dB" for w, v in got.items()) + f" (tol {CHANNEL_TOL_DB} dB, 1e6 symbols)")


def test_3_si_sdr_properties(acceptance):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(4000)
    est = x + 0.4 * rng.standard_normal(4000)
    drift = max(abs(si_sdr(x, a * est) - si_sdr(x, est)) for a in (0.5, 2.0, 10.0))
    ident = si_sdr(x, x)
    a = np.zeros(4000)
    a[::2] = 1.0
    orth = si_sdr(a, np.roll(a, 1))
    ok = drift <= SCALE_TOL_DB and ident == 100.0 and orth == -100.0
    assert acceptance("3 SI-SDR properties", ok,
                      f"scale drift {drift:.1e} dB <= {SCALE_TOL_DB:g}, identity {ident:g} dB, orthogonal {orth:g} dB")


def test_4_estoi_properties(acceptance):
    x = synth_speechlike(1, 1.5).samples
    y = mix_at_snr(synth_speechlike(1, 1.5), synth_noise(2, 1.5, "modulated"), 0.0).samples
    ident = estoi(x, x)
    scale = abs(estoi(x, 7.0 * y) - estoi(x, y))
    curve = []
    for snr in (-10.0, 0.0, 10.0):
        vals = [estoi(synth_speechlike(10 + s, 1.5).samples,
                      mix_at_snr(synth_speechlike(10 + s, 1.5), synth_noise(50 + s, 1.5, "white"), snr).samples)
                for s in range(10)]
        curve.append(float(np.mean(vals)))
    ok = abs(ident - 1.0) <= ESTOI_TOL and scale < 1e-9 and curve[0] < curve[1] < curve[2]
    assert acceptance("4 ESTOI properties", ok,
                      f"estoi(x,x)={ident:.8f}, scale drift {scale:.1e}, "
                      f"mean over 10 seeds at -10/0/10 dB = {', '.join(f'{c:.3f}' for c in curve)}")


def test_5_latency_and_causality(acceptance):
    samples = [latency_report(n).latency_samples for n in (48, 80, 144)]
    ms = [latency_report(n).latency_ms for n in (48, 80, 144)]
    layers = layer_causality_failures(models_under_test())
    systems = system_causality_failures()
    streaming = check_streaming(configs=10)
    ok = samples == [48, 80, 144] and ms == [3.0, 5.0, 9.0] and not layers and not systems and streaming.passed
    assert acceptance("5 latency/causality contract", ok,
                      f"latency {samples} samples = {ms} ms; future perturbation bit-exact "
                      f"({len(layers) + len(systems)} failures); {streaming.detail}")


def test_6_bandwidth_arithmetic(acceptance):
    bad = []
    for ratio, c_last in ((0.25, 2), (0.5, 4), (1.0, 8)):
        for n in (48, 80, 144):
            cfg = TransNetConfig(frame_len=n, c_last=c_last)
            with no_grad():
                z = TransNet(cfg).encode(np.random.default_rng(n).standard_normal(4 * n) * 0.1)
            if cfg.downsampling != 8 or cfg.symbols_per_frame != ratio * n or z.size != 4 * ratio * n:
                bad.append((ratio, n))
    assert acceptance("6 bandwidth arithmetic", not bad,
                      f"symbols per frame = R*n for R in {{0.25, 0.5, 1}} x n in {{48, 80, 144}}; mismatches {bad}")


@pytest.fixture(scope="module")
def trends(tmp_path_factory):
    out = os.environ.get("JSCC_TREND_OUT") or str(tmp_path_factory.mktemp("trends"))
    checks, _, elapsed = run_trends(out, seeds=(0, 1, 2))
    return {c.name[:2]: c for c in checks}, elapsed


@pytest.mark.slow
@pytest.mark.parametrize("key", ["7a", "7b", "7c", "7d"])
def test_7_trend_reproduction(trends, key, acceptance):
    checks, elapsed = trends
    c = checks[key]
    assert acceptance(f"7{key[1]} trend", c.passed, f"{c.name}: {c.detail}")


@pytest.mark.slow
def test_7_trend_budget(trends, acceptance):
    _, elapsed = trends
    assert acceptance("7 trend budget", elapsed / 60 < TREND_MINUTES,
                      f"3 seeds trained and evaluated in {elapsed / 60:.1f} min < {TREND_MINUTES:g} min")


@pytest.fixture(scope="module")
def overfit_items():
    return build_dataset(DatasetSpec(count=10, duration_s=0.18, test_count=0, seed=0)).train[:4]


@pytest.mark.slow
@pytest.mark.parametrize("protocol", ["separate-enhancer", "separate-transnet", "joint"])
def test_8_overfit_capacity(protocol, overfit_items, acceptance):
    noiseless = ChannelConfig(math.inf)
    if protocol == "separate-enhancer":
        run = (System(enhancer=Enhancer(seed=0)), TrainConfig.enhancer_default(lr=1e-3, channel=noiseless), "noisy")
    elif protocol == "separate-transnet":
        run = (System(transnet=TransNet(seed=0)), TrainConfig.transnet_default(lr=3e-3, channel=noiseless), "clean")
    else:
        run = (System(Enhancer(seed=0), TransNet(seed=1)), TrainConfig.joint_default(lr=1e-3, channel=noiseless),
               "noisy")
    best, steps = overfit(run[0], overfit_items, run[1], source=run[2], target_db=OVERFIT_DB, max_steps=OVERFIT_STEPS)
    assert acceptance(f"8 overfit {protocol}", best >= OVERFIT_DB,
                      f"{best:.2f} dB after {steps} steps (target {OVERFIT_DB:g} dB within {OVERFIT_STEPS})")


def _run_twice(root, capsys, make_argv, outputs):
    """Run a CLI command in two fresh directories; return (exit, output files, stdout) per run."""
    runs = []
    for k in range(2):
        d = root / f"run{k}"
        d.mkdir(parents=True)
        code = main(make_argv(d))
        text = capsys.readouterr().out.replace(str(d), "<dir>")
        # wall-clock fields are the only nondeterministic output
        text = re.sub(r"elapsed=\S+", "elapsed=<t>", text)
        text = "\n".join(ln for ln in text.splitlines() if not ln.startswith("timing:"))
        runs.append((code, {name: (d / name).read_bytes() for name in outputs}, text))
    return runs


SWEEP_SPEC = """snr_a = 0
method = separate
[run]
seeds = 2
output = res
[data]
count = 10
duration_s = 0.09
test_count = 1
test_duration_s = 0.9
[training]
enhancer_epochs = 1
transnet_epochs = 1
"""


@pytest.mark.slow
def test_9_reproducibility(tmp_path, capsys, acceptance):
    tiny = ["--items", "10", "--duration", "0.09", "--max-epochs", "2", "--seed", "5"]
    results = {"train": _run_twice(tmp_path / "train", capsys, lambda d: [
        "train", "--method", "separate-transnet", *tiny, "--out", str(d / "tn.ckpt")], ["tn.ckpt"])}
    ckpt = tmp_path / "train" / "run0" / "tn.ckpt"
    wav = tmp_path / "in.wav"
    write_wav(wav, Signal(0.3 * synth_speechlike(3, 0.5).samples))
    results["transmit"] = _run_twice(tmp_path / "transmit", capsys, lambda d: [
        "transmit", "--in", str(wav), "--out", str(d / "o.wav"), "--transnet", str(ckpt), "--snr-w", "0",
        "--seed", "9"], ["o.wav"])

    def sweep_argv(d):
        (d / "mini.spec").write_text(SWEEP_SPEC)
        return ["sweep", "--spec", str(d / "mini.spec")]

    results["sweep"] = _run_twice(tmp_path / "sweep", capsys, sweep_argv, ["res/records.csv", "res/items.csv"])
    results["verify"] = _run_twice(tmp_path / "verify", capsys, lambda d: ["verify"], [])
    same = {k: v[0] == v[1] for k, v in results.items()}
    codes = {k: v[0][0] for k, v in results.items()}
    ok = all(same.values()) and all(c == 0 for c in codes.values())
    assert acceptance("9 reproducibility", ok,
                      ", ".join(f"{k}: {'identical' if same[k] else 'DIFFERENT'} (exit {codes[k]})" for k in results)
                      + "; verify exits 0 on a fresh build")
