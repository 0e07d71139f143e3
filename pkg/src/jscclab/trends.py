"""Desk-scale trend suite: joint vs separate, channel SNR, bandwidth and latency directions."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .experiments import SweepSpec, run_sweep, write_results

# every model is trained at the operating point and evaluated across channel conditions
TRAIN_SNR_W = 10.0
LATENCY_ALLOWANCE_DB = 0.3


def trend_specs(output: str, seeds=(0, 1, 2)) -> dict[str, SweepSpec]:
    base = SweepSpec(seeds=tuple(seeds), output=output, preset="desk", train_snr_w=TRAIN_SNR_W,
                     methods=("separate", "joint"))
    return {
        "channel": replace(base, snr_w=(0.0, 10.0, math.inf),
                           methods=("noisy-baseline", "enhance-only", "transmit-only", "separate", "joint")),
        "bandwidth": replace(base, ratios=(0.25,)),
        "latency": replace(base, latencies=(9,)),
    }


@dataclass
class TrendCheck:
    name: str
    passed: bool
    detail: str


def _mean(items, **coords) -> float:
    vals = [r["si_sdr_db"] for r in items if all(r[k] == v for k, v in coords.items())]
    if not vals:
        raise KeyError(f"no items for {coords}")
    return float(np.mean(vals))


def check_trends(items: list[dict], seeds) -> list[TrendCheck]:
    """Directional checks over per-item rows of the three trend sweeps."""
    op = dict(ratio=1.0, latency_ms=3, order="enhance-transmit")
    out = []

    per_seed = [(s, _mean(items, method="joint", snr_w_db=10.0, seed=s, **op),
                 _mean(items, method="separate", snr_w_db=10.0, seed=s, **op)) for s in seeds]
    out.append(TrendCheck("7a joint >= separate per seed (R=1, SNR_w=10 dB, 3 ms)",
                          all(j >= sep for _, j, sep in per_seed),
                          "; ".join(f"seed {s}: joint {j:.2f} vs separate {sep:.2f} dB" for s, j, sep in per_seed)))

    curve = [(w, _mean(items, method="joint", snr_w_db=w, **op)) for w in (0.0, 10.0, math.inf)]
    out.append(TrendCheck("7b SI-SDR non-decreasing in SNR_w over {0, 10, inf} dB (joint)",
                          all(a[1] <= b[1] for a, b in zip(curve, curve[1:])),
                          ", ".join(f"{w:g} dB: {v:.2f}" for w, v in curve)))

    full = _mean(items, method="joint", snr_w_db=10.0, **op)
    quarter = _mean(items, method="joint", snr_w_db=10.0, ratio=0.25, latency_ms=3, order="enhance-transmit")
    out.append(TrendCheck("7c SI-SDR at R=1 >= at R=0.25 (joint, seed-averaged)", full >= quarter,
                          f"R=1 {full:.2f} dB vs R=0.25 {quarter:.2f} dB"))

    nine = _mean(items, method="joint", snr_w_db=10.0, ratio=1.0, latency_ms=9, order="enhance-transmit")
    out.append(TrendCheck(f"7d SI-SDR at 9 ms >= at 3 ms - {LATENCY_ALLOWANCE_DB} dB (joint, seed-averaged)",
                          nine >= full - LATENCY_ALLOWANCE_DB, f"9 ms {nine:.2f} dB vs 3 ms {full:.2f} dB"))
    return out


def run_trends(output: str, seeds=(0, 1, 2), jobs: int = 1) -> tuple[list[TrendCheck], list[dict], float]:
    start = time.perf_counter()
    items = []
    for spec in trend_specs(output, seeds).values():
        res = run_sweep(spec, jobs=jobs)
        if res.missing:
            raise RuntimeError(f"trend sweep could not produce {res.missing}")
        write_results(replace(spec, output=f"{output}/{_name(spec)}"), res)
        items += res.items
    return check_trends(items, seeds), items, time.perf_counter() - start


def _name(spec: SweepSpec) -> str:
    if len(spec.snr_w) > 1:
        return "channel"
    return "bandwidth" if spec.ratios != (1.0,) else "latency"
