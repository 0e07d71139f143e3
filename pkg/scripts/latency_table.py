"""Print algorithmic latency and measured per-frame compute time for each latency setting."""

import argparse

from jscclab.channel import ChannelConfig
from jscclab.models import Enhancer, EnhancerConfig, System, TransNet, TransNetConfig
from jscclab.streaming import latency_report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=300)
    args = ap.parse_args(argv)
    print(f"{'frame':>6} {'latency':>9} {'p50 ms':>8} {'p90 ms':>8} {'p99 ms':>8}  realtime")
    for n in (48, 80, 144):
        system = System(Enhancer(EnhancerConfig(window=n)), TransNet(TransNetConfig(frame_len=n)))
        rep = latency_report(system, frames=args.frames, channel=ChannelConfig(10.0, seed=0))
        print(f"{n:>6} {rep.latency_ms:>6.1f} ms {rep.compute_ms_p50:>8.3f} {rep.compute_ms_p90:>8.3f} "
              f"{rep.compute_ms_p99:>8.3f}  {'yes' if rep.realtime else 'no'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
