"""Train and evaluate the desk-scale trend matrix, then print the directional checks."""

import argparse
import logging
import sys

from jscclab.trends import run_trends


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/trends")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    checks, _, elapsed = run_trends(args.out, seeds, args.jobs)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  [{c.detail}]")
    print(f"elapsed {elapsed / 60:.1f} min")
    return 0 if all(c.passed for c in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
