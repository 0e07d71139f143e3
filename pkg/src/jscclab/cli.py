"""``jscclab`` command line: train, sweep, transmit, verify.

Exit codes: 0 success, 1 failure (failed checks, skipped sweep cells, bad
files), 2 usage or configuration error, 3 training diverged.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .channel import ChannelConfig
from .errors import ConfigurationError, JSCCError, TrainingDiverged
from .experiments import (
    PRESETS,
    PROTOCOLS,
    check_latency,
    check_ratio,
    get_preset,
    load_sweep_spec,
    parse_snr,
    run_sweep,
    summary_table,
    train_protocol,
    write_results,
)
from .metrics import report
from .models.checkpoint import load_checkpoint, save_checkpoint
from .models.system import System, canonical_order
from .models.transnet import frame_len_for
from .signal_io import DatasetSpec, Signal, build_dataset, read_wav, write_wav
from .streaming import pad_to_frames, stream

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("jscclab.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _StdoutHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stdout`` is at emit time."""

    @property
    def stream(self):
        return sys.stdout

    @stream.setter
    def stream(self, _):
        pass


def _setup_logging() -> None:
    level = os.environ.get("JSCC_LOG_LEVEL", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"JSCC_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    root = logging.getLogger("jscclab")
    root.setLevel(LOG_LEVELS[level])
    if not any(isinstance(h, _StdoutHandler) for h in root.handlers):
        handler = _StdoutHandler()
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        root.propagate = False


def _ratio(text: str) -> float:
    try:
        return check_ratio(float(text))
    except (ValueError, ConfigurationError):
        raise argparse.ArgumentTypeError(f"invalid ratio {text!r}; allowed ratios are {{0.25, 0.5, 1}}") from None


def _latency(text: str) -> int:
    try:
        return check_latency(int(text))
    except (ValueError, ConfigurationError):
        raise argparse.ArgumentTypeError(f"invalid latency {text!r}; allowed values are {{3, 5, 9}} ms") from None


def _snr(text: str) -> float:
    try:
        return parse_snr(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _order(text: str) -> str:
    try:
        return canonical_order(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="jscclab", description="Joint speech enhancement and analog transmission toolkit.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one protocol and write a checkpoint")
    t.add_argument("--method", required=True, choices=PROTOCOLS)
    t.add_argument("--latency-ms", type=_latency, default=3)
    t.add_argument("--ratio", type=_ratio, default=1.0)
    t.add_argument("--snr-w", type=_snr, default=10.0, help="training channel SNR in dB, 'inf' for noiseless")
    t.add_argument("--order", type=_order, default="enhance-transmit")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--data", default=None, help="directory with clean/ and noise/ WAV folders; synthetic if omitted")
    t.add_argument("--items", type=int, default=None, help="utterances in the train+validation pool")
    t.add_argument("--duration", type=float, default=None, help="seconds per training utterance")
    t.add_argument("--out", required=True, help="checkpoint path; the epoch log goes next to it")
    t.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--max-epochs", type=int, default=None)
    t.add_argument("--enhancer", default=None, help="joint: starting enhancer checkpoint")
    t.add_argument("--transnet", default=None, help="joint: starting codec checkpoint")

    s = sub.add_parser("sweep", help="run a sweep spec and write CSV results")
    s.add_argument("--spec", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--no-train", action="store_true", help="never train; skip cells whose checkpoints are missing")

    x = sub.add_parser("transmit", help="stream a WAV through enhancement and the noisy link")
    x.add_argument("--in", dest="inp", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--enhancer", default=None)
    x.add_argument("--transnet", default=None)
    x.add_argument("--snr-w", type=_snr, default=10.0)
    x.add_argument("--order", type=_order, default="enhance-transmit")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--reference", default=None, help="clean WAV; prints the metric report when given")

    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--only", default=None, help="comma separated subset of checks")
    v.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    return ap


# -- commands --------------------------------------------------------------------

def _dataset_for(args):
    kw = {"seed": args.seed}
    if args.items is not None:
        kw["count"] = args.items
    if args.duration is not None:
        kw["duration_s"] = args.duration
    if args.data:
        root = Path(args.data)
        if not (root / "clean").is_dir() or not (root / "noise").is_dir():
            raise UsageError(f"--data {root} must contain clean/ and noise/ subdirectories")
        kw.update(clean_dir=str(root / "clean"), noise_dir=str(root / "noise"))
    return build_dataset(DatasetSpec(test_count=0, **kw))


def _load_part(path: str | None, kind: str):
    if path is None:
        return None
    model = load_checkpoint(path)
    if isinstance(model, System):
        model = model.enhancer if kind == "enhancer" else model.transnet
    if model is None or getattr(model, "kind", None) != kind:
        raise ConfigurationError(f"{path} does not hold a {kind}")
    return model


def cmd_train(args) -> int:
    if args.method != "joint" and (args.enhancer or args.transnet):
        raise UsageError("--enhancer/--transnet only apply to --method joint")
    if args.method == "separate-enhancer" and args.ratio != 1.0:
        raise UsageError("--ratio does not apply to the enhancer")
    preset = get_preset(args.preset)
    frame = frame_len_for(args.latency_ms)
    if args.duration is not None and round(args.duration * 16000) % frame:
        raise UsageError(f"--duration {args.duration:g} s is not a whole number of {frame}-sample frames")
    data = _dataset_for(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = str(out.with_suffix(".log"))
    over = {"lr": args.lr, "max_epochs": args.max_epochs}
    enhancer = _load_part(args.enhancer, "enhancer")
    transnet = _load_part(args.transnet, "transnet")
    if args.method == "joint":
        if enhancer is None:
            log.info("no --enhancer given; training the separate enhancer first")
            enhancer = train_protocol("separate-enhancer", data, args.latency_ms, args.seed, preset,
                                      log_path=str(out.with_suffix(".enhancer.log"))).model
        if transnet is None and preset.joint_init == "separate":
            log.info("no --transnet given; training the separate codec first")
            transnet = train_protocol("separate-transnet", data, args.latency_ms, args.seed, preset, args.ratio,
                                      args.snr_w, log_path=str(out.with_suffix(".transnet.log"))).model
    res = train_protocol(args.method, data, args.latency_ms, args.seed, preset, args.ratio, args.snr_w,
                         args.order, enhancer=enhancer, transnet=transnet, log_path=log_path, **over)
    meta = dict(res.metadata, latency_ms=args.latency_ms, ratio=args.ratio, preset=args.preset,
                data=data.fingerprint())
    save_checkpoint(res.model, out, meta)
    print(f"wrote {out} (best epoch {res.best_epoch}, val loss {res.best_val_loss:.6f}); log {log_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    spec = load_sweep_spec(args.spec)
    if args.no_train:
        from dataclasses import replace

        spec = replace(spec, train_on_demand=False)
    result = run_sweep(spec, jobs=args.jobs)
    rec, items = write_results(spec, result)
    print(summary_table(result.records))
    print(f"records: {rec}\nitems:   {items}")
    if result.missing:
        print("missing checkpoints (cells skipped):", file=sys.stderr)
        for p in result.missing:
            print(f"  {p}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_transmit(args) -> int:
    if args.enhancer is None and args.transnet is None:
        raise UsageError("give --enhancer and/or --transnet")
    enhancer = _load_part(args.enhancer, "enhancer")
    transnet = _load_part(args.transnet, "transnet")
    system = System(enhancer, transnet, args.order)
    sig = read_wav(args.inp)
    padded, n = pad_to_frames(sig.samples, system.frame_len)
    channel = None if transnet is None else ChannelConfig(args.snr_w, seed=args.seed)
    out = stream(system, padded, channel, utterance_index=0)[:n]
    write_wav(args.out, Signal(out, sig.sample_rate, kind="reconstructed"))
    print(f"wrote {args.out}: {n} samples, frame {system.frame_len}, snr_w {args.snr_w:g} dB")
    if args.reference:
        ref = read_wav(args.reference).samples
        if ref.size != n:
            raise ConfigurationError(f"reference has {ref.size} samples, input has {n}")
        rep = report(ref, read_wav(args.out).samples)
        for k, v in rep.as_dict().items():
            print(f"{k}: {'n/a' if v is None else f'{v:.4f}'}")
        for k, err in rep.errors.items():
            print(f"{k} unavailable: {err}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import CHECKS, FAULTS, run_verify

    only = None if args.only is None else [c.strip() for c in args.only.split(",")]
    if only and set(only) - set(CHECKS):
        raise UsageError(f"unknown checks {sorted(set(only) - set(CHECKS))}; known {list(CHECKS)}")
    if args.inject_fault and args.inject_fault not in FAULTS:
        raise UsageError(f"unknown fault {args.inject_fault!r}; known {FAULTS}")
    results = run_verify(args.inject_fault, only, report=print)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    print("timing: " + ", ".join(f"{r.name} {r.seconds:.1f}s" for r in results))
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "transmit": cmd_transmit, "verify": cmd_verify}


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except JSCCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
