"""Experiment matrix: presets, sweep specs, checkpoint planning, evaluation and CSV output."""

from __future__ import annotations

import configparser
import csv
import functools
import hashlib
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import ChannelConfig
from .errors import ConfigurationError
from .models.checkpoint import load_checkpoint, save_checkpoint
from .models.convtasnet import Enhancer, EnhancerConfig
from .models.system import ORDERS, System, canonical_order
from .models.transnet import LATENCIES_MS, RATIOS, TransNet, TransNetConfig, frame_len_for
from .signal_io import Dataset, DatasetSpec, build_dataset
from .training import TrainConfig, TrainResult, evaluate, train_enhancer_separate, train_joint, train_transnet_separate

log = logging.getLogger("jscclab.experiments")

METHODS = ("separate", "joint", "noisy-baseline", "enhance-only", "transmit-only")
PROTOCOLS = ("separate-enhancer", "separate-transnet", "joint")
SNR_W_CHOICES = (0.0, 10.0, 20.0, math.inf)
DEFAULT_SNR_A_GRID = (-5.0, 0.0, 5.0, 12.0)
SNR_A_LIMITS = (-5.0, 12.0)

CSV_COLUMNS = ("row_type", "method", "order", "latency_ms", "ratio", "snr_w_db", "snr_a_db", "seed",
               "n_items", "si_sdr_mean", "si_sdr_std", "estoi_mean", "estoi_std", "pesq")
ITEM_COLUMNS = ("method", "order", "latency_ms", "ratio", "snr_w_db", "snr_a_db", "seed", "item",
                "si_sdr_db", "estoi")


# -- presets -------------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    """Optimizer budget for the three protocols.

    ``joint_init`` selects where the codec starts in joint training:
    ``random`` or ``separate`` (the separately trained codec).
    """

    enhancer_lr: float
    transnet_lr: float
    joint_lr: float
    enhancer_epochs: int
    transnet_epochs: int
    joint_epochs: int
    joint_init: str = "random"
    patience: int = 12
    batch_size: int = 8

    def __post_init__(self):
        if self.joint_init not in ("random", "separate"):
            raise ConfigurationError(f"joint_init must be 'random' or 'separate', got {self.joint_init!r}")

    def train_config(self, protocol: str, seed: int, snr_w_db: float, **kw) -> TrainConfig:
        channel = ChannelConfig(snr_w_db, seed=seed)
        common = dict(seed=seed, channel=channel, patience=self.patience, batch_size=self.batch_size)
        if protocol == "separate-enhancer":
            base = TrainConfig.enhancer_default(lr=self.enhancer_lr, max_epochs=self.enhancer_epochs, **common)
        elif protocol == "separate-transnet":
            base = TrainConfig.transnet_default(lr=self.transnet_lr, max_epochs=self.transnet_epochs, **common)
        elif protocol == "joint":
            base = TrainConfig.joint_default(lr=self.joint_lr, max_epochs=self.joint_epochs, **common)
        else:
            raise ConfigurationError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
        return replace(base, **{k: v for k, v in kw.items() if v is not None})


PRESETS = {
    # published learning rates, random codec init for the joint run, 200-epoch cap
    "paper": Preset(1e-3, 1e-4, 1e-4, 200, 200, 200, "random"),
    # calibrated for the small synthetic corpus on one CPU core
    "desk": Preset(1e-3, 3e-3, 3e-4, 100, 15, 8, "separate"),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- value parsing -------------------------------------------------------------

def parse_snr(text) -> float:
    s = str(text).strip().lower()
    if s in ("inf", "+inf", "infinity", "∞", "noiseless"):
        return math.inf
    try:
        return float(s)
    except ValueError:
        raise ConfigurationError(f"not an SNR value: {text!r}") from None


def check_ratio(r: float) -> float:
    if r not in RATIOS:
        raise ConfigurationError(f"ratio {r:g} not allowed; choose from {{0.25, 0.5, 1}}")
    return float(r)


def check_latency(ms) -> int:
    if ms not in LATENCIES_MS:
        raise ConfigurationError(f"latency {ms} ms not allowed; choose from {{3, 5, 9}}")
    return int(ms)


def fmt_num(v: float) -> str:
    if isinstance(v, str):
        return v
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{int(v)}" if float(v).is_integer() else repr(float(v))


def _csv_float(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return fmt_num(v) if math.isinf(v) else repr(float(v))


# -- model keys and on-disk cache ----------------------------------------------

@dataclass(frozen=True)
class ModelKey:
    """Identity of one trained checkpoint inside a sweep's cache."""

    protocol: str
    latency_ms: int
    seed: int
    ratio: float = 1.0
    snr_w_db: float = 10.0
    order: str = "enhance-transmit"

    def __post_init__(self):
        # fields that the protocol ignores are normalized so equal models share a file
        if self.protocol == "separate-enhancer":
            object.__setattr__(self, "ratio", 1.0)
            object.__setattr__(self, "snr_w_db", math.inf)
        if self.protocol != "joint":
            object.__setattr__(self, "order", "enhance-transmit")

    def filename(self, tag: str) -> str:
        parts = [self.protocol, f"{self.latency_ms}ms"]
        if self.protocol != "separate-enhancer":
            parts += [f"R{fmt_num(self.ratio)}", f"W{fmt_num(self.snr_w_db)}"]
        if self.protocol == "joint":
            parts.append("TE" if self.order == "transmit-enhance" else "ET")
        parts += [f"s{self.seed}", tag]
        return "_".join(parts) + ".ckpt"

    def dependencies(self, preset: Preset) -> list["ModelKey"]:
        if self.protocol != "joint":
            return []
        deps = [ModelKey("separate-enhancer", self.latency_ms, self.seed)]
        if preset.joint_init == "separate":
            deps.append(ModelKey("separate-transnet", self.latency_ms, self.seed, self.ratio, self.snr_w_db))
        return deps


def transnet_config(latency_ms: int, ratio: float) -> TransNetConfig:
    return TransNetConfig.create(check_ratio(ratio), check_latency(latency_ms))


def enhancer_config(latency_ms: int) -> EnhancerConfig:
    return EnhancerConfig(window=frame_len_for(check_latency(latency_ms)))


def train_protocol(protocol: str, dataset: Dataset, latency_ms: int, seed: int, preset: Preset,
                   ratio: float = 1.0, snr_w_db: float = 10.0, order: str = "enhance-transmit",
                   enhancer: Enhancer | None = None, transnet: TransNet | None = None,
                   **overrides) -> TrainResult:
    """Run one protocol with the preset's budget; ``overrides`` patch the TrainConfig."""
    cfg = preset.train_config(protocol, seed, snr_w_db, **overrides)
    if protocol == "separate-enhancer":
        return train_enhancer_separate(dataset.train, dataset.validation, cfg, enhancer_config(latency_ms))
    if protocol == "separate-transnet":
        return train_transnet_separate(dataset.train, dataset.validation, cfg, transnet_config(latency_ms, ratio))
    if protocol == "joint":
        if enhancer is None:
            raise ConfigurationError("joint training needs a separately trained enhancer")
        if enhancer.cfg.window != frame_len_for(latency_ms):
            raise ConfigurationError(f"enhancer window {enhancer.cfg.window} does not match the "
                                     f"{frame_len_for(latency_ms)}-sample frame of {latency_ms} ms")
        return train_joint(dataset.train, dataset.validation, enhancer, cfg, transnet_config(latency_ms, ratio),
                           order=canonical_order(order), transnet=transnet)
    raise ConfigurationError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


# -- sweep specification -------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    method: str
    order: str
    latency_ms: int
    ratio: float
    snr_w_db: float

    def coords(self) -> dict:
        return {"method": self.method, "order": self.order, "latency_ms": self.latency_ms,
                "ratio": self.ratio, "snr_w_db": self.snr_w_db}


@dataclass(frozen=True)
class SweepSpec:
    snr_a: tuple[float, ...] = DEFAULT_SNR_A_GRID
    snr_w: tuple[float, ...] = (10.0,)
    ratios: tuple[float, ...] = (1.0,)
    latencies: tuple[int, ...] = (3,)
    orders: tuple[str, ...] = ("enhance-transmit",)
    methods: tuple[str, ...] = ("separate", "joint")
    seeds: tuple[int, ...] = (0,)
    output: str = "sweep-out"
    preset: str = "desk"
    # None trains each cell at its own SNR_w; a number fixes the training channel
    train_snr_w: float | None = None
    train_on_demand: bool = True
    data: DatasetSpec = field(default_factory=DatasetSpec)
    overrides: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        for a in self.snr_a:
            if not SNR_A_LIMITS[0] <= a <= SNR_A_LIMITS[1]:
                raise ConfigurationError(f"SNR_a {a:g} dB outside [-5, 12] dB")
        for w in self.snr_w:
            if w not in SNR_W_CHOICES:
                raise ConfigurationError(f"SNR_w {fmt_num(w)} dB not allowed; choose from {{0, 10, 20, inf}}")
        for r in self.ratios:
            check_ratio(r)
        for ms in self.latencies:
            check_latency(ms)
        for o in self.orders:
            if o not in ORDERS:
                raise ConfigurationError(f"order {o!r} must be canonical, one of {ORDERS}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}; choose from {METHODS}")
        if not (self.snr_a and self.snr_w and self.ratios and self.latencies and self.orders
                and self.methods and self.seeds):
            raise ConfigurationError("every axis needs at least one value")
        get_preset(self.preset)

    def cells(self) -> list[Cell]:
        """Unique cells in a canonical order, independent of how the axes were listed."""
        grid = itertools.product(sorted(set(self.snr_w)), sorted(set(self.ratios)), sorted(set(self.latencies)),
                                 sorted(set(self.orders), key=ORDERS.index), sorted(set(self.methods), key=METHODS.index))
        return [Cell(m, o, ms, r, w) for w, r, ms, o, m in grid]

    def snr_a_grid(self) -> list[float]:
        return sorted(set(self.snr_a))

    def seed_list(self) -> list[int]:
        return sorted(set(self.seeds))

    def training_snr(self, cell: Cell) -> float:
        return cell.snr_w_db if self.train_snr_w is None else self.train_snr_w

    def dataset_spec(self, seed: int) -> DatasetSpec:
        return replace(self.data, seed=seed)

    def cache_tag(self, seed: int) -> str:
        blob = json.dumps({"preset": asdict(get_preset(self.preset)), "data": asdict(self.dataset_spec(seed)),
                           "overrides": list(self.overrides)}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:10]


_AXES = {
    "snr_a": ("snr_a", lambda s: float(s)),
    "snr_w": ("snr_w", parse_snr),
    "ratio": ("ratios", float),
    "latency": ("latencies", lambda s: int(float(s))),
    "latency_ms": ("latencies", lambda s: int(float(s))),
    "order": ("orders", canonical_order),
    "method": ("methods", str.strip),
    "seeds": ("seeds", int),
    "seed": ("seeds", int),
}
_OVERRIDE_KEYS = ("enhancer_lr", "transnet_lr", "joint_lr", "enhancer_epochs", "transnet_epochs", "joint_epochs")


def parse_sweep_spec(text: str, base_dir: str | os.PathLike | None = None) -> SweepSpec:
    """Parse ``key = value`` text. Axis values are comma separated; ``#`` starts a comment.

    Sections are optional: ``[grid]`` for axes, ``[run]`` for seeds/output/preset,
    ``[data]`` for corpus fields, ``[training]`` for preset overrides.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    first = next((ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")), "")
    body = text if first.startswith("[") else "[grid]\n" + text
    try:
        parser.read_string(body)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse sweep spec: {exc}") from None
    kw: dict = {}
    data_kw: dict = {}
    overrides: dict = {}
    known_data = {f.name: f.type for f in fields(DatasetSpec)}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = key.strip().lower()
            if section == "data" or key.startswith("data."):
                name = key.removeprefix("data.")
                if name not in known_data:
                    raise ConfigurationError(f"unknown data field {name!r}")
                data_kw[name] = _data_value(name, raw, base_dir)
            elif key in _AXES:
                attr, conv = _AXES[key]
                try:
                    kw[attr] = tuple(conv(v) for v in raw.split(",") if v.strip())
                except ValueError:
                    raise ConfigurationError(f"bad value list for {key}: {raw!r}") from None
            elif key == "output":
                out = Path(raw.strip())
                kw["output"] = str(out if out.is_absolute() or base_dir is None else Path(base_dir) / out)
            elif key == "preset":
                kw["preset"] = raw.strip()
            elif key == "train_snr_w":
                kw["train_snr_w"] = None if raw.strip().lower() == "match" else parse_snr(raw)
            elif key == "train_on_demand":
                kw["train_on_demand"] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif key in _OVERRIDE_KEYS:
                overrides[key] = float(raw) if key.endswith("_lr") else int(raw)
            else:
                raise ConfigurationError(f"unknown sweep spec key {key!r} in [{section}]")
    if data_kw:
        kw["data"] = DatasetSpec(**data_kw)
    if overrides:
        kw["overrides"] = tuple(sorted(overrides.items()))
    return SweepSpec(**kw)


def _data_value(name: str, raw: str, base_dir):
    raw = raw.strip()
    if name in ("clean_dir", "noise_dir"):
        p = Path(raw)
        return str(p if p.is_absolute() or base_dir is None else Path(base_dir) / p)
    if name in ("snr_a_range", "split"):
        return tuple(float(v) for v in raw.split(","))
    if name == "noise_kinds":
        return tuple(v.strip() for v in raw.split(","))
    if name in ("count", "test_count", "seed", "sample_rate"):
        return int(raw)
    return float(raw)


def load_sweep_spec(path: str | os.PathLike) -> SweepSpec:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"sweep spec {p} not found")
    return parse_sweep_spec(p.read_text(encoding="utf-8"), base_dir=p.parent)


# -- running a sweep -------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _dataset(spec: DatasetSpec) -> Dataset:
    return build_dataset(spec)


def _effective_preset(spec: SweepSpec) -> Preset:
    return replace(get_preset(spec.preset), **dict(spec.overrides))


def _models_for(spec: SweepSpec, cell: Cell, seed: int) -> list[ModelKey]:
    train_w = spec.training_snr(cell)
    enh = ModelKey("separate-enhancer", cell.latency_ms, seed)
    tn = ModelKey("separate-transnet", cell.latency_ms, seed, cell.ratio, train_w)
    if cell.method == "noisy-baseline":
        return []
    if cell.method == "enhance-only":
        return [enh]
    if cell.method == "transmit-only":
        return [tn]
    if cell.method == "separate":
        return [enh, tn]
    return [ModelKey("joint", cell.latency_ms, seed, cell.ratio, train_w, cell.order)]


def _ckpt_path(spec: SweepSpec, key: ModelKey) -> Path:
    return Path(spec.output) / "checkpoints" / key.filename(spec.cache_tag(key.seed))


def _train_key(spec: SweepSpec, key: ModelKey) -> str:
    """Train one checkpoint whose dependencies already exist on disk."""
    preset = _effective_preset(spec)
    path = _ckpt_path(spec, key)
    deps = {d.protocol: load_checkpoint(_ckpt_path(spec, d)) for d in key.dependencies(preset)}
    data = _dataset(spec.dataset_spec(key.seed))
    log_path = path.with_suffix(".log")
    log.info("training %s", path.name)
    res = train_protocol(key.protocol, data, key.latency_ms, key.seed, preset, key.ratio, key.snr_w_db,
                         key.order, enhancer=deps.get("separate-enhancer"),
                         transnet=deps.get("separate-transnet"), log_path=str(log_path))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    save_checkpoint(res.model, tmp, res.metadata)
    os.replace(tmp, path)
    return str(path)


def _map(fn, args: list, jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args)))


def _system_for(spec: SweepSpec, cell: Cell, seed: int) -> System:
    models = {k.protocol: load_checkpoint(_ckpt_path(spec, k)) for k in _models_for(spec, cell, seed)}
    if "joint" in models:
        return models["joint"]
    return System(models.get("separate-enhancer"), models.get("separate-transnet"), cell.order)


def _evaluate_cell(spec: SweepSpec, cell: Cell, seed: int) -> list[dict]:
    """Per-item scores for one (cell, seed) over the SNR_a grid."""
    system = _system_for(spec, cell, seed)
    data = _dataset(spec.dataset_spec(seed))
    channel = None if cell.method in ("noisy-baseline", "enhance-only") else ChannelConfig(cell.snr_w_db, seed=seed)
    items = []
    for snr_a in spec.snr_a_grid():
        for i, rep in enumerate(evaluate(system, data.test, channel, snr_a_db=snr_a)):
            items.append({**cell.coords(), "snr_a_db": snr_a, "seed": seed, "item": i,
                          "si_sdr_db": rep.si_sdr_db, "estoi": rep.estoi})
    return items


@dataclass
class SweepResult:
    records: list[dict]
    items: list[dict]
    missing: list[str]
    skipped: list[tuple[Cell, int]]


def plan_models(spec: SweepSpec) -> list[list[ModelKey]]:
    """Checkpoints the sweep needs, grouped into stages that can train in parallel."""
    preset = _effective_preset(spec)
    stage1: dict[ModelKey, None] = {}
    stage2: dict[ModelKey, None] = {}
    for seed in spec.seed_list():
        for cell in spec.cells():
            for key in _models_for(spec, cell, seed):
                if key.protocol == "joint":
                    stage2[key] = None
                    for d in key.dependencies(preset):
                        stage1[d] = None
                else:
                    stage1[key] = None
    return [list(stage1), list(stage2)]


def run_sweep(spec: SweepSpec, jobs: int = 1) -> SweepResult:
    missing: list[str] = []
    for stage in plan_models(spec):
        todo = [k for k in stage if not _ckpt_path(spec, k).is_file()]
        if not spec.train_on_demand:
            missing += [str(_ckpt_path(spec, k)) for k in todo]
            continue
        ready = [k for k in todo if all(_ckpt_path(spec, d).is_file() for d in k.dependencies(_effective_preset(spec)))]
        _map(_train_key, [(spec, k) for k in ready], jobs)
    runnable, skipped = [], []
    for seed in spec.seed_list():
        for cell in spec.cells():
            if all(_ckpt_path(spec, k).is_file() for k in _models_for(spec, cell, seed)):
                runnable.append((spec, cell, seed))
            else:
                skipped.append((cell, seed))
    for cell, seed in skipped:
        for k in _models_for(spec, cell, seed):
            p = str(_ckpt_path(spec, k))
            if not Path(p).is_file() and p not in missing:
                missing.append(p)
    per_cell = _map(_evaluate_cell, runnable, jobs)
    items = [row for rows in per_cell for row in rows]
    return SweepResult(aggregate(spec, items), items, missing, skipped)


def _stats(rows: list[dict]) -> dict:
    s = np.array([r["si_sdr_db"] for r in rows], dtype=float)
    e = np.array([r["estoi"] for r in rows if r["estoi"] is not None], dtype=float)
    return {"n_items": len(rows), "si_sdr_mean": float(np.mean(s)), "si_sdr_std": float(np.std(s)),
            "estoi_mean": float(np.mean(e)) if e.size else None,
            "estoi_std": float(np.std(e)) if e.size else None, "pesq": None}


def aggregate(spec: SweepSpec, items: list[dict]) -> list[dict]:
    """Cell rows in spec order followed by seed-averaged and grand-mean rows."""
    groups: dict[tuple, list[dict]] = {}
    for row in items:
        key = (row["method"], row["order"], row["latency_ms"], row["ratio"], row["snr_w_db"])
        groups.setdefault(key + (row["snr_a_db"], row["seed"]), []).append(row)
    cells, over_seeds, overall = [], [], []
    for cell in spec.cells():
        base = (cell.method, cell.order, cell.latency_ms, cell.ratio, cell.snr_w_db)
        everything = []
        for snr_a in spec.snr_a_grid():
            across = []
            for seed in spec.seed_list():
                rows = groups.get(base + (snr_a, seed))
                if rows:
                    cells.append({"row_type": "cell", **cell.coords(), "snr_a_db": snr_a, "seed": seed,
                                  **_stats(rows)})
                    across += rows
            if across:
                over_seeds.append({"row_type": "mean-over-seeds", **cell.coords(), "snr_a_db": snr_a,
                                   "seed": "all", **_stats(across)})
                everything += across
        if everything:
            overall.append({"row_type": "mean-over-snr_a-and-seeds", **cell.coords(), "snr_a_db": "all",
                            "seed": "all", **_stats(everything)})
    return cells + over_seeds + overall


def _row_text(row: dict, columns) -> list[str]:
    out = []
    for c in columns:
        v = row.get(c)
        if c in ("latency_ms", "seed", "n_items", "item", "method", "order", "row_type"):
            out.append("" if v is None else str(v))
        else:
            out.append(_csv_float(v))
    return out


def records_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    buf.write("# columns: " + ",".join(CSV_COLUMNS) + " | si_sdr in dB, estoi in [0,1], "
              "snr in dB (inf = noiseless), pesq reserved and left empty; row_type 'cell' is one "
              "(cell, seed) over the test items, other row types are aggregates\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(_row_text(r, CSV_COLUMNS))
    return buf.getvalue()


def items_csv(items: list[dict]) -> str:
    buf = io.StringIO()
    buf.write("# columns: " + ",".join(ITEM_COLUMNS) + " | one row per test item\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ITEM_COLUMNS)
    for r in items:
        w.writerow(_row_text(r, ITEM_COLUMNS))
    return buf.getvalue()


def read_records(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_results(spec: SweepSpec, result: SweepResult) -> tuple[Path, Path]:
    out = Path(spec.output)
    out.mkdir(parents=True, exist_ok=True)
    rec, itm = out / "records.csv", out / "items.csv"
    rec.write_text(records_csv(result.records), encoding="utf-8")
    itm.write_text(items_csv(result.items), encoding="utf-8")
    return rec, itm


def summary_table(records: list[dict]) -> str:
    """Grand means per configuration laid out as SI-SDR / ESTOI / PESQ columns."""
    rows = [r for r in records if r["row_type"] == "mean-over-snr_a-and-seeds"]
    label = lambda r: (f"{r['method']} {'enh->trans' if r['order'] == 'enhance-transmit' else 'trans->enh'} "
                       f"latency {r['latency_ms']} ms R={fmt_num(r['ratio'])} SNR_w={fmt_num(r['snr_w_db'])}")
    width = max([len(label(r)) for r in rows] + [7])
    lines = [f"{'Methods':<{width}}  {'SI-SDR (dB)':>11}  {'ESTOI':>6}  {'PESQ':>5}"]
    for r in rows:
        est = "-" if r["estoi_mean"] is None else f"{r['estoi_mean']:.2f}"
        lines.append(f"{label(r):<{width}}  {r['si_sdr_mean']:>11.2f}  {est:>6}  {'-':>5}")
    return "\n".join(lines)
