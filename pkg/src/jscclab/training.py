"""Optimization loop, early stopping, the separate and joint protocols, and evaluation."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff.tensor import Tensor, no_grad
from .channel import ChannelConfig, utterance_rng
from .errors import ConfigurationError, TrainingDiverged
from .metrics import MetricReport, mse_loss, report, si_sdr_loss
from .models.convtasnet import Enhancer, EnhancerConfig
from .models.layers import Module
from .models.system import System
from .models.transnet import TransNet, TransNetConfig
from .signal_io import Example

log = logging.getLogger("jscclab.training")

OBJECTIVES = ("si_sdr", "mse")
# validation noise streams live far away from the per-step training streams
_VALIDATION_STREAM = 1 << 40


# -- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float, **kw) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], lr=lr, **kw)


def adam_step(params, grads, state: AdamState, names=None) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params`` (Tensors or arrays)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params, grads and moment buffers must align")
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            name = names[i] if names else f"#{i}"
            raise TrainingDiverged(f"non-finite gradient in parameter {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(state.m[i])
        if g.shape != state.m[i].shape:
            raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {state.m[i].shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        upd = state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
        if isinstance(p, Tensor):
            p.data = p.data - upd
        else:
            p -= upd
    return state


def clip_global_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads:
            if g is not None:
                g *= scale
    return total


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    patience: int = 12
    max_epochs: int = 200
    seed: int = 0
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    objective: str = "si_sdr"
    clip_norm: float = 5.0
    max_steps: int | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}")
        if self.lr <= 0 or self.batch_size <= 0 or self.patience <= 0 or self.max_epochs <= 0:
            raise ConfigurationError("lr, batch_size, patience and max_epochs must be positive")

    @classmethod
    def enhancer_default(cls, **kw) -> "TrainConfig":
        return cls(**{"lr": 1e-3, "objective": "si_sdr", **kw})

    @classmethod
    def transnet_default(cls, **kw) -> "TrainConfig":
        return cls(**{"lr": 1e-4, "objective": "mse", **kw})

    @classmethod
    def joint_default(cls, **kw) -> "TrainConfig":
        return cls(**{"lr": 1e-4, "objective": "si_sdr", **kw})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    elapsed_s: float

    def line(self) -> str:
        return (f"epoch={self.epoch} train_loss={self.train_loss:.6f} val_loss={self.val_loss:.6f} "
                f"lr={self.lr:g} elapsed={self.elapsed_s:.2f}")


@dataclass
class TrainResult:
    model: Module
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    steps: int
    metadata: dict


class _EpochLog:
    def __init__(self, path: str | None):
        self.fh = None
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", encoding="utf-8")

    def write(self, rec: EpochRecord) -> None:
        log.info(rec.line())
        if self.fh:
            self.fh.write(rec.line() + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def _stack(items, attr: str) -> np.ndarray:
    return np.stack([getattr(e, attr) for e in items])


def fit(module: Module, batch_loss: Callable[[list, int], Tensor], train_items: list,
        validate: Callable[[], float], cfg: TrainConfig, params: list | None = None,
        initial_epoch: int = 1) -> TrainResult:
    """Seeded-shuffle epochs with patience-based early stopping.

    ``batch_loss(items, step)`` builds the graph for one minibatch. The
    parameters at the best validation epoch are restored before returning.
    """
    named = [(n, p) for n, p in module.named_parameters() if params is None or any(p is q for q in params)]
    names = [n for n, _ in named]
    plist = [p for _, p in named]
    state = AdamState.for_params(plist, cfg.lr)
    shuffle = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    best_val, best_state, best_epoch = math.inf, module.state_dict(), initial_epoch - 1
    history: list[EpochRecord] = []
    bad, step = 0, 0
    out = _EpochLog(cfg.log_path)
    start = time.perf_counter()
    try:
        for epoch in range(initial_epoch, initial_epoch + cfg.max_epochs):
            order = shuffle.permutation(len(train_items))
            losses = []
            for i in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = [train_items[j] for j in order[i: i + cfg.batch_size]]
                loss = batch_loss(batch, step)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"loss became {value} at step {step}", last_good=best_state)
                module.zero_grad()
                loss.backward()
                grads = [p.grad for p in plist]
                try:
                    clip_global_norm(grads, cfg.clip_norm)
                    adam_step(plist, grads, state, names)
                except TrainingDiverged as exc:
                    raise TrainingDiverged(f"{exc} at step {step}", last_good=best_state) from None
                losses.append(value)
                step += 1
            val = validate()
            if not math.isfinite(val):
                raise TrainingDiverged(f"validation loss became {val} in epoch {epoch}", last_good=best_state)
            rec = EpochRecord(epoch, float(np.mean(losses)) if losses else math.nan, val, cfg.lr,
                              time.perf_counter() - start)
            history.append(rec)
            out.write(rec)
            if val < best_val:
                best_val, best_state, best_epoch, bad = val, module.state_dict(), epoch, 0
            else:
                bad += 1
            if bad >= cfg.patience or (cfg.max_steps is not None and step >= cfg.max_steps):
                break
    finally:
        out.close()
    module.load_state_dict(best_state)
    meta = {"epochs": len(history), "best_epoch": best_epoch, "best_val_loss": best_val,
            "seed": cfg.seed, "steps": step, "lr": cfg.lr}
    return TrainResult(module, history, best_epoch, best_val, step, meta)


# -- helpers shared by the protocols --------------------------------------------

def _channel_for_training(cfg: TrainConfig) -> ChannelConfig | None:
    return None if cfg.channel.noiseless else cfg.channel


def _validation_rngs(channel: ChannelConfig | None, count: int):
    if channel is None:
        return None
    return [utterance_rng(channel.seed, _VALIDATION_STREAM + i) for i in range(count)]


def _objective(kind: str):
    return si_sdr_loss if kind == "si_sdr" else mse_loss


def _system_loss(system: System, cfg: TrainConfig, source: str):
    loss_fn = _objective(cfg.objective)
    channel = _channel_for_training(cfg)

    def batch_loss(items, step):
        out = system.forward(_stack(items, source), channel, call_index=step)
        return loss_fn(_stack(items, "clean"), out)

    return batch_loss


def _system_validation(system: System, items: list, cfg: TrainConfig, source: str):
    loss_fn = _objective(cfg.objective)
    channel = _channel_for_training(cfg)
    y, x = _stack(items, source), _stack(items, "clean")

    def validate():
        with no_grad():
            return loss_fn(x, system.forward(y, channel, rngs=_validation_rngs(channel, len(items)))).item()

    return validate


def _metadata(result: TrainResult, protocol: str, cfg: TrainConfig, **extra) -> dict:
    meta = dict(result.metadata)
    meta.update(protocol=protocol, objective=cfg.objective, snr_w_db=cfg.channel.snr_w_db, **extra)
    return meta


# -- protocols -----------------------------------------------------------------

def train_enhancer_separate(train: list[Example], validation: list[Example], cfg: TrainConfig | None = None,
                            model_cfg: EnhancerConfig = EnhancerConfig()) -> TrainResult:
    """Noisy-to-clean enhancement trained on negative SI-SDR."""
    cfg = cfg or TrainConfig.enhancer_default()
    enh = Enhancer(model_cfg, seed=cfg.seed)
    system = System(enhancer=enh)
    res = fit(enh, _system_loss(system, cfg, "noisy"), train,
              _system_validation(system, validation, cfg, "noisy"), cfg)
    res.metadata = _metadata(res, "separate-enhancer", cfg)
    enh.metadata = res.metadata
    return res


def train_transnet_separate(train: list[Example], validation: list[Example], cfg: TrainConfig | None = None,
                            model_cfg: TransNetConfig = TransNetConfig()) -> TrainResult:
    """Clean-speech autoencoding through the noisy channel, MSE objective by default."""
    cfg = cfg or TrainConfig.transnet_default()
    tn = TransNet(model_cfg, seed=cfg.seed)
    system = System(transnet=tn)
    res = fit(tn, _system_loss(system, cfg, "clean"), train,
              _system_validation(system, validation, cfg, "clean"), cfg)
    res.metadata = _metadata(res, "separate-transnet", cfg)
    tn.metadata = res.metadata
    return res


def train_joint(train: list[Example], validation: list[Example], enhancer: Enhancer,
                cfg: TrainConfig | None = None, model_cfg: TransNetConfig | None = None,
                order: str = "enhance-transmit", transnet: TransNet | None = None,
                freeze_enhancer: bool = False) -> TrainResult:
    """End-to-end training of the cascade on negative SI-SDR.

    The enhancer starts from ``enhancer`` (copied, the argument is left
    untouched); the codec starts from ``transnet`` if given, else from a
    fresh random initialization.
    """
    cfg = cfg or TrainConfig.joint_default()
    enh = copy.deepcopy(enhancer)
    if transnet is not None:
        tn = copy.deepcopy(transnet)
    else:
        tn = TransNet(model_cfg or TransNetConfig(frame_len=enh.cfg.window), seed=cfg.seed)
    system = System(enh, tn, order)
    params = tn.parameters() if freeze_enhancer else None
    res = fit(system, _system_loss(system, cfg, "noisy"), train,
              _system_validation(system, validation, cfg, "noisy"), cfg, params=params)
    res.metadata = _metadata(res, "joint", cfg, order=system.order, freeze_enhancer=freeze_enhancer)
    system.metadata = res.metadata
    return res


def overfit(system: System, items: list[Example], cfg: TrainConfig, source: str = "noisy",
            target_db: float = 20.0, max_steps: int = 2000, check_every: int = 10) -> tuple[float, int]:
    """Full-batch training on a handful of items until SI-SDR reaches ``target_db``.

    Returns (best mean SI-SDR in dB on the items, steps taken).
    """
    loss_fn = _objective(cfg.objective)
    channel = _channel_for_training(cfg)
    y, x = _stack(items, source), _stack(items, "clean")
    named = system.named_parameters()
    plist = [p for _, p in named]
    state = AdamState.for_params(plist, cfg.lr)
    best = -math.inf
    for step in range(1, max_steps + 1):
        loss = loss_fn(x, system.forward(y, channel, call_index=step))
        system.zero_grad()
        loss.backward()
        grads = [p.grad for p in plist]
        clip_global_norm(grads, cfg.clip_norm)
        adam_step(plist, grads, state, [n for n, _ in named])
        if step % check_every == 0 or step == max_steps:
            with no_grad():
                score = -si_sdr_loss(x, system.forward(y, channel, rngs=_validation_rngs(channel, len(items)))).item()
            best = max(best, score)
            if best >= target_db:
                return best, step
    return best, max_steps


# -- evaluation ----------------------------------------------------------------

def evaluate(system: System, items: list[Example], channel: ChannelConfig | None = None,
             snr_a_db: float | None = None) -> list[MetricReport]:
    """Per-utterance metrics; utterance ``i`` uses channel noise stream ``(seed, i)``."""
    from .streaming import batch_forward

    reports = []
    for i, ex in enumerate(items):
        if snr_a_db is not None:
            ex = ex.at_snr(snr_a_db)
        out = batch_forward(system, ex.noisy, channel, utterance_index=i)
        reports.append(report(ex.clean, out))
    return reports


def mean_metric(reports: list[MetricReport], name: str) -> float:
    vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
    return float(np.mean(vals)) if vals else math.nan


def with_channel(cfg: TrainConfig, snr_w_db: float) -> TrainConfig:
    return replace(cfg, channel=replace(cfg.channel, snr_w_db=snr_w_db))
