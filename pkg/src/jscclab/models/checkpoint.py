"""Binary checkpoint files.

Layout (little-endian)::

    b"JSCCCKPT"  u32 version
    u32 n, n bytes of UTF-8 JSON header {"kind", "config", "metadata"}
    u32 parameter count
    per parameter: u16 name length, name, u8 rank, rank x u32 extents, float64 data
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .convtasnet import Enhancer, EnhancerConfig
from .system import System
from .transnet import TransNet, TransNetConfig

MAGIC = b"JSCCCKPT"
VERSION = 1


def _config_of(model) -> dict:
    if isinstance(model, System):
        return {
            "order": model.order,
            "enhancer": None if model.enhancer is None else dataclasses.asdict(model.enhancer.cfg),
            "transnet": None if model.transnet is None else dataclasses.asdict(model.transnet.cfg),
        }
    return dataclasses.asdict(model.cfg)


def _build(kind: str, config: dict):
    if kind == "transnet":
        return TransNet(TransNetConfig(**config))
    if kind == "enhancer":
        return Enhancer(EnhancerConfig(**config))
    if kind == "system":
        enh = None if config["enhancer"] is None else Enhancer(EnhancerConfig(**config["enhancer"]))
        tn = None if config["transnet"] is None else TransNet(TransNetConfig(**config["transnet"]))
        return System(enh, tn, config["order"])
    raise CheckpointError(f"unknown model kind {kind!r}")


def to_bytes(model, metadata: dict | None = None) -> bytes:
    header = json.dumps({"kind": model.kind, "config": _config_of(model), "metadata": metadata or {}},
                        sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header]
    params = model.named_parameters()
    parts.append(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated while reading {what}")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(data: bytes, source: str = "checkpoint"):
    r = _Reader(data, source)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{source}: bad magic, not a checkpoint file")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"{source}: format version {version}, this build reads version {VERSION}")
    (n,) = r.unpack("<I", "header length")
    try:
        header = json.loads(r.take(n, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from None
    try:
        model = _build(header["kind"], header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{source}: config does not describe a model ({exc})") from None
    (count,) = r.unpack("<I", "parameter count")
    arrays = {}
    for i in range(count):
        (ln,) = r.unpack("<H", f"name of parameter {i}")
        name = r.take(ln, f"name of parameter {i}").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{rank}I", f"extents of {name}")
        size = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(r.take(8 * size, f"data of {name}"), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes")
    model.load_state_dict(arrays)
    model.metadata = header["metadata"]
    return model


def save_checkpoint(model, path, metadata: dict | None = None) -> None:
    if metadata is None:
        metadata = getattr(model, "metadata", None)
    Path(path).write_bytes(to_bytes(model, metadata))


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; its metadata lands in ``model.metadata``."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    return from_bytes(p.read_bytes(), str(p))
