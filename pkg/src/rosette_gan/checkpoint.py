"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ARGN"                       magic
    u32                           format version
    u32 + UTF-8 bytes             "key=value" lines: TrainConfig fields, then
                                  "state.*" entries (counters, rng state)
    u32                           tensor count
    per tensor:
        u16 + bytes               name
        u8                        rank
        u32 * rank                dims
        float32 * prod(dims)      payload
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import BadMagicError, CheckpointError, TruncatedCheckpointError, UnsupportedVersionError

MAGIC = b"ARGN"
VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    tensors: dict[str, np.ndarray]
    rng_state: dict | None = None
    epoch: int = 0
    step: int = 0
    extra: dict[str, str] = field(default_factory=dict)
    version: int = VERSION


def _encode_kv(kv: dict[str, str]) -> bytes:
    lines = []
    for k, v in kv.items():
        if "=" in k or "\n" in k or "\n" in v:
            raise CheckpointError(f"cannot encode config entry {k!r}")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def save_checkpoint(c: Checkpoint, path) -> Path:
    path = Path(path)
    kv = c.config.to_kv()
    kv["state.epoch"] = str(c.epoch)
    kv["state.step"] = str(c.step)
    kv["state.rng"] = json.dumps(c.rng_state, separators=(",", ":"))
    for k, v in c.extra.items():
        kv[f"state.extra.{k}"] = v
    block = _encode_kv(kv)

    parts = [MAGIC, struct.pack("<II", c.version, len(block)), block, struct.pack("<I", len(c.tensors))]
    for name, arr in c.tensors.items():
        arr = np.asarray(arr)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if len(buf) < len(MAGIC) or r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (block_len,) = r.unpack("<I")
    try:
        text = r.take(block_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: config block is not UTF-8") from exc
    kv = dict(line.split("=", 1) for line in text.split("\n") if line)

    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * n)
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes after tensor table")

    state = {k: kv.pop(k) for k in [k for k in kv if k.startswith("state.")]}
    extra = {k[len("state.extra."):]: v for k, v in state.items() if k.startswith("state.extra.")}
    rng_raw = state.get("state.rng", "null")
    return Checkpoint(
        config=TrainConfig.from_kv(kv),
        tensors=tensors,
        rng_state=json.loads(rng_raw),
        epoch=int(state.get("state.epoch", 0)),
        step=int(state.get("state.step", 0)),
        extra=extra,
        version=version,
    )
