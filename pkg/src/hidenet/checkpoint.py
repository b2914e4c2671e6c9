"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"HIDENET\\0"
    version    u16
    header     4 x u32   C, H, W, L
    color      u8        0 = gray, 1 = yuv
    meta_len   u32, then meta_len bytes of UTF-8 JSON (sorted keys)
    n_tensors  u32, then per tensor:
        name_len u16, name (UTF-8), ndim u8, ndim x u32 dims,
        payload  prod(dims) x float32
    digest     32 bytes  SHA-256 of everything above

Tensors are written in sorted name order, so saving the same model twice
produces identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import RunningStats, Tensor
from .networks import ArchHeader, ModelParams, init_parameters

MAGIC = b"HIDENET\x00"
VERSION = 1
COLOR_MODES = ("gray", "yuv")


class CheckpointError(Exception):
    pass


class UnsupportedFormatError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    header: ArchHeader
    color: str
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, mp: ModelParams, metadata: dict | None = None) -> Checkpoint:
        color = "gray" if mp.header.channels == 1 else "yuv"
        tensors = {k: np.asarray(v, dtype=np.float32).copy() for k, v in mp.state_arrays().items()}
        return cls(mp.header, color, tensors, dict(metadata or {}))

    def to_model(self) -> ModelParams:
        """Rebuild parameters; every tensor the architecture needs must be present."""
        mp = init_parameters(self.header, seed=0)
        expected = set(mp.state_arrays())
        missing = expected - set(self.tensors)
        extra = set(self.tensors) - expected
        if missing or extra:
            raise CorruptCheckpointError(f"tensor table mismatch: missing {sorted(missing)[:3]}, "
                                         f"unexpected {sorted(extra)[:3]}")
        for name, p in mp.params.items():
            arr = self.tensors[name]
            if arr.shape != p.shape:
                raise CorruptCheckpointError(f"{name}: shape {arr.shape} != expected {p.shape}")
            mp.params[name] = Tensor(arr.copy(), requires_grad=True)
        for name, st in mp.stats.items():
            mp.stats[name] = RunningStats(self.tensors[name + ".running_mean"].copy(),
                                          self.tensors[name + ".running_var"].copy())
        return mp


def dumps(ckpt: Checkpoint) -> bytes:
    if ckpt.color not in COLOR_MODES:
        raise ValueError(f"color mode must be one of {COLOR_MODES}")
    h = ckpt.header
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H4IB", VERSION, h.channels, h.height, h.width, h.message_length,
                          COLOR_MODES.index(ckpt.color)))
    meta = json.dumps(ckpt.metadata, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        encoded = name.encode()
        buf.write(struct.pack("<HB", len(encoded), arr.ndim))
        buf.write(encoded)
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> Checkpoint:
    if data[:len(MAGIC)] != MAGIC:
        raise UnsupportedFormatError("not a hidenet checkpoint (bad magic)")
    if len(data) < len(MAGIC) + 2:
        raise CorruptCheckpointError("checkpoint is truncated")
    (version,) = struct.unpack_from("<H", data, len(MAGIC))
    if version != VERSION:
        raise UnsupportedFormatError(f"checkpoint version {version} is not supported (expected {VERSION})")
    if len(data) < 32:
        raise CorruptCheckpointError("checkpoint is truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("checkpoint digest mismatch")
    r = _Reader(body)
    r.take(len(MAGIC))
    _, c, hgt, wid, length, color = r.unpack("<H4IB")
    if color >= len(COLOR_MODES):
        raise CorruptCheckpointError(f"unknown color mode {color}")
    (meta_len,) = r.unpack("<I")
    try:
        metadata = json.loads(r.take(meta_len).decode())
    except ValueError as exc:
        raise CorruptCheckpointError(f"bad metadata: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len, ndim = r.unpack("<HB")
        name = r.take(name_len).decode()
        dims = r.unpack(f"<{ndim}I")
        size = int(np.prod(dims)) if dims else 1
        if name in tensors:
            raise CorruptCheckpointError(f"duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(body):
        raise CorruptCheckpointError("trailing bytes after tensor table")
    try:
        header = ArchHeader(c, hgt, wid, length)
    except ValueError as exc:
        raise CorruptCheckpointError(f"bad architecture header: {exc}") from exc
    return Checkpoint(header, COLOR_MODES[color], tensors, metadata)


def save_checkpoint(path, ckpt: Checkpoint | ModelParams, metadata: dict | None = None) -> None:
    if isinstance(ckpt, ModelParams):
        ckpt = Checkpoint.from_model(ckpt, metadata)
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_bytes())


def load_model(path) -> ModelParams:
    return load_checkpoint(path).to_model()
