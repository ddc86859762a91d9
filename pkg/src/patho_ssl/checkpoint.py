"""Binary checkpoint files.

Layout, all little-endian:

    magic  4 bytes  "SSCK"
    u32    version (1)
    u32    tile_size
    u32    number of conv widths (3)
    u32[]  conv widths
    u32    embedding dimension
    8 parameter tensors, each: u32 rank, u32[rank] dims, float32 data
    u8     training-state flag
    if set:
        u64    optimizer step counter
        u32    batch size (pairs per batch)
        u64    training seed
        8 first-moment tensors, then 8 second-moment tensors

The trailer carries batch size and seed so a resumed run can verify its
schedule lines up with the original one.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .adam import AdamState
from .errors import DataFormatError
from .net import NetParams

MAGIC = b"SSCK"
VERSION = 1


@dataclass
class Checkpoint:
    params: NetParams
    tile_size: int
    adam: AdamState | None = None
    batch_size: int | None = None
    train_seed: int | None = None

    @property
    def step(self) -> int:
        return self.adam.t if self.adam is not None else 0


def _pack_tensor(buf: bytearray, t: np.ndarray):
    buf += struct.pack("<I", t.ndim)
    buf += struct.pack(f"<{t.ndim}I", *t.shape)
    buf += np.ascontiguousarray(t, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise DataFormatError(f"{self.path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def tensor(self) -> np.ndarray:
        (rank,) = self.take("<I")
        if rank > 8:
            raise DataFormatError(f"{self.path}: implausible tensor rank {rank}")
        dims = self.take(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        nbytes = count * 4
        if self.pos + nbytes > len(self.data):
            raise DataFormatError(f"{self.path}: truncated tensor data")
        arr = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.pos)
        self.pos += nbytes
        return arr.reshape(dims).astype(np.float32)


def save_checkpoint(cp: Checkpoint, path: str):
    buf = bytearray()
    buf += MAGIC
    widths = cp.params.widths
    buf += struct.pack("<II", VERSION, cp.tile_size)
    buf += struct.pack(f"<I{len(widths)}I", len(widths), *widths)
    buf += struct.pack("<I", cp.params.embed_dim)
    for t in cp.params.tensors():
        _pack_tensor(buf, t)
    if cp.adam is None:
        buf += struct.pack("<B", 0)
    else:
        buf += struct.pack("<B", 1)
        buf += struct.pack("<QIQ", cp.adam.t, cp.batch_size or 0, cp.train_seed or 0)
        for t in cp.adam.m:
            _pack_tensor(buf, t)
        for t in cp.adam.v:
            _pack_tensor(buf, t)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(bytes(buf))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
    r = _Reader(data, path)
    r.pos = 4
    version, tile_size = r.take("<II")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    (nw,) = r.take("<I")
    if nw != 3:
        raise DataFormatError(f"{path}: expected 3 conv widths, got {nw}")
    widths = r.take(f"<{nw}I")
    (embed_dim,) = r.take("<I")
    params = NetParams.from_tensors([r.tensor() for _ in range(8)])
    if params.widths != widths or params.embed_dim != embed_dim:
        raise DataFormatError(f"{path}: header does not match tensor shapes")

    (has_state,) = r.take("<B")
    adam = None
    batch_size = None
    train_seed = None
    if has_state:
        t, batch_size, train_seed = r.take("<QIQ")
        m = [r.tensor() for _ in range(8)]
        v = [r.tensor() for _ in range(8)]
        for a, p in zip(m + v, params.tensors() * 2):
            if a.shape != p.shape:
                raise DataFormatError(f"{path}: optimizer moment shape mismatch")
        adam = AdamState(m=m, v=v, t=int(t))
    if r.pos != len(data):
        raise DataFormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Checkpoint(
        params=params,
        tile_size=int(tile_size),
        adam=adam,
        batch_size=int(batch_size) if has_state else None,
        train_seed=int(train_seed) if has_state else None,
    )
