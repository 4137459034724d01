"""Binary checkpoint codec.

Layout (little-endian)::

    b"SPNC" | version u16 | count u32 |
    count x ( name_len u16 | name utf-8 | rank u8 | extents u32 * rank |
              values f32 * size | accumulators f32 * size | frozen u8 )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpoint
from .params import ParamStore

MAGIC = b"SPNC"
VERSION = 1
MAX_VALUES = 1 << 31


def save_checkpoint(store: ParamStore) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(store))]
    for name, param in store.params.items():
        raw = name.encode("utf-8")
        shape = param.shape
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(np.ascontiguousarray(param.data, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(store.accum[name], dtype="<f4").tobytes())
        parts.append(struct.pack("<B", 1 if name in store.frozen else 0))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptCheckpoint(f"truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def load_checkpoint(data: bytes) -> ParamStore:
    r = _Reader(bytes(data))
    if bytes(r.take(4)) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported version {version}")
    store = ParamStore(np.float32)
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = bytes(r.take(name_len)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpoint("parameter name is not utf-8") from exc
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        size = 1
        for extent in shape:
            if extent == 0:
                raise CorruptCheckpoint(f"{name}: zero extent")
            size *= extent
            if size > MAX_VALUES:
                raise CorruptCheckpoint(f"{name}: shape {shape} overflows")
        values = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        accum = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        (flag,) = r.unpack("<B")
        if flag not in (0, 1):
            raise CorruptCheckpoint(f"{name}: bad frozen flag {flag}")
        if name in store:
            raise CorruptCheckpoint(f"duplicate parameter {name!r}")
        store.add(name, values.astype(np.float32), accum.astype(np.float32), frozen=bool(flag))
    if r.pos != len(r.buf):
        raise CorruptCheckpoint(f"{len(r.buf) - r.pos} trailing bytes")
    return store


def write_checkpoint(store: ParamStore, path) -> None:
    Path(path).write_bytes(save_checkpoint(store))


def read_checkpoint(path) -> ParamStore:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc
    return load_checkpoint(data)
