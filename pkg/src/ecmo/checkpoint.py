"""Binary named-parameter archive.

Layout (all integers little-endian)::

    b"ECMOCKPT"  u32 version  u32 config_len  config (UTF-8 JSON, sorted keys)
    u32 n_params
    n_params x { u16 name_len  name  u8 rank  u32 dims[rank]  f64 data[prod(dims)] }

Data is row-major. Writing is deterministic, so equal contents give equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"ECMOCKPT"
VERSION = 1


def dumps(config: Mapping, params: Mapping[str, np.ndarray]) -> bytes:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(buf, source)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{source}: bad magic, not an ECMOCKPT file")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: corrupt config block ({exc})") from None
    (count,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="strict")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64)
        params[name] = data.reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - r.pos} trailing bytes")
    return config, params


def save(path, config: Mapping, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(config, params))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes(), str(path))
