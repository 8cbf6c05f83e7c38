"""Versioned binary checkpoint container.

Layout (little-endian)::

    magic "TMPHCKPT" | u32 version
    u32 c, h, w, k
    str model kind | str loss kind | u32 hidden | u32 blocks
    str schema digest | u32 n_cat, u32 cardinality...
    u32 n_params, then per parameter:
        u32 name length, name (utf-8), u32 rank, u64 extents..., float64 values

Strings are a u32 byte length followed by utf-8 bytes.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .data import FeatureSchema
from .errors import DataError
from .hierarchy import HierarchySpec
from .model import ModelConfig

MAGIC = b"TMPHCKPT"
VERSION = 1


def _w_u32(f, v):
    f.write(struct.pack("<I", int(v)))


def _w_str(f, s: str):
    b = s.encode("utf-8")
    _w_u32(f, len(b))
    f.write(b)


def _r(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise DataError("checkpoint truncated")
    return b


def _r_u32(f) -> int:
    return struct.unpack("<I", _r(f, 4))[0]


def _r_str(f) -> str:
    return _r(f, _r_u32(f)).decode("utf-8")


def dumps(params: dict[str, np.ndarray], cfg: ModelConfig) -> bytes:
    f = io.BytesIO()
    f.write(MAGIC)
    _w_u32(f, VERSION)
    for v in (cfg.spec.c, cfg.spec.h, cfg.spec.w, cfg.spec.k):
        _w_u32(f, v)
    _w_str(f, cfg.kind)
    _w_str(f, cfg.loss)
    _w_u32(f, cfg.hidden)
    _w_u32(f, cfg.blocks)
    _w_str(f, cfg.schema.digest())
    _w_u32(f, len(cfg.schema.cardinalities))
    for r in cfg.schema.cardinalities:
        _w_u32(f, r)
    _w_u32(f, len(params))
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        _w_str(f, name)
        _w_u32(f, arr.ndim)
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(np.ascontiguousarray(arr).tobytes())
    return f.getvalue()


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], ModelConfig]:
    f = io.BytesIO(blob)
    if _r(f, len(MAGIC)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version = _r_u32(f)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    c, h, w, k = (_r_u32(f) for _ in range(4))
    kind, loss = _r_str(f), _r_str(f)
    hidden, blocks = _r_u32(f), _r_u32(f)
    digest = _r_str(f)
    card = tuple(_r_u32(f) for _ in range(_r_u32(f)))
    schema = FeatureSchema(card)
    if schema.digest() != digest:
        raise DataError("checkpoint feature schema hash mismatch")
    cfg = ModelConfig(kind, schema, HierarchySpec(c=c, h=h, w=w, k=k), loss, hidden, blocks)
    params = {}
    for _ in range(_r_u32(f)):
        name = _r_str(f)
        rank = _r_u32(f)
        shape = struct.unpack(f"<{rank}Q", _r(f, 8 * rank))
        n = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(_r(f, 8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if f.read(1):
        raise DataError("trailing bytes after checkpoint payload")
    return params, cfg


def save_checkpoint(path, params: dict[str, np.ndarray], cfg: ModelConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params, cfg))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
