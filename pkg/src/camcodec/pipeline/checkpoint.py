"""Binary checkpoint: config, named float32 parameters and per-block cluster centers.

Layout (little-endian)::

    magic b"CAMK", version u8
    config text: u32 length + UTF-8 ``key=value`` lines
    u32 parameter count, then per parameter:
        u16 name length + name, u8 ndim, ndim x u32 extents, float32 data
    u32 cluster-model count, then per CAM block:
        u16 name length + name, u32 K, u32 d, u32 iters, f64 ema_decay, float32 centers

Entries are written in sorted name order, so save -> load -> save is byte-identical.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ..clustering import ClusterModel
from ..transforms import CompressionModel, ModelConfig

MAGIC = b"CAMK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_name(buf, name: str):
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read(buf, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _read_name(buf) -> str:
    (n,) = _read(buf, "<H")
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw.decode()


def _read_f32(buf, shape) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = buf.read(4 * count)
    if len(raw) != 4 * count:
        raise CheckpointError("truncated checkpoint")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def to_bytes(model: CompressionModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", VERSION))
    cfg = model.config.to_text().encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    params = model.named_parameters()
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        _write_name(buf, name)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    blocks = model.cam_blocks()
    buf.write(struct.pack("<I", len(blocks)))
    for name in sorted(blocks):
        cm = blocks[name].cluster
        if cm is None:
            raise CheckpointError(f"CAM block {name} has no cluster centers")
        _write_name(buf, name)
        buf.write(struct.pack("<IIId", cm.k, cm.dim, cm.iters, cm.ema_decay))
        buf.write(np.ascontiguousarray(cm.centers, dtype="<f4").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> CompressionModel:
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = _read(buf, "<B")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = _read(buf, "<I")
    config = ModelConfig.from_text(buf.read(n).decode())
    model = CompressionModel(config, seed=0, dtype=np.float32, init_clusters=False)
    params = model.named_parameters()
    (count,) = _read(buf, "<I")
    seen = set()
    for _ in range(count):
        name = _read_name(buf)
        (ndim,) = _read(buf, "<B")
        shape = _read(buf, f"<{ndim}I") if ndim else ()
        arr = _read_f32(buf, shape)
        if name in seen:
            raise CheckpointError(f"duplicate parameter {name}")
        seen.add(name)
        if name not in params:
            raise CheckpointError(f"unknown parameter {name}")
        if params[name].shape != arr.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} does not match {params[name].shape}")
        params[name].data = arr
    if seen != set(params):
        raise CheckpointError(f"missing parameters: {sorted(set(params) - seen)[:5]}")
    blocks = model.cam_blocks()
    (count,) = _read(buf, "<I")
    for _ in range(count):
        name = _read_name(buf)
        k, d, iters, decay = _read(buf, "<IIId")
        if name not in blocks:
            raise CheckpointError(f"unknown CAM block {name}")
        blocks[name].cluster = ClusterModel(centers=_read_f32(buf, (k, d)), ema_decay=decay, iters=iters)
    if buf.read(1):
        raise CheckpointError("trailing bytes in checkpoint")
    return model


def save(model: CompressionModel, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path: str | Path) -> CompressionModel:
    return from_bytes(Path(path).read_bytes())
