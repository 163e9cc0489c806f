"""Coded-file container.

Layout (integers little-endian)::

    magic   4s   b"CAMC"
    version u8
    height  u32  original image height
    width   u32  original image width
    config  u16  architecture id of the checkpoint
    z_len   u32, z payload (range-coded side information)
    y_len   u32, y payload (range-coded latent)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"CAMC"
VERSION = 1
_HEAD = struct.Struct("<4sBIIH")
_LEN = struct.Struct("<I")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class CodedFile:
    height: int
    width: int
    config_id: int
    z_payload: bytes
    y_payload: bytes
    version: int = VERSION

    def to_bytes(self) -> bytes:
        return b"".join([
            _HEAD.pack(MAGIC, self.version, self.height, self.width, self.config_id),
            _LEN.pack(len(self.z_payload)), self.z_payload,
            _LEN.pack(len(self.y_payload)), self.y_payload,
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodedFile":
        if len(data) < _HEAD.size:
            raise FormatError("file too short for header")
        magic, version, h, w, cid = _HEAD.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        pos = _HEAD.size
        payloads = []
        for label in ("z", "y"):
            if pos + _LEN.size > len(data):
                raise FormatError(f"truncated before {label} payload length")
            (n,) = _LEN.unpack_from(data, pos)
            pos += _LEN.size
            if pos + n > len(data):
                raise FormatError(f"{label} payload truncated ({len(data) - pos} of {n} bytes)")
            payloads.append(data[pos: pos + n])
            pos += n
        if pos != len(data):
            raise FormatError(f"{len(data) - pos} unexpected trailing bytes")
        if h == 0 or w == 0:
            raise FormatError("zero image extent in header")
        return cls(height=h, width=w, config_id=cid, z_payload=payloads[0], y_payload=payloads[1], version=version)
