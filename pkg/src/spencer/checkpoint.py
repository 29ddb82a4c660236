"""Binary checkpoint format for encoder models.

Layout (all integers little-endian)::

    b"SPNC"
    u32 version
    u32 V, u32 d, u32 h, u32 L, f64 dropout, u8 has_score_head
    per parameter, in declaration order:
        u32 rank, u32 dims[rank], f64 data[prod(dims)]
    u32 crc32 of every byte between the magic and the checksum
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .encoder import Block, EncoderModel, ScoreHead
from .errors import ChecksumError, FormatError, TruncatedError, VersionError

MAGIC = b"SPNC"
VERSION = 1


def write_tensor(buf: bytearray, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype="<f8")  # keeps rank 0, unlike ascontiguousarray
    buf += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    buf += arr.tobytes(order="C")


class Reader:
    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"need {n} bytes at offset {self.pos}, only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def tensor(self) -> np.ndarray:
        (rank,) = self.unpack("<I")
        dims = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)


def open_payload(raw: bytes, magic: bytes, version: int) -> Reader:
    """Check the magic and version; return a reader positioned after the version."""
    if len(raw) < len(magic) or raw[: len(magic)] != magic:
        raise FormatError(f"bad magic bytes: expected {magic!r}")
    r = Reader(raw[len(magic):])
    (found,) = r.unpack("<I")
    if found != version:
        raise VersionError(f"unsupported format version {found} (expected {version})")
    return r


def close_payload(r: Reader) -> None:
    """Consume and verify the trailing CRC32; the reader must be at its position."""
    end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} unexpected trailing bytes")
    if zlib.crc32(r.buf[:end]) != crc:
        raise ChecksumError("checksum mismatch: file is corrupt")


def dumps(model: EncoderModel) -> bytes:
    payload = bytearray(struct.pack("<I", VERSION))
    payload += _header(model)
    for arr in model.parameters().values():
        write_tensor(payload, arr)
    return MAGIC + bytes(payload) + struct.pack("<I", zlib.crc32(payload))


def _header(model: EncoderModel) -> bytes:
    return struct.pack("<IIIIdB", model.vocab_size, model.dim, model.hidden, model.num_layers,
                       model.dropout, int(model.head is not None))


def _read_header(r: Reader) -> dict:
    V, d, h, L, p, head = r.unpack("<IIIIdB")
    return {"V": V, "d": d, "h": h, "L": L, "p": p, "has_score_head": bool(head)}


def read_header(raw: bytes) -> dict:
    return _read_header(open_payload(raw, MAGIC, VERSION))


def loads(raw: bytes) -> EncoderModel:
    r = open_payload(raw, MAGIC, VERSION)
    hdr = _read_header(r)
    emb = r.tensor()
    blocks = tuple(Block(r.tensor(), r.tensor(), r.tensor(), r.tensor()) for _ in range(hdr["L"]))
    head = ScoreHead(r.tensor(), r.tensor()) if hdr["has_score_head"] else None
    close_payload(r)
    return EncoderModel(emb, blocks, hdr["p"], head)


def save(model: EncoderModel, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(model))


def load(path) -> EncoderModel:
    return loads(Path(path).read_bytes())
