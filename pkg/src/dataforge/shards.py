"""Binary training-shard format.

Layout (all integers little-endian):

    header:  magic "MIOF" | version u32 | window u32 | pad_id u32
             | record_count u32 | layout digest (32 bytes, SHA-256)
    table:   record_count x (offset u64, length u64), offsets from file start
    records: crc32 u32 | boundary_count u32 | boundaries i32[n]
             | tokens i32[window] | loss_mask u8[window]

The CRC covers everything in the record after the CRC field itself.
Token ids are plain little-endian 32-bit, so shards are consumable
without this package.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumFailure, InvalidInput
from .packing import PackedBatch
from .vocab import VocabLayout

MAGIC = b"MIOF"
VERSION = 1
_HEADER = struct.Struct("<4sIIII32s")
_TABLE_ENTRY = struct.Struct("<QQ")


@dataclass
class ShardData:
    window: int
    pad_id: int
    layout_digest: bytes
    batches: list[PackedBatch]


def encode_record(batch: PackedBatch) -> bytes:
    bounds = np.asarray(batch.boundaries, dtype="<i4")
    body = (
        struct.pack("<I", len(batch.boundaries))
        + bounds.tobytes()
        + batch.tokens.astype("<i4").tobytes()
        + batch.loss_mask.astype(np.uint8).tobytes()
    )
    return struct.pack("<I", zlib.crc32(body)) + body


def decode_record(buf: bytes, window: int, pad_id: int, offset: int = 0) -> PackedBatch:
    (crc,) = struct.unpack_from("<I", buf, 0)
    body = buf[4:]
    if zlib.crc32(body) != crc:
        raise ChecksumFailure(f"record CRC mismatch at offset {offset}", offset=offset)
    (n_bounds,) = struct.unpack_from("<I", body, 0)
    pos = 4
    bounds = np.frombuffer(body, dtype="<i4", count=n_bounds, offset=pos)
    pos += 4 * n_bounds
    tokens = np.frombuffer(body, dtype="<i4", count=window, offset=pos)
    pos += 4 * window
    mask = np.frombuffer(body, dtype=np.uint8, count=window, offset=pos)
    return PackedBatch(
        tokens=tokens.astype(np.int32),
        boundaries=tuple(int(b) for b in bounds),
        loss_mask=mask.astype(bool),
        pad_id=pad_id,
    )


def write_shard(path: str, batches: list[PackedBatch], layout: VocabLayout) -> None:
    if not batches:
        raise InvalidInput("a shard needs at least one record")
    window = batches[0].window
    for batch in batches:
        if batch.window != window:
            raise InvalidInput("all records in a shard must share the window size")
    records = [encode_record(b) for b in batches]
    offset = _HEADER.size + _TABLE_ENTRY.size * len(records)
    table = b""
    for rec in records:
        table += _TABLE_ENTRY.pack(offset, len(rec))
        offset += len(rec)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(MAGIC, VERSION, window, layout.pad_id, len(records), layout.digest())
        )
        fh.write(table)
        for rec in records:
            fh.write(rec)


def read_shard(path: str, layout: VocabLayout | None = None) -> ShardData:
    """Read a shard, verifying structure and per-record checksums.

    When `layout` is given, its digest must match the one the shard was
    written with.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise InvalidInput(f"{path}: too short for a shard header")
    magic, version, window, pad_id, count, digest = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise InvalidInput(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise InvalidInput(f"{path}: unsupported version {version}")
    if layout is not None and digest != layout.digest():
        raise InvalidInput(f"{path}: layout digest mismatch")
    batches = []
    for i in range(count):
        offset, length = _TABLE_ENTRY.unpack_from(raw, _HEADER.size + _TABLE_ENTRY.size * i)
        if offset + length > len(raw):
            raise InvalidInput(f"{path}: record {i} extends past end of file")
        batches.append(decode_record(raw[offset : offset + length], window, pad_id, offset=offset))
    return ShardData(window=window, pad_id=pad_id, layout_digest=digest, batches=batches)
