"""On-disk format of the parallel segment manager.

Data directory ``<table>/table.psegd/`` holds:

``seg.<g>``
    8-byte header (magic ``PSG1`` + u32 segment id), then raw
    concatenated little-endian cell payloads. Offsets live only in the
    index and are relative to the payload area (byte 8).

``index``
    magic ``PSGIDX1``, u32 record count, the records serialized in
    declaration order (column_id u32, row_begin u64, row_count u64,
    etype u8, shape as u8 ndim + u64 extents, segment_id u32,
    offset u64, length u64, crc32 u32), then a u32 CRC32 of every
    preceding index byte.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

from ..dtypes import ElementType, cell_bytes
from ..errors import IndexCorrupt, InvalidDesc

DATA_DIR_NAME = "table.psegd"
SEG_MAGIC = b"PSG1"
SEG_HEADER = struct.Struct("<4sI")
INDEX_MAGIC = b"PSGIDX1"

_FIXED_HEAD = struct.Struct("<IQQBB")  # column_id, row_begin, row_count, etype, ndim
_FIXED_TAIL = struct.Struct("<IQQI")  # segment_id, offset, length, crc32


@dataclass
class VarRecord:
    """Index entry: one contiguous row range of one column in a segment."""

    column_id: int
    row_begin: int
    row_count: int
    etype: ElementType
    shape: tuple[int, ...]
    segment_id: int
    offset: int
    length: int
    crc32: int

    @property
    def row_end(self) -> int:
        return self.row_begin + self.row_count

    @property
    def cell_bytes(self) -> int:
        return cell_bytes(self.etype, self.shape)

    def validate(self):
        if self.length != self.row_count * self.cell_bytes:
            raise IndexCorrupt(
                f"record length {self.length} != row_count {self.row_count} "
                f"x cell_bytes {self.cell_bytes}"
            )

    def encode(self) -> bytes:
        head = _FIXED_HEAD.pack(
            self.column_id,
            self.row_begin,
            self.row_count,
            self.etype.tag,
            len(self.shape),
        )
        extents = struct.pack(f"<{len(self.shape)}Q", *self.shape)
        tail = _FIXED_TAIL.pack(self.segment_id, self.offset, self.length, self.crc32)
        return head + extents + tail

    @classmethod
    def decode_from(cls, buf: bytes, pos: int) -> tuple["VarRecord", int]:
        try:
            column_id, row_begin, row_count, etag, ndim = _FIXED_HEAD.unpack_from(
                buf, pos
            )
            pos += _FIXED_HEAD.size
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            segment_id, offset, length, crc = _FIXED_TAIL.unpack_from(buf, pos)
            pos += _FIXED_TAIL.size
        except struct.error:
            raise IndexCorrupt("truncated index record") from None
        try:
            etype = ElementType.from_tag(etag)
        except InvalidDesc:
            raise IndexCorrupt(f"bad element type tag {etag}") from None
        rec = cls(
            column_id, row_begin, row_count, etype, shape, segment_id, offset, length, crc
        )
        rec.validate()
        return rec, pos


def seg_name(segment_id: int) -> str:
    return f"seg.{segment_id}"


def encode_index(records: list[VarRecord]) -> bytes:
    body = INDEX_MAGIC + struct.pack("<I", len(records))
    body += b"".join(rec.encode() for rec in records)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_index(buf: bytes) -> list[VarRecord]:
    if len(buf) < len(INDEX_MAGIC) + 8:
        raise IndexCorrupt("index file is too short")
    if buf[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise IndexCorrupt("bad index magic")
    body, (stored_crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != stored_crc:
        raise IndexCorrupt("index CRC mismatch")
    (count,) = struct.unpack_from("<I", buf, len(INDEX_MAGIC))
    pos = len(INDEX_MAGIC) + 4
    records = []
    for _ in range(count):
        rec, pos = VarRecord.decode_from(body, pos)
        records.append(rec)
    if pos != len(body):
        raise IndexCorrupt("trailing bytes after index records")
    return records


def read_index(table_path: Path) -> list[VarRecord]:
    """Decode and CRC-check the index of a finalized table."""
    index_path = Path(table_path) / DATA_DIR_NAME / "index"
    try:
        buf = index_path.read_bytes()
    except FileNotFoundError:
        raise IndexCorrupt(f"no index at {index_path} (table not finalized?)") from None
    except OSError as exc:
        raise IndexCorrupt(f"cannot read {index_path}: {exc}") from None
    return decode_index(buf)
