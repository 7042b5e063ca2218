"""Reader for finalized pseg tables with a contiguous-row prefetch cache.

Row-at-a-time readers are the common access pattern, so each column
keeps a sliding window of decoded contiguous rows. A miss that extends
the previous access (row == last_row + 1) pulls a whole window in one
backend read; any other miss reads exactly one cell. Every physical
read increments an instrumentation counter so tests and benchmarks can
assert the read amplification.

A record's payload CRC is verified the first time any of its cells is
touched, by streaming the whole record once; that pass doubles as the
backend read for the triggering access.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..descriptor import TableDesc
from ..dtypes import CellValue, ShapeKind
from ..errors import CellNeverWritten, IndexCorrupt, RowOutOfRange, UnknownColumn
from . import format as fmt
from .writer import PsegOptions

_VERIFY_CHUNK = 8 * 1024 * 1024


@dataclass
class PrefetchCache:
    """Sliding window of decoded contiguous rows for one column."""

    column_id: int
    window_begin: int = 0
    window_rows: int = 0
    buffer: np.ndarray | None = None  # (window_rows, *cell_shape)
    last_row: int | None = None
    backend_read_count: int = 0

    def hit(self, row: int) -> bool:
        return (
            self.buffer is not None
            and self.window_begin <= row < self.window_begin + self.window_rows
        )


class PsegReader:
    """Per-process reader; confined to one thread."""

    def __init__(self, table_path, desc: TableDesc, opts: PsegOptions | None = None):
        self.table_path = Path(table_path)
        self.desc = desc
        self.opts = opts or PsegOptions()
        self.data_dir = self.table_path / fmt.DATA_DIR_NAME
        self.records = fmt.read_index(self.table_path)
        # per column: records sorted by row_begin for bisection
        self._by_column: dict[int, list[fmt.VarRecord]] = {}
        for rec in self.records:
            self._by_column.setdefault(rec.column_id, []).append(rec)
        for recs in self._by_column.values():
            recs.sort(key=lambda r: r.row_begin)
        self._caches: dict[int, PrefetchCache] = {}
        self._seg_fds: dict[int, int] = {}
        self._verified: set[int] = set()  # id = index position of record
        self._rec_ids = {id(rec): i for i, rec in enumerate(self.records)}
        self._closed = False

    # -- public ----------------------------------------------------------

    def get_cell(self, column: str, row: int) -> CellValue:
        cid = self.desc.column_id(column)
        nrows = self.desc.nrows
        if not 0 <= row < nrows:
            raise RowOutOfRange(f"row {row} not in [0, {nrows})")
        cache = self._caches.setdefault(cid, PrefetchCache(cid))
        col = self.desc.columns[cid]
        if cache.hit(row):
            cell = self._from_window(cache, col.etype, row)
            cache.last_row = row
            return cell
        rec = self._locate(cid, row)
        if rec is None:
            # finalize guarantees total coverage, so a hole means the
            # index does not describe this table
            raise CellNeverWritten(
                f"column {column!r} row {row} is missing from the index"
            )
        sequential = cache.last_row is not None and row == cache.last_row + 1
        if sequential:
            cap_rows = max(1, self.opts.prefetch_bytes_cap // rec.cell_bytes)
            n = min(self.opts.prefetch_rows, rec.row_end - row, cap_rows)
        else:
            n = 1
        buf = self._fetch(rec, row, n, cache)
        block = np.frombuffer(buf, dtype=col.etype.np_dtype)
        cache.buffer = block.reshape((n, *rec.shape))
        cache.window_begin = row
        cache.window_rows = n
        cache.last_row = row
        return self._from_window(cache, col.etype, row)

    def effective_shape(self, column: str) -> tuple[int, ...] | None:
        """Cell shape actually stored; None for a variable column with no rows."""
        cid = self.desc.column_id(column)
        col = self.desc.columns[cid]
        if col.shape.kind is ShapeKind.SCALAR:
            return ()
        if col.shape.kind is ShapeKind.FIXED:
            return col.shape.extents
        recs = self._by_column.get(cid)
        return tuple(recs[0].shape) if recs else None

    @property
    def backend_read_count(self) -> int:
        return sum(c.backend_read_count for c in self._caches.values())

    def cache(self, column: str) -> PrefetchCache:
        cid = self.desc.column_id(column)
        return self._caches.setdefault(cid, PrefetchCache(cid))

    def close(self):
        if self._closed:
            return
        self._closed = True
        for fd in self._seg_fds.values():
            try:
                os.close(fd)
            except OSError:
                pass
        self._seg_fds.clear()

    # -- internals ---------------------------------------------------------

    def _from_window(self, cache: PrefetchCache, etype, row: int) -> CellValue:
        cell = cache.buffer[row - cache.window_begin]
        return CellValue(etype, cell.shape, np.array(cell, dtype=etype.np_dtype))

    def _locate(self, cid: int, row: int) -> fmt.VarRecord | None:
        recs = self._by_column.get(cid, [])
        lo, hi = 0, len(recs)
        while lo < hi:
            mid = (lo + hi) // 2
            if recs[mid].row_begin <= row:
                lo = mid + 1
            else:
                hi = mid
        if lo == 0:
            return None
        rec = recs[lo - 1]
        return rec if row < rec.row_end else None

    def _seg_fd(self, segment_id: int) -> int:
        fd = self._seg_fds.get(segment_id)
        if fd is not None:
            return fd
        path = self.data_dir / fmt.seg_name(segment_id)
        try:
            fd = os.open(path, os.O_RDONLY)
        except FileNotFoundError:
            raise IndexCorrupt(f"index names missing segment file {path}") from None
        header = os.pread(fd, fmt.SEG_HEADER.size, 0)
        try:
            magic, sid = fmt.SEG_HEADER.unpack(header)
        except Exception:
            raise IndexCorrupt(f"short segment header in {path}") from None
        if magic != fmt.SEG_MAGIC or sid != segment_id:
            raise IndexCorrupt(f"bad segment header in {path}")
        self._seg_fds[segment_id] = fd
        return fd

    def _fetch(self, rec: fmt.VarRecord, row: int, n: int, cache: PrefetchCache) -> bytes:
        """One physical read of n cells starting at row; CRC pass on first touch."""
        cb = rec.cell_bytes
        want_off = (row - rec.row_begin) * cb
        want_len = n * cb
        fd = self._seg_fd(rec.segment_id)
        base = fmt.SEG_HEADER.size + rec.offset
        cache.backend_read_count += 1
        rec_id = self._rec_ids[id(rec)]
        if rec_id in self._verified:
            buf = os.pread(fd, want_len, base + want_off)
            if len(buf) != want_len:
                raise IndexCorrupt(f"segment {rec.segment_id} is shorter than its index")
            return buf
        # first touch: stream the whole record once, checking its CRC and
        # capturing the requested range on the way through
        crc = 0
        captured = bytearray()
        pos = 0
        while pos < rec.length:
            chunk = os.pread(fd, min(_VERIFY_CHUNK, rec.length - pos), base + pos)
            if not chunk:
                raise IndexCorrupt(f"segment {rec.segment_id} is shorter than its index")
            crc = zlib.crc32(chunk, crc)
            lo = max(want_off, pos)
            hi = min(want_off + want_len, pos + len(chunk))
            if lo < hi:
                captured += chunk[lo - pos : hi - pos]
            pos += len(chunk)
        if crc != rec.crc32:
            raise IndexCorrupt(
                f"payload CRC mismatch in segment {rec.segment_id} for rows "
                f"[{rec.row_begin}, {rec.row_end}) of column {rec.column_id}"
            )
        self._verified.add(rec_id)
        return bytes(captured)
