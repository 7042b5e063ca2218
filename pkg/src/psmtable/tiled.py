"""Serial tiled storage manager.

One ``<column>.tsm`` file per column: a 16-byte header (magic ``TSM1``,
version u16, rows_per_tile u16, cell_bytes u64, little-endian) followed
by a dense fixed layout. The byte offset of row r is

    header + (r // rows_per_tile) * rows_per_tile * cell_bytes
           + (r % rows_per_tile) * cell_bytes

A ``<column>.tsm.map`` sidecar holds one bit per row (LSB-first) so that
a zeroed but unwritten row is distinguishable from written zeros.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

from .descriptor import ColumnDesc
from .dtypes import CellValue, ShapeKind, as_cell, cell_bytes
from .errors import (
    CellNeverWritten,
    CorruptDescriptor,
    IoFailed,
    RowOutOfRange,
    ShapeMismatch,
    UnsupportedShape,
)
from .stman import StorageManager

MAGIC = b"TSM1"
VERSION = 1
HEADER = struct.Struct("<4sHHQ")
DEFAULT_ROWS_PER_TILE = 16


@dataclass(frozen=True)
class TileLayout:
    rows_per_tile: int = DEFAULT_ROWS_PER_TILE
    cell_bytes: int = 0

    def offset(self, row: int) -> int:
        tile, slot = divmod(row, self.rows_per_tile)
        return (
            HEADER.size
            + tile * self.rows_per_tile * self.cell_bytes
            + slot * self.cell_bytes
        )


class TiledColumn(StorageManager):
    """Manager instance for one scalar or fixed-shape column."""

    supports_rewrite = True
    supports_parallel_bind = False

    def __init__(self, column: ColumnDesc, nrows: int, layout: TileLayout, dir: Path):
        self.column = column
        self.nrows = nrows
        self.layout = layout
        self.path = dir / f"{column.name}.tsm"
        self.map_path = dir / f"{column.name}.tsm.map"
        self.shape = () if column.shape.kind is ShapeKind.SCALAR else column.shape.extents
        self._file = None
        self._bitmap = bytearray()
        self._writable = False

    # -- lifecycle -----------------------------------------------------

    @classmethod
    def create(
        cls,
        column: ColumnDesc,
        nrows: int,
        dir: Path,
        layout: TileLayout | None = None,
    ) -> "TiledColumn":
        if column.shape.kind is ShapeKind.VARIABLE:
            raise UnsupportedShape(
                f"tiled manager needs a fixed shape for column {column.name!r}"
            )
        rows_per_tile = (layout or TileLayout()).rows_per_tile
        cb = cell_bytes(column.etype, cls._declared_shape(column))
        layout = TileLayout(rows_per_tile, cb)
        mgr = cls(column, nrows, layout, dir)
        try:
            # unbuffered so fresh Read handles see every put immediately
            mgr._file = open(mgr.path, "w+b", buffering=0)
            mgr._file.write(HEADER.pack(MAGIC, VERSION, rows_per_tile, cb))
            mgr._file.truncate(HEADER.size + nrows * cb)
            mgr._bitmap = bytearray((nrows + 7) // 8)
            with open(mgr.map_path, "wb") as f:
                f.write(mgr._bitmap)
        except OSError as exc:
            raise IoFailed(f"creating {mgr.path}: {exc}") from exc
        mgr._writable = True
        return mgr

    @classmethod
    def open(cls, column: ColumnDesc, nrows: int, dir: Path, writable: bool) -> "TiledColumn":
        mgr = cls(column, nrows, TileLayout(), dir)
        try:
            if writable:
                mgr._file = open(mgr.path, "r+b", buffering=0)
            else:
                mgr._file = open(mgr.path, "rb")
            header = mgr._file.read(HEADER.size)
        except OSError as exc:
            raise IoFailed(f"opening {mgr.path}: {exc}") from exc
        try:
            magic, version, rows_per_tile, cb = HEADER.unpack(header)
        except struct.error:
            raise CorruptDescriptor(f"short header in {mgr.path}") from None
        if magic != MAGIC or version != VERSION:
            raise CorruptDescriptor(f"bad magic/version in {mgr.path}")
        if cb != cell_bytes(column.etype, mgr.shape):
            raise CorruptDescriptor(
                f"{mgr.path}: cell size {cb} does not match descriptor"
            )
        mgr.layout = TileLayout(rows_per_tile, cb)
        try:
            mgr._bitmap = bytearray(mgr.map_path.read_bytes())
        except OSError as exc:
            raise IoFailed(f"reading {mgr.map_path}: {exc}") from exc
        if len(mgr._bitmap) < (nrows + 7) // 8:
            raise CorruptDescriptor(f"{mgr.map_path} is too short for {nrows} rows")
        mgr._writable = writable
        return mgr

    def finalize(self) -> None:
        if self._file is None:
            return
        if self._writable:
            self._file.flush()
            os.fsync(self._file.fileno())
        self._file.close()
        self._file = None

    # -- bitmap --------------------------------------------------------

    def _written(self, row: int) -> bool:
        return bool(self._bitmap[row >> 3] >> (row & 7) & 1)

    def _mark_written(self, row: int) -> None:
        self._bitmap[row >> 3] |= 1 << (row & 7)
        # write-through so a fresh Read handle sees the row immediately
        with open(self.map_path, "r+b") as f:
            f.seek(row >> 3)
            f.write(self._bitmap[row >> 3 : (row >> 3) + 1])

    # -- cells ---------------------------------------------------------

    @staticmethod
    def _declared_shape(column: ColumnDesc) -> tuple[int, ...]:
        return () if column.shape.kind is ShapeKind.SCALAR else column.shape.extents

    def _check_row(self, row: int) -> None:
        if not 0 <= row < self.nrows:
            raise RowOutOfRange(f"row {row} not in [0, {self.nrows})")

    def put_cell(self, column: str, row: int, value) -> None:
        self._check_row(row)
        value = as_cell(value, self.column.etype)
        if value.shape != self.shape:
            raise ShapeMismatch(
                f"column {self.column.name!r} stores shape {self.shape}, "
                f"got {value.shape}"
            )
        self._file.seek(self.layout.offset(row))
        self._file.write(value.to_bytes())
        self._mark_written(row)

    def get_cell(self, column: str, row: int) -> CellValue:
        self._check_row(row)
        if not self._written(row):
            raise CellNeverWritten(f"{self.column.name!r} row {row}")
        self._file.seek(self.layout.offset(row))
        buf = self._file.read(self.layout.cell_bytes)
        return CellValue.from_bytes(self.column.etype, self.shape, buf)

    def get_range(self, row_begin: int, row_end: int) -> list[CellValue]:
        """One backend read for a non-empty contiguous, fully-written range."""
        if not 0 <= row_begin < row_end <= self.nrows:
            raise RowOutOfRange(f"range [{row_begin}, {row_end}) not in [0, {self.nrows})")
        for row in range(row_begin, row_end):
            if not self._written(row):
                raise CellNeverWritten(f"{self.column.name!r} row {row}")
        self._file.seek(self.layout.offset(row_begin))
        buf = self._file.read((row_end - row_begin) * self.layout.cell_bytes)
        cb = self.layout.cell_bytes
        return [
            CellValue.from_bytes(
                self.column.etype, self.shape, buf[i * cb : (i + 1) * cb]
            )
            for i in range(row_end - row_begin)
        ]
