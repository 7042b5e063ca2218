"""Table handles: create/open, cell routing, and single-writer locking.

A handle is confined to one thread of one process. Write handles route
``put_cell`` to the manager each column is bound to and hold the table
lock while the role is Serial; Read handles route ``get_cell`` and never
lock. Cross-process parallel writing goes through ``pseg.bind``, never
through shared handles.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path

from . import comm as comm_mod
from . import tabledir
from .descriptor import TableDesc
from .dtypes import CellValue, ShapeKind, as_cell
from .errors import AlreadyExists, UnsupportedOperation, WrongMode
from .pseg import PsegOptions, PsegReader, PsegWriter
from .tiled import TiledColumn


class Mode(Enum):
    READ = "read"
    WRITE = "write"


class Role(Enum):
    SERIAL = "serial"
    PARALLEL_MASTER = "parallel_master"
    PARALLEL_WORKER = "parallel_worker"


class _SealedPseg:
    """Stands in for the pseg manager when a finalized table is reopened
    for writing: the manager rejects all rewrites."""

    def put_cell(self, column, row, value):
        raise UnsupportedOperation("rewrite")

    def finalize(self):
        pass


class TableHandle:
    def __init__(self, path: Path, mode: Mode, desc: TableDesc, role: Role):
        self.path = Path(path)
        self.mode = mode
        self.desc = desc
        self.role = role
        self._tiled: dict[str, TiledColumn] = {}
        self._pseg_writer: PsegWriter | _SealedPseg | None = None
        self._pseg_reader: PsegReader | None = None
        self._lock_fd: int | None = None
        self._finalized = False

    # -- properties --------------------------------------------------------

    @property
    def nrows(self) -> int:
        return self.desc.nrows

    def column_names(self) -> list[str]:
        return self.desc.names()

    def effective_shape(self, column: str) -> tuple[int, ...] | None:
        col = self.desc.column(column)
        if col.shape.kind is ShapeKind.SCALAR:
            return ()
        if col.shape.kind is ShapeKind.FIXED:
            return col.shape.extents
        if self._pseg_reader is not None:
            return self._pseg_reader.effective_shape(column)
        return None

    # -- cells ---------------------------------------------------------------

    def put_cell(self, column: str, row: int, value) -> None:
        if self.mode is not Mode.WRITE:
            raise WrongMode("handle is open for reading")
        col = self.desc.column(column)
        cell = as_cell(value, col.etype)
        if col.manager == "tiled":
            self._tiled[column].put_cell(column, row, cell)
        else:
            self._pseg_writer.put_cell(column, row, cell)

    def get_cell(self, column: str, row: int) -> CellValue:
        if self.mode is not Mode.READ:
            raise WrongMode("handle is open for writing")
        col = self.desc.column(column)
        if col.manager == "tiled":
            return self._tiled[column].get_cell(column, row)
        return self._pseg_reader.get_cell(column, row)

    # -- lifecycle -------------------------------------------------------------

    def finalize(self) -> None:
        """Flush and close all managers, release the lock. Idempotent."""
        if self._finalized:
            return
        self._finalized = True
        try:
            for mgr in self._tiled.values():
                mgr.finalize()
            if self._pseg_writer is not None:
                self._pseg_writer.finalize()
            if self._pseg_reader is not None:
                self._pseg_reader.close()
        finally:
            if self._lock_fd is not None:
                tabledir.release_lock(self.path, self._lock_fd)
                self._lock_fd = None

    close = finalize

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.finalize()
        return False

    @property
    def pseg_reader(self) -> PsegReader | None:
        return self._pseg_reader


def create_table(
    desc: TableDesc,
    path,
    mode_hint: Role = Role.SERIAL,
    pseg_options: PsegOptions | None = None,
) -> TableHandle:
    """Create a fresh table directory and a Write handle on it."""
    path = Path(path)
    desc.validate()
    tabledir.create_table_dir(path, desc)
    handle = TableHandle(path, Mode.WRITE, desc, mode_hint)
    try:
        if mode_hint is Role.SERIAL:
            handle._lock_fd = tabledir.acquire_lock(path)
        for col in desc.columns:
            if col.manager == "tiled":
                handle._tiled[col.name] = TiledColumn.create(col, desc.nrows, path)
        if any(c.manager == "pseg" for c in desc.columns):
            handle._pseg_writer = PsegWriter.bind(
                path,
                desc,
                comm=comm_mod.serial_local(),
                opts=pseg_options,
                _dir_ready=True,
            )
    except BaseException:
        # never leave a half-created table behind
        if handle._lock_fd is not None:
            tabledir.release_lock(path, handle._lock_fd)
        import shutil

        shutil.rmtree(path, ignore_errors=True)
        raise
    return handle


def open_table(
    path,
    mode: Mode = Mode.READ,
    pseg_options: PsegOptions | None = None,
) -> TableHandle:
    """Open an existing table; Write mode takes the exclusive lock."""
    path = Path(path)
    desc = tabledir.read_desc(path)
    handle = TableHandle(path, mode, desc, Role.SERIAL)
    if mode is Mode.WRITE:
        handle._lock_fd = tabledir.acquire_lock(path)
    try:
        writable = mode is Mode.WRITE
        for col in desc.columns:
            if col.manager == "tiled":
                handle._tiled[col.name] = TiledColumn.open(
                    col, desc.nrows, path, writable
                )
        if any(c.manager == "pseg" for c in desc.columns):
            if writable:
                handle._pseg_writer = _SealedPseg()
            else:
                handle._pseg_reader = PsegReader(path, desc, pseg_options)
    except BaseException:
        if handle._lock_fd is not None:
            tabledir.release_lock(path, handle._lock_fd)
        raise
    return handle
