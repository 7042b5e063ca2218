"""Storage-manager plugin contract.

The table core never touches column payload bytes itself; every cell
read or write is delegated to the manager instance the column is bound
to. A manager may serve a single column (tiled) or a group of columns
sharing one physical store (pseg).
"""

from __future__ import annotations

from .dtypes import CellValue


class StorageManager:
    """Abstract per-instance manager surface used by the table core."""

    #: cells may be overwritten in place
    supports_rewrite: bool = False
    #: instances may be bound from multiple cooperating processes
    supports_parallel_bind: bool = False

    def put_cell(self, column: str, row: int, value: CellValue) -> None:
        raise NotImplementedError

    def get_cell(self, column: str, row: int) -> CellValue:
        raise NotImplementedError

    def finalize(self) -> None:
        raise NotImplementedError
