"""psmtable: a desk-scale table system with pluggable storage managers.

Columns are bound per-column to either the serial tiled manager or the
parallel segment manager; the latter lets cooperating processes write
one physical table through a master/worker metadata protocol with
aggregated segment files and a contiguous-row prefetch cache on reads.
"""

from . import errors
from .comm import Communicator, attach, init_implicit, serial_local
from .descriptor import ColumnDesc, TableDesc
from .dtypes import CellValue, ElementType, ShapeKind, ShapePolicy, cell_bytes
from .pseg import AggregationPlan, PsegOptions, PsegReader, PsegWriter, read_index
from .table import Mode, Role, TableHandle, create_table, open_table
from .tiled import TiledColumn, TileLayout

__version__ = "0.1.0"

__all__ = [
    "AggregationPlan",
    "CellValue",
    "ColumnDesc",
    "Communicator",
    "ElementType",
    "Mode",
    "PsegOptions",
    "PsegReader",
    "PsegWriter",
    "Role",
    "ShapeKind",
    "ShapePolicy",
    "TableDesc",
    "TableHandle",
    "TileLayout",
    "TiledColumn",
    "attach",
    "cell_bytes",
    "create_table",
    "errors",
    "init_implicit",
    "open_table",
    "read_index",
    "serial_local",
]
