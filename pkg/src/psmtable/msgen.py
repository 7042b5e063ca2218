"""MS-like synthetic tables: schema, deterministic content, checksums.

Cell content is reproducible bit-exactly from (seed, column ordinal,
row) via the indexed SplitMix64 stream in ``kernels``; the mapping from
raw 64-bit draws to each element type is documented in the README so
foreign implementations can regenerate identical bytes.
"""

from __future__ import annotations

import json
import math
import zlib
from pathlib import Path

import numpy as np

from .descriptor import ColumnDesc, TableDesc
from .dtypes import CellValue, ElementType, ShapePolicy
from .errors import NotATable
from .kernels import raw_block

MANIFEST_NAME = "manifest.json"


def ms_schema(nrows: int, npol: int = 2, nchan: int = 2048, manager: str = "tiled") -> TableDesc:
    """The fixed MS-like column set; DATA cells are npol x nchan c64.

    With the pseg manager the array columns are declared variable-shape,
    the way MeasurementSet generators habitually do, so the fixed shape
    is forced by the first write instead of the declaration.
    """

    def arr(extents):
        if manager == "pseg":
            return ShapePolicy.variable(len(extents))
        return ShapePolicy.fixed(extents)

    scalar = ShapePolicy.scalar()
    columns = [
        ColumnDesc("TIME", ElementType.F64, scalar, manager),
        ColumnDesc("ANTENNA1", ElementType.I32, scalar, manager),
        ColumnDesc("ANTENNA2", ElementType.I32, scalar, manager),
        ColumnDesc("UVW", ElementType.F64, arr((3,)), manager),
        ColumnDesc("FLAG", ElementType.BOOL, arr((npol, nchan)), manager),
        ColumnDesc("DATA", ElementType.C64, arr((npol, nchan)), manager),
    ]
    return TableDesc(columns, nrows)


def lanes(etype: ElementType) -> int:
    """Raw 64-bit draws consumed per element."""
    return 2 if etype is ElementType.C128 else 1


def map_raws(raws: np.ndarray, etype: ElementType) -> np.ndarray:
    """Map raw uint64 draws onto element values (documented, bit-exact)."""
    if etype is ElementType.BOOL:
        return (raws & np.uint64(1)).astype("?")
    if etype is ElementType.I32:
        return (raws >> np.uint64(32)).astype(np.uint32).view(np.int32)
    if etype is ElementType.I64:
        return raws.view(np.int64)
    if etype is ElementType.F32:
        return ((raws >> np.uint64(40)).astype(np.float64) * 2.0**-24).astype(np.float32)
    if etype is ElementType.F64:
        return (raws >> np.uint64(11)).astype(np.float64) * 2.0**-53
    if etype is ElementType.C64:
        re = ((raws >> np.uint64(40)).astype(np.float64) * 2.0**-24).astype(np.float32)
        im = (
            ((raws >> np.uint64(16)) & np.uint64(0xFFFFFF)).astype(np.float64)
            * 2.0**-24
        ).astype(np.float32)
        out = np.empty(raws.shape, dtype=np.complex64)
        out.real = re
        out.imag = im
        return out
    if etype is ElementType.C128:
        vals = (raws >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = np.empty(len(raws) // 2, dtype=np.complex128)
        out.real = vals[0::2]
        out.imag = vals[1::2]
        return out
    raise AssertionError(etype)


def synth_cell(
    seed: int, stream: int, row: int, etype: ElementType, shape: tuple[int, ...]
) -> CellValue:
    """Deterministic cell for (seed, column stream, row)."""
    nelem = math.prod(shape)
    draws = nelem * lanes(etype)
    raws = raw_block(seed, stream, row * draws, draws)
    return CellValue(etype, shape, map_raws(raws, etype).reshape(shape))


def fill_table(handle, seed: int, shapes: dict[str, tuple[int, ...]]) -> dict[str, int]:
    """Write every cell of every column; returns per-column payload CRCs."""
    crcs = {name: 0 for name in shapes}
    for row in range(handle.nrows):
        for stream, col in enumerate(handle.desc.columns):
            cell = synth_cell(seed, stream, row, col.etype, shapes[col.name])
            handle.put_cell(col.name, row, cell)
            crcs[col.name] = zlib.crc32(cell.to_bytes(), crcs[col.name])
    return crcs


def write_manifest(table_path, nrows: int, crcs: dict[str, int], cell_bytes: dict[str, int]):
    payload = {
        "nrows": nrows,
        "columns": {
            name: {"crc32": crcs[name], "cell_bytes": cell_bytes[name]}
            for name in crcs
        },
    }
    (Path(table_path) / MANIFEST_NAME).write_text(json.dumps(payload, indent=2) + "\n")


def read_manifest(table_path) -> dict:
    path = Path(table_path) / MANIFEST_NAME
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise NotATable(f"no checksum manifest at {path}") from None


def column_crc(handle, column: str) -> int:
    """CRC32 of the column's cells concatenated in row order."""
    crc = 0
    for row in range(handle.nrows):
        crc = zlib.crc32(handle.get_cell(column, row).to_bytes(), crc)
    return crc
