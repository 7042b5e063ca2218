import numpy as np
import pytest

from psmtable import (
    ColumnDesc,
    ElementType,
    Mode,
    ShapePolicy,
    TableDesc,
    create_table,
    open_table,
)
from psmtable.errors import (
    AlreadyExists,
    CellNeverWritten,
    InvalidDesc,
    LockHeld,
    NotATable,
    RowOutOfRange,
    TypeMismatch,
    UnknownColumn,
    WrongMode,
)

from conftest import random_desc, write_random_table


def scalar_desc(nrows=3, manager="tiled"):
    return TableDesc(
        [ColumnDesc("X", ElementType.F64, ShapePolicy.scalar(), manager)], nrows
    )


def test_create_writes_descriptor(tmp_path):
    handle = create_table(scalar_desc(), tmp_path / "t")
    handle.finalize()
    text = (tmp_path / "t" / "table.desc").read_text()
    assert text == "PSMTABLE 1\nnrows 3\ncolumn X f64 0 - tiled\n"


def test_create_same_path_twice(tmp_path):
    create_table(scalar_desc(), tmp_path / "t").finalize()
    with pytest.raises(AlreadyExists):
        create_table(scalar_desc(), tmp_path / "t")


def test_create_duplicate_columns(tmp_path):
    cols = [
        ColumnDesc("DATA", ElementType.F64, ShapePolicy.scalar(), "tiled"),
        ColumnDesc("DATA", ElementType.F32, ShapePolicy.scalar(), "tiled"),
    ]
    with pytest.raises(InvalidDesc):
        create_table(TableDesc(cols, 1), tmp_path / "t")
    assert not (tmp_path / "t").exists()


def test_put_get_roundtrip_through_reopen(tmp_path):
    handle = create_table(scalar_desc(), tmp_path / "t")
    handle.put_cell("X", 0, np.float64(1.5))
    # tiled cells are visible to a fresh Read handle before finalize
    reader = open_table(tmp_path / "t", Mode.READ)
    assert reader.get_cell("X", 0).data == 1.5
    reader.finalize()
    handle.finalize()


def test_put_errors(tmp_path):
    handle = create_table(scalar_desc(), tmp_path / "t")
    with pytest.raises(RowOutOfRange):
        handle.put_cell("X", 3, np.float64(0.0))
    with pytest.raises(TypeMismatch):
        handle.put_cell("X", 0, np.float32(0.0))
    with pytest.raises(UnknownColumn):
        handle.put_cell("Y", 0, np.float64(0.0))
    handle.finalize()


def test_mode_exclusivity(tmp_path):
    handle = create_table(scalar_desc(), tmp_path / "t")
    handle.put_cell("X", 0, np.float64(1.0))
    with pytest.raises(WrongMode):
        handle.get_cell("X", 0)
    handle.finalize()
    reader = open_table(tmp_path / "t", Mode.READ)
    with pytest.raises(WrongMode):
        reader.put_cell("X", 0, np.float64(2.0))
    reader.finalize()


def test_lock_excludes_second_writer(tmp_path):
    handle = create_table(scalar_desc(), tmp_path / "t")
    with pytest.raises(LockHeld):
        open_table(tmp_path / "t", Mode.WRITE)
    handle.finalize()
    # lock released at finalize; rewriting is a tiled capability
    second = open_table(tmp_path / "t", Mode.WRITE)
    second.put_cell("X", 0, np.float64(9.0))
    second.finalize()
    reader = open_table(tmp_path / "t", Mode.READ)
    assert reader.get_cell("X", 0).data == 9.0
    reader.finalize()


def test_stale_lock_not_auto_broken(tmp_path):
    create_table(scalar_desc(), tmp_path / "t").finalize()
    (tmp_path / "t" / "table.lock").write_text("pid 0\n")
    with pytest.raises(LockHeld):
        open_table(tmp_path / "t", Mode.WRITE)


def test_open_read_populates_nrows(tmp_path):
    handle = create_table(scalar_desc(nrows=3), tmp_path / "t")
    for row in range(3):
        handle.put_cell("X", row, np.float64(row))
    handle.finalize()
    reader = open_table(tmp_path / "t", Mode.READ)
    assert reader.nrows == 3
    reader.finalize()


def test_open_empty_dir_not_a_table(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(NotATable):
        open_table(tmp_path / "empty", Mode.READ)


def test_get_returns_written_arrays(tmp_path):
    desc = TableDesc(
        [ColumnDesc("DATA", ElementType.I64, ShapePolicy.fixed((4,)), "tiled")], 4
    )
    handle = create_table(desc, tmp_path / "t")
    oracle = {}
    for row in range(4):
        arr = np.arange(4, dtype=np.int64) * (row + 1)
        oracle[row] = arr
        handle.put_cell("DATA", row, arr)
    handle.finalize()
    reader = open_table(tmp_path / "t", Mode.READ)
    assert np.array_equal(reader.get_cell("DATA", 2).data, oracle[2])
    for row in range(4):
        assert np.array_equal(reader.get_cell("DATA", row).data, oracle[row])
    reader.finalize()


def test_get_unwritten_and_unknown(tmp_path):
    handle = create_table(scalar_desc(), tmp_path / "t")
    handle.put_cell("X", 0, np.float64(0.0))
    handle.finalize()
    reader = open_table(tmp_path / "t", Mode.READ)
    with pytest.raises(CellNeverWritten):
        reader.get_cell("X", 1)
    with pytest.raises(UnknownColumn):
        reader.get_cell("NOPE", 0)
    reader.finalize()


def test_finalize_idempotent_and_empty_table(tmp_path):
    handle = create_table(scalar_desc(), tmp_path / "t")
    handle.finalize()
    handle.finalize()  # double finalize: no error
    reader = open_table(tmp_path / "t", Mode.READ)
    with pytest.raises(CellNeverWritten):
        reader.get_cell("X", 0)  # valid empty-content table
    reader.finalize()


def test_cross_manager_equivalence(tmp_path):
    """Byte-identical get_cell results under different managers."""
    rng = np.random.default_rng(13)
    desc_t = random_desc(rng, "tiled")
    oracle = write_random_table(rng, tmp_path / "tiled", desc_t)
    desc_p = TableDesc(
        [ColumnDesc(c.name, c.etype, c.shape, "pseg") for c in desc_t.columns],
        desc_t.nrows,
    )
    handle = create_table(desc_p, tmp_path / "pseg")
    for (name, row), cell in oracle.items():
        handle.put_cell(name, row, cell)
    handle.finalize()

    a = open_table(tmp_path / "tiled", Mode.READ)
    b = open_table(tmp_path / "pseg", Mode.READ)
    for (name, row), cell in oracle.items():
        got_a = a.get_cell(name, row)
        got_b = b.get_cell(name, row)
        assert got_a.to_bytes() == got_b.to_bytes() == cell.to_bytes()
    a.finalize()
    b.finalize()
