"""Serial-path behavior of the parallel segment manager."""

import struct
import zlib

import numpy as np
import pytest

from psmtable import (
    ColumnDesc,
    ElementType,
    Mode,
    PsegOptions,
    PsegReader,
    PsegWriter,
    ShapePolicy,
    TableDesc,
    create_table,
    open_table,
    read_index,
)
from psmtable.errors import (
    CellNeverWritten,
    CoverageGap,
    IndexCorrupt,
    RewriteUnsupported,
    RowOutOfRange,
    ShapeMismatch,
    UnsupportedOperation,
    UnsupportedShape,
)
from psmtable.pseg import AggregationPlan

from conftest import random_cell


def var_desc(nrows, ndim=2):
    return TableDesc(
        [ColumnDesc("V", ElementType.F32, ShapePolicy.variable(ndim), "pseg")], nrows
    )


def fixed_desc(nrows, extents=(4,)):
    return TableDesc(
        [ColumnDesc("D", ElementType.F64, ShapePolicy.fixed(extents), "pseg")], nrows
    )


# -- aggregation plan ---------------------------------------------------------


def test_plan_contiguous_groups_lowest_rank_leads():
    plan = AggregationPlan.compute(4, 2)
    assert plan.group_of == (0, 0, 1, 1)
    assert plan.leader_of == (0, 2)
    plan = AggregationPlan.compute(5, 2)
    assert plan.group_of == (0, 0, 0, 1, 1)
    assert plan.leader_of == (0, 3)
    plan = AggregationPlan.compute(1, 1)
    assert plan.group_of == (0,)
    assert plan.leader_of == (0,)
    # rank 0 always leads its group
    for size in range(1, 12):
        for agg in range(1, size + 1):
            assert AggregationPlan.compute(size, agg).leader_of[0] == 0


def test_default_aggregators_is_ceil_sqrt():
    assert PsegOptions().effective_aggregators(1) == 1
    assert PsegOptions().effective_aggregators(4) == 2
    assert PsegOptions().effective_aggregators(8) == 3
    assert PsegOptions(aggregators=4).effective_aggregators(8) == 4
    with pytest.raises(ValueError):
        PsegOptions(aggregators=5).effective_aggregators(4)


# -- shape forcing -----------------------------------------------------------


def test_first_write_fixes_variable_shape(tmp_path):
    handle = create_table(var_desc(3), tmp_path / "t")
    handle.put_cell("V", 0, np.zeros((2, 4), dtype=np.float32))
    with pytest.raises(ShapeMismatch):
        handle.put_cell("V", 1, np.zeros((2, 5), dtype=np.float32))
    handle.put_cell("V", 1, np.ones((2, 4), dtype=np.float32))
    handle.put_cell("V", 2, np.ones((2, 4), dtype=np.float32))
    handle.finalize()
    reader = open_table(tmp_path / "t", Mode.READ)
    assert reader.effective_shape("V") == (2, 4)
    reader.finalize()


def test_wrong_ndim_rejected_even_when_forcing(tmp_path):
    handle = create_table(var_desc(1, ndim=2), tmp_path / "t")
    with pytest.raises(ShapeMismatch):
        handle.put_cell("V", 0, np.zeros((4,), dtype=np.float32))
    handle.put_cell("V", 0, np.zeros((1, 4), dtype=np.float32))
    handle.finalize()


def test_forcing_disabled_rejects_variable_columns(tmp_path):
    opts = PsegOptions(force_direct_array=False)
    handle = create_table(var_desc(1), tmp_path / "t", pseg_options=opts)
    with pytest.raises(UnsupportedShape):
        handle.put_cell("V", 0, np.zeros((2, 4), dtype=np.float32))
    # fixed-shape columns are unaffected by the switch
    handle2 = create_table(fixed_desc(1), tmp_path / "t2", pseg_options=opts)
    handle2.put_cell("D", 0, np.zeros(4))
    handle2.finalize()


# -- write rules ---------------------------------------------------------------


def test_run_coalescing_single_record(tmp_path):
    handle = create_table(fixed_desc(10), tmp_path / "t")
    for row in range(10):
        handle.put_cell("D", row, np.full(4, row, dtype=np.float64))
    handle.finalize()
    records = read_index(tmp_path / "t")
    assert len(records) == 1
    assert (records[0].row_begin, records[0].row_count) == (0, 10)


def test_out_of_order_rows_make_separate_records(tmp_path):
    handle = create_table(fixed_desc(4), tmp_path / "t")
    for row in (2, 3, 0, 1):
        handle.put_cell("D", row, np.full(4, row, dtype=np.float64))
    handle.finalize()
    records = read_index(tmp_path / "t")
    assert sorted((r.row_begin, r.row_count) for r in records) == [(0, 2), (2, 2)]
    reader = open_table(tmp_path / "t", Mode.READ)
    for row in range(4):
        assert reader.get_cell("D", row).data[0] == row
    reader.finalize()


def test_rewrite_same_rank_rejected_at_put(tmp_path):
    handle = create_table(fixed_desc(4), tmp_path / "t")
    handle.put_cell("D", 1, np.zeros(4))
    with pytest.raises(RewriteUnsupported):
        handle.put_cell("D", 1, np.ones(4))


def test_put_after_finalize_and_unsupported_ops(tmp_path):
    desc = fixed_desc(1)
    writer = PsegWriter.bind(tmp_path / "t", desc)
    writer.put_cell("D", 0, np.zeros(4))
    with pytest.raises(UnsupportedOperation) as exc:
        writer.add_rows(5)
    assert exc.value.feature == "add_rows"
    with pytest.raises(UnsupportedOperation) as exc:
        writer.add_columns(["Y"])
    assert exc.value.feature == "add_columns"
    writer.finalize()
    with pytest.raises(UnsupportedOperation) as exc:
        writer.put_cell("D", 0, np.zeros(4))
    assert exc.value.feature == "rewrite"
    writer.finalize()  # idempotent


def test_write_handle_on_finalized_pseg_table(tmp_path):
    handle = create_table(fixed_desc(1), tmp_path / "t")
    handle.put_cell("D", 0, np.zeros(4))
    handle.finalize()
    back = open_table(tmp_path / "t", Mode.WRITE)
    with pytest.raises(UnsupportedOperation):
        back.put_cell("D", 0, np.ones(4))
    back.finalize()


def test_coverage_gap_serial(tmp_path):
    handle = create_table(fixed_desc(3), tmp_path / "t")
    handle.put_cell("D", 0, np.zeros(4))
    handle.put_cell("D", 2, np.zeros(4))
    with pytest.raises(CoverageGap, match="row 1"):
        handle.finalize()


def test_zero_row_table_finalizes_empty(tmp_path):
    handle = create_table(fixed_desc(0), tmp_path / "t")
    handle.finalize()
    assert read_index(tmp_path / "t") == []
    reader = open_table(tmp_path / "t", Mode.READ)
    with pytest.raises(RowOutOfRange):
        reader.get_cell("D", 0)
    reader.finalize()


# -- index -------------------------------------------------------------------


def test_single_rank_single_column_one_record(tmp_path):
    handle = create_table(fixed_desc(10), tmp_path / "t")
    for row in range(10):
        handle.put_cell("D", row, np.full(4, row * 0.5))
    handle.finalize()
    (rec,) = read_index(tmp_path / "t")
    assert (rec.row_begin, rec.row_count, rec.segment_id) == (0, 10, 0)
    assert rec.length == 10 * 4 * 8
    assert rec.etype is ElementType.F64
    assert tuple(rec.shape) == (4,)
    # segment file exists and holds header + payload
    seg = tmp_path / "t" / "table.psegd" / "seg.0"
    assert seg.stat().st_size == 8 + rec.length


def test_index_column_ids_are_desc_ordinals(tmp_path):
    desc = TableDesc(
        [
            ColumnDesc("A", ElementType.I32, ShapePolicy.scalar(), "pseg"),
            ColumnDesc("B", ElementType.I64, ShapePolicy.scalar(), "pseg"),
        ],
        2,
    )
    handle = create_table(desc, tmp_path / "t")
    for row in range(2):
        handle.put_cell("A", row, np.int32(row))
        handle.put_cell("B", row, np.int64(row))
    handle.finalize()
    records = read_index(tmp_path / "t")
    assert {r.column_id for r in records} == {0, 1}


# -- corruption detection ------------------------------------------------------


def _write_sample(tmp_path, nrows=6):
    handle = create_table(fixed_desc(nrows), tmp_path / "t")
    rng = np.random.default_rng(3)
    for row in range(nrows):
        handle.put_cell("D", row, random_cell(rng, ElementType.F64, (4,)))
    handle.finalize()
    return tmp_path / "t"


def test_payload_bitflip_detected(tmp_path):
    table = _write_sample(tmp_path)
    seg = table / "table.psegd" / "seg.0"
    raw = bytearray(seg.read_bytes())
    raw[8 + 13] ^= 0x04  # one bit inside the payload area
    seg.write_bytes(raw)
    reader = open_table(table, Mode.READ)
    with pytest.raises(IndexCorrupt, match="CRC"):
        reader.get_cell("D", 0)
    reader.finalize()


def test_index_bitflip_detected(tmp_path):
    table = _write_sample(tmp_path)
    index = table / "table.psegd" / "index"
    raw = bytearray(index.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    index.write_bytes(raw)
    with pytest.raises(IndexCorrupt):
        open_table(table, Mode.READ)


def test_bad_index_magic_detected(tmp_path):
    table = _write_sample(tmp_path)
    index = table / "table.psegd" / "index"
    raw = bytearray(index.read_bytes())
    raw[0] ^= 0xFF
    index.write_bytes(raw)
    with pytest.raises(IndexCorrupt):
        read_index(table)


def test_truncated_segment_detected(tmp_path):
    table = _write_sample(tmp_path)
    seg = table / "table.psegd" / "seg.0"
    raw = seg.read_bytes()
    seg.write_bytes(raw[: len(raw) - 10])
    reader = open_table(table, Mode.READ)
    with pytest.raises(IndexCorrupt):
        reader.get_cell("D", 5)
    reader.finalize()


def test_missing_row_in_index_is_never_written(tmp_path):
    """A hole in a doctored index surfaces as CellNeverWritten."""
    table = _write_sample(tmp_path)
    records = read_index(table)
    from psmtable.pseg.format import encode_index

    rec = records[0]
    rec.row_count -= 1  # drop the last row, fix length/crc accordingly
    rec.length -= rec.cell_bytes
    seg = table / "table.psegd" / "seg.0"
    rec.crc32 = zlib.crc32(seg.read_bytes()[8 : 8 + rec.length])
    (table / "table.psegd" / "index").write_bytes(encode_index(records))
    reader = open_table(table, Mode.READ)
    reader.get_cell("D", 0)
    with pytest.raises(CellNeverWritten):
        reader.get_cell("D", 5)
    reader.finalize()


# -- prefetch cache ---------------------------------------------------------


def _cache_table(tmp_path, nrows=64, cells=16):
    desc = TableDesc(
        [ColumnDesc("D", ElementType.F64, ShapePolicy.fixed((cells,)), "pseg")],
        nrows,
    )
    handle = create_table(desc, tmp_path / "c")
    rng = np.random.default_rng(11)
    oracle = {}
    for row in range(nrows):
        cell = random_cell(rng, ElementType.F64, (cells,))
        oracle[row] = cell
        handle.put_cell("D", row, cell)
    handle.finalize()
    return tmp_path / "c", oracle


def test_sequential_reads_batch_into_few_backend_reads(tmp_path):
    table, oracle = _cache_table(tmp_path, nrows=64)
    desc = open_table(table, Mode.READ).desc
    reader = PsegReader(table, desc, PsegOptions(prefetch_rows=16))
    for row in range(64):
        assert reader.get_cell("D", row) == oracle[row]
    # first access fetches 1 row (plus CRC pass), then 16 at a time
    assert reader.backend_read_count <= 1 + (63 // 16) + 1
    reader.close()


def test_prefetch_disabled_reads_every_row(tmp_path):
    table, oracle = _cache_table(tmp_path, nrows=32)
    desc = open_table(table, Mode.READ).desc
    reader = PsegReader(table, desc, PsegOptions(prefetch_rows=1))
    for row in range(32):
        assert reader.get_cell("D", row) == oracle[row]
    assert reader.backend_read_count == 32
    reader.close()


def test_scattered_reads_fetch_exactly_one_cell_each(tmp_path):
    table, oracle = _cache_table(tmp_path, nrows=64)
    desc = open_table(table, Mode.READ).desc
    reader = PsegReader(table, desc, PsegOptions(prefetch_rows=16))
    rows = list(range(0, 64, 2))[::-1]  # non-adjacent, non-sequential
    for row in rows:
        assert reader.get_cell("D", row) == oracle[row]
    assert reader.backend_read_count == len(rows)
    reader.close()


def test_cache_transparency_random_access(tmp_path):
    table, oracle = _cache_table(tmp_path, nrows=48)
    desc = open_table(table, Mode.READ).desc
    rng = np.random.default_rng(5)
    pattern = [int(rng.integers(48)) for _ in range(300)]
    with_cache = PsegReader(table, desc, PsegOptions(prefetch_rows=8))
    without = PsegReader(table, desc, PsegOptions(prefetch_rows=1))
    for row in pattern:
        a = with_cache.get_cell("D", row)
        b = without.get_cell("D", row)
        assert a == b == oracle[row]
    assert with_cache.backend_read_count <= without.backend_read_count
    with_cache.close()
    without.close()


def test_window_respects_bytes_cap(tmp_path):
    table, oracle = _cache_table(tmp_path, nrows=64, cells=16)  # 128 B cells
    desc = open_table(table, Mode.READ).desc
    reader = PsegReader(
        table, desc, PsegOptions(prefetch_rows=1024, prefetch_bytes_cap=512)
    )
    for row in range(64):
        assert reader.get_cell("D", row) == oracle[row]
        cache = reader.cache("D")
        assert cache.window_rows <= 1024
        assert cache.window_rows * 128 <= 512
    reader.close()
