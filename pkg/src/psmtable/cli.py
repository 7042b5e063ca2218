"""mstool: generate, convert, split, verify, inspect and benchmark tables.

Exit codes: 0 success, 1 runtime or verification failure, 2 usage error.
Subcommands starting with an underscore are internal rank workers
spawned by convert/bench; they are not part of the CLI surface.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import zlib
from pathlib import Path

from . import comm as comm_mod
from . import msgen, pseg, tabledir
from .descriptor import ColumnDesc, TableDesc
from .dtypes import ElementType, ShapeKind, ShapePolicy, cell_bytes
from .errors import PsmError, UnsupportedShape
from .harness import BenchReport, block_partition, report_failures, spawn_ranks
from .pseg import PsegOptions
from .table import Mode, Role, create_table, open_table

BENCH_SEED = 0xB5EC


# -- helpers -------------------------------------------------------------


def _fail(msg: str, code: int) -> int:
    sys.stderr.write(f"mstool: {msg}\n")
    return code


def _retarget_desc(src, manager: str) -> TableDesc:
    """Rebind every column of an open table to `manager`.

    A tiled target needs fixed shapes, so variable columns take the
    effective shape observed in the source.
    """
    columns = []
    for col in src.desc.columns:
        policy = col.shape
        if manager == "tiled" and policy.kind is ShapeKind.VARIABLE:
            eff = src.effective_shape(col.name)
            if eff is None:
                raise UnsupportedShape(
                    f"column {col.name!r} has no written shape to fix for tiled"
                )
            policy = ShapePolicy.fixed(eff)
        columns.append(ColumnDesc(col.name, col.etype, policy, manager))
    return TableDesc(columns, src.nrows)


def _copy_rows(src, dst_writer, row_begin: int, row_end: int) -> None:
    """Copy rows [row_begin, row_end) across all columns, row by row."""
    for row in range(row_begin, row_end):
        for col in src.desc.columns:
            dst_writer.put_cell(col.name, row, src.get_cell(col.name, row))


def _schemas_match(a, b) -> str | None:
    if a.column_names() != b.column_names():
        return f"column names differ: {a.column_names()} vs {b.column_names()}"
    if a.nrows != b.nrows:
        return f"nrows differ: {a.nrows} vs {b.nrows}"
    for col in a.desc.columns:
        other = b.desc.column(col.name)
        if col.etype is not other.etype:
            return f"column {col.name!r} etype differs"
        if a.effective_shape(col.name) != b.effective_shape(col.name):
            return (
                f"column {col.name!r} shape differs: "
                f"{a.effective_shape(col.name)} vs {b.effective_shape(col.name)}"
            )
    return None


def _verify_tables(path_a: Path, path_b: Path) -> int:
    """Row-by-row bitwise comparison; prints MATCH or the first mismatch."""
    with open_table(path_a, Mode.READ) as a, open_table(path_b, Mode.READ) as b:
        problem = _schemas_match(a, b)
        if problem is not None:
            print(json.dumps({"mismatch": "schema", "detail": problem}))
            return 1
        for row in range(a.nrows):
            for col in a.column_names():
                if a.get_cell(col, row) != b.get_cell(col, row):
                    print(json.dumps({"column": col, "row": row}))
                    return 1
    print("MATCH")
    return 0


# -- gen -------------------------------------------------------------------


def cmd_gen(args) -> int:
    out = Path(args.out)
    if out.exists():
        return _fail(f"{out} already exists", 2)
    if args.rows < 0 or args.pols < 1 or args.chans < 1:
        return _fail("rows must be >= 0, pols/chans >= 1", 2)
    desc = msgen.ms_schema(args.rows, args.pols, args.chans, args.manager)
    shapes = {
        "TIME": (),
        "ANTENNA1": (),
        "ANTENNA2": (),
        "UVW": (3,),
        "FLAG": (args.pols, args.chans),
        "DATA": (args.pols, args.chans),
    }
    handle = create_table(desc, out)
    crcs = msgen.fill_table(handle, args.seed, shapes)
    handle.finalize()
    sizes = {
        name: cell_bytes(desc.column(name).etype, shapes[name]) for name in shapes
    }
    msgen.write_manifest(out, args.rows, crcs, sizes)
    print(
        json.dumps(
            {"rows": args.rows, "data_cell_bytes": args.pols * args.chans * 8}
        )
    )
    return 0


# -- convert -----------------------------------------------------------------


def cmd_convert(args) -> int:
    src_path, dst_path = Path(args.infile), Path(args.out)
    if not tabledir.is_table(src_path):
        return _fail(f"{src_path} is not a table", 2)
    if dst_path.exists():
        return _fail(f"{dst_path} already exists", 2)
    if args.procs < 1:
        return _fail("--procs must be >= 1", 2)
    if args.procs > 1 and args.manager != "pseg":
        return _fail("parallel conversion needs --manager pseg", 2)

    if args.procs == 1:
        with open_table(src_path, Mode.READ) as src:
            desc = _retarget_desc(src, args.manager)
            dst = create_table(desc, dst_path)
            _copy_rows(src, dst, 0, src.nrows)
            dst.finalize()
    else:
        worker = [
            "_convert-worker",
            "--in",
            str(src_path),
            "--out",
            str(dst_path),
        ]
        if args.aggregators:
            worker += ["--aggregators", str(args.aggregators)]
        results = spawn_ranks(worker, args.procs)
        if not report_failures(results):
            return 1
    return _verify_tables(dst_path, src_path)


def cmd_convert_worker(args) -> int:
    c = comm_mod.init_implicit()
    try:
        src = open_table(args.infile, Mode.READ)
        desc = _retarget_desc(src, "pseg")
        opts = PsegOptions(aggregators=args.aggregators or None)
        writer = pseg.bind(args.out, desc, comm=c, opts=opts)
        begin, end = block_partition(src.nrows, c.size, c.rank)
        _copy_rows(src, writer, begin, end)
        writer.finalize()
        src.finalize()
        print(json.dumps({"rank": c.rank, "rows": end - begin}))
    finally:
        c.finalize()
    return 0


# -- split ----------------------------------------------------------------


def cmd_split(args) -> int:
    src_path, dst_path = Path(args.infile), Path(args.out)
    if not tabledir.is_table(src_path):
        return _fail(f"{src_path} is not a table", 2)
    if dst_path.exists():
        return _fail(f"{dst_path} already exists", 2)
    with open_table(src_path, Mode.READ) as src:
        names = src.column_names()
        if "DATA" not in names:
            return _fail(f"{src_path} has no DATA column to split", 2)
        data_shape = src.effective_shape("DATA")
        if data_shape is None or len(data_shape) != 2:
            return _fail("DATA column is not a 2-d (pol, chan) array", 2)
        nchan = data_shape[1]
        c0, c1 = args.chan_begin, args.chan_end
        if not 0 <= c0 < c1 <= nchan:
            return _fail(f"channel range [{c0}, {c1}) not within [0, {nchan})", 2)

        sliced = {"DATA", "FLAG"} & set(names)
        columns = []
        for col in src.desc.columns:
            policy = col.shape
            if col.name in sliced:
                if policy.kind is ShapeKind.FIXED:
                    policy = ShapePolicy.fixed((policy.extents[0], c1 - c0))
            columns.append(ColumnDesc(col.name, col.etype, policy, col.manager))
        dst = create_table(TableDesc(columns, src.nrows), dst_path)
        # one row at a time on purpose: this is the access pattern the
        # prefetch cache exists for
        for row in range(src.nrows):
            for col in names:
                cell = src.get_cell(col, row)
                if col in sliced:
                    dst.put_cell(col, row, cell.data[:, c0:c1].copy())
                else:
                    dst.put_cell(col, row, cell)
        dst.finalize()
    return 0


# -- verify / inspect ----------------------------------------------------------


def cmd_verify(args) -> int:
    for path in (args.a, args.b):
        if not tabledir.is_table(Path(path)):
            return _fail(f"{path} is not a table", 2)
    return _verify_tables(Path(args.a), Path(args.b))


def cmd_inspect(args) -> int:
    path = Path(args.table)
    if not tabledir.is_table(path):
        return _fail(f"{path} is not a table", 2)
    desc = tabledir.read_desc(path)
    out = {
        "nrows": desc.nrows,
        "columns": [
            {
                "name": c.name,
                "etype": c.etype.value,
                "shape": _shape_token(c.shape),
                "manager": c.manager,
            }
            for c in desc.columns
        ],
    }
    if (path / pseg.DATA_DIR_NAME / "index").exists():
        out["index"] = [
            {
                "column_id": r.column_id,
                "column": desc.columns[r.column_id].name,
                "row_begin": r.row_begin,
                "row_count": r.row_count,
                "etype": r.etype.value,
                "shape": list(r.shape),
                "segment_id": r.segment_id,
                "offset": r.offset,
                "length": r.length,
                "crc32": r.crc32,
            }
            for r in pseg.read_index(path)
        ]
    if args.cell:
        column, row = args.cell[0], int(args.cell[1])
        with open_table(path, Mode.READ) as handle:
            cell = handle.get_cell(column, row)
        out["cell"] = {
            "column": column,
            "row": row,
            "etype": cell.etype.value,
            "shape": list(cell.shape),
            "data_hex": cell.to_bytes().hex(),
        }
    print(json.dumps(out, indent=2))
    return 0


def _shape_token(policy: ShapePolicy) -> str:
    if policy.kind is ShapeKind.SCALAR:
        return "-"
    if policy.kind is ShapeKind.FIXED:
        return ",".join(str(e) for e in policy.extents)
    return f"var({policy.ndim})"


# -- bench -----------------------------------------------------------------


def cmd_bench_write(args) -> int:
    out = Path(args.out)
    if out.exists():
        return _fail(f"{out} already exists", 2)
    if args.cell_bytes % 4 != 0 or args.cell_bytes < 4:
        return _fail("--cell-bytes must be a positive multiple of 4 (f32 cells)", 2)
    if args.procs < 1 or args.rows < 0:
        return _fail("--procs must be >= 1 and --rows >= 0", 2)

    worker = [
        "_bench-write-worker",
        "--out",
        str(out),
        "--rows",
        str(args.rows),
        "--cell-bytes",
        str(args.cell_bytes),
    ]
    if args.aggregators:
        worker += ["--aggregators", str(args.aggregators)]
    t0 = time.perf_counter()
    results = spawn_ranks(worker, args.procs)
    wall = time.perf_counter() - t0
    if not report_failures(results):
        return 1

    # verify the produced table is readable and matches the generator
    expected = 0
    nelem = args.cell_bytes // 4
    for row in range(args.rows):
        cell = msgen.synth_cell(BENCH_SEED, 0, row, ElementType.F32, (nelem,))
        expected = zlib.crc32(cell.to_bytes(), expected)
    with open_table(out, Mode.READ) as handle:
        actual = msgen.column_crc(handle, "DATA")
    if actual != expected:
        return _fail("written table does not match the generator", 1)
    msgen.write_manifest(
        out, args.rows, {"DATA": actual}, {"DATA": args.cell_bytes}
    )

    report = BenchReport(
        mode="write",
        procs=args.procs,
        rows=args.rows,
        cell_bytes=args.cell_bytes,
        wall_seconds=wall,
        per_rank_seconds=[r.json()["seconds"] for r in results],
    )
    _emit_report(report, args.report)
    return 0


def cmd_bench_write_worker(args) -> int:
    c = comm_mod.init_implicit()
    try:
        nelem = args.cell_bytes // 4
        desc = TableDesc(
            [ColumnDesc("DATA", ElementType.F32, ShapePolicy.fixed((nelem,)), "pseg")],
            args.rows,
        )
        begin, end = block_partition(args.rows, c.size, c.rank)
        cells = [
            msgen.synth_cell(BENCH_SEED, 0, row, ElementType.F32, (nelem,))
            for row in range(begin, end)
        ]
        opts = PsegOptions(aggregators=args.aggregators or None)
        t0 = time.perf_counter()
        writer = pseg.bind(args.out, desc, comm=c, opts=opts)
        for row, cell in zip(range(begin, end), cells):
            writer.put_cell("DATA", row, cell)
        writer.finalize()
        seconds = time.perf_counter() - t0
        print(json.dumps({"rank": c.rank, "seconds": seconds}))
    finally:
        c.finalize()
    return 0


def cmd_bench_read(args) -> int:
    table = Path(args.infile)
    if not tabledir.is_table(table):
        return _fail(f"{table} is not a table", 2)
    try:
        manifest = msgen.read_manifest(table)
    except PsmError:
        return _fail(f"{table} has no checksum manifest (not generated here?)", 2)
    if args.procs < 1:
        return _fail("--procs must be >= 1", 2)
    column, meta = max(
        manifest["columns"].items(), key=lambda kv: kv[1]["cell_bytes"]
    )

    worker = [
        "_bench-read-worker",
        "--in",
        str(table),
        "--column",
        column,
        "--prefetch-rows",
        str(args.prefetch_rows),
    ]
    t0 = time.perf_counter()
    results = spawn_ranks(worker, args.procs)
    wall = time.perf_counter() - t0
    if not report_failures(results):
        return 1
    ranks = [r.json() for r in results]
    for r in ranks:
        if r["crc32"] != manifest["columns"][column]["crc32"]:
            return _fail(f"rank {r['rank']} read a different {column} column", 1)

    report = BenchReport(
        mode="read",
        procs=args.procs,
        rows=manifest["nrows"],
        cell_bytes=meta["cell_bytes"],
        wall_seconds=wall,
        per_rank_seconds=[r["seconds"] for r in ranks],
    )
    _emit_report(
        report,
        args.report,
        extra={
            "column": column,
            "per_rank_backend_reads": [r["backend_reads"] for r in ranks],
        },
    )
    return 0


def cmd_bench_read_worker(args) -> int:
    import os

    rank = int(os.environ.get(comm_mod.ENV_RANK, "0"))
    opts = PsegOptions(prefetch_rows=args.prefetch_rows)
    t0 = time.perf_counter()
    with open_table(args.infile, Mode.READ, pseg_options=opts) as handle:
        crc = msgen.column_crc(handle, args.column)
        reads = (
            handle.pseg_reader.backend_read_count
            if handle.pseg_reader is not None
            else handle.nrows
        )
    seconds = time.perf_counter() - t0
    print(
        json.dumps(
            {"rank": rank, "seconds": seconds, "crc32": crc, "backend_reads": reads}
        )
    )
    return 0


def _emit_report(report: BenchReport, path: str | None, extra: dict | None = None):
    text = report.to_json(extra)
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mstool", description="MS-like table toolbox"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a seeded MS-like table")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--pols", type=int, default=2)
    p.add_argument("--chans", type=int, default=2048)
    p.add_argument("--out", required=True)
    p.add_argument("--manager", choices=["tiled", "pseg"], default="tiled")
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert", help="copy a table onto another manager")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manager", choices=["tiled", "pseg"], required=True)
    p.add_argument("--procs", type=int, default=1)
    p.add_argument("--aggregators", type=int, default=0)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("split", help="extract a channel range of DATA/FLAG")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chan-begin", type=int, required=True)
    p.add_argument("--chan-end", type=int, required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("verify", help="bitwise row-by-row table comparison")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", help="dump descriptor and index as JSON")
    p.add_argument("--table", required=True)
    p.add_argument("--cell", nargs=2, metavar=("COLUMN", "ROW"))
    p.set_defaults(func=cmd_inspect)

    bench = sub.add_parser("bench", help="write/read throughput measurements")
    bsub = bench.add_subparsers(dest="bench_mode", required=True)

    p = bsub.add_parser("write", help="parallel write benchmark")
    p.add_argument("--procs", type=int, required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cell-bytes", type=int, required=True)
    p.add_argument("--aggregators", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench_write)

    p = bsub.add_parser("read", help="parallel read benchmark")
    p.add_argument("--procs", type=int, required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--report")
    p.add_argument("--prefetch-rows", type=int, default=1024)
    p.set_defaults(func=cmd_bench_read)

    # internal rank workers
    p = sub.add_parser("_convert-worker")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--aggregators", type=int, default=0)
    p.set_defaults(func=cmd_convert_worker)

    p = sub.add_parser("_bench-write-worker")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cell-bytes", type=int, required=True)
    p.add_argument("--aggregators", type=int, default=0)
    p.set_defaults(func=cmd_bench_write_worker)

    p = sub.add_parser("_bench-read-worker")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--prefetch-rows", type=int, default=1024)
    p.set_defaults(func=cmd_bench_read_worker)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PsmError as exc:
        return _fail(f"{exc.name}: {exc}", 1)
    except OSError as exc:
        return _fail(str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
