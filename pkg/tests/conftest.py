import json
import os
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from psmtable import (
    CellValue,
    ColumnDesc,
    ElementType,
    ShapePolicy,
    TableDesc,
    create_table,
)
from psmtable.comm import ENV_ADDR, ENV_RANK, ENV_SIZE, ENV_TIMEOUT
from psmtable.harness import free_port

TESTS_DIR = Path(__file__).parent

ALL_ETYPES = list(ElementType)


@dataclass
class Child:
    rank: int
    returncode: int
    stdout: str
    stderr: str

    def json(self) -> dict:
        for line in reversed(self.stdout.splitlines()):
            if line.strip().startswith("{"):
                return json.loads(line)
        raise AssertionError(
            f"rank {self.rank} printed no JSON "
            f"(stdout={self.stdout!r}, stderr={self.stderr!r})"
        )


def spawn_script(
    script: Path,
    args: list[str],
    size: int,
    ranks: list[int] | None = None,
    timeout_secs: float | None = None,
    extra_env: dict | None = None,
    wait: float = 120.0,
) -> list[Child]:
    """Launch one process per rank running a tests/ worker script."""
    addr = f"127.0.0.1:{free_port()}"
    procs = []
    for rank in ranks if ranks is not None else range(size):
        env = dict(os.environ)
        env[ENV_ADDR] = addr
        env[ENV_RANK] = str(rank)
        env[ENV_SIZE] = str(size)
        if timeout_secs is not None:
            env[ENV_TIMEOUT] = str(timeout_secs)
        env.update(extra_env or {})
        procs.append(
            (
                rank,
                subprocess.Popen(
                    [sys.executable, str(script), *args],
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    text=True,
                    env=env,
                ),
            )
        )
    out = []
    for rank, proc in procs:
        try:
            stdout, stderr = proc.communicate(timeout=wait)
        except subprocess.TimeoutExpired:
            proc.kill()
            stdout, stderr = proc.communicate()
        out.append(Child(rank, proc.returncode, stdout, stderr))
    return out


# -- random table corpus ---------------------------------------------------


def random_desc(rng: np.random.Generator, manager: str, max_cols=5, max_rows=64):
    """Random schema: <= max_cols columns, cells <= 4 KiB, all etypes drawn."""
    ncols = int(rng.integers(1, max_cols + 1))
    nrows = int(rng.integers(0, max_rows + 1))
    columns = []
    for i in range(ncols):
        etype = ALL_ETYPES[int(rng.integers(len(ALL_ETYPES)))]
        kind = rng.integers(3)
        if kind == 0:
            policy = ShapePolicy.scalar()
        else:
            ndim = int(rng.integers(1, 4))
            extents = []
            budget = 4096 // ElementType(etype).width
            for _ in range(ndim):
                e = int(rng.integers(1, min(9, max(2, budget + 1))))
                extents.append(e)
                budget = max(1, budget // e)
            policy = ShapePolicy.fixed(extents)
        columns.append(ColumnDesc(f"C{i}", etype, policy, manager))
    return TableDesc(columns, nrows)


def random_cell(rng: np.random.Generator, etype: ElementType, shape) -> CellValue:
    """Random bit patterns; bool restricted to valid 0/1 bytes."""
    n = int(np.prod(shape)) if shape else 1
    if etype is ElementType.BOOL:
        buf = rng.integers(0, 2, size=n, dtype=np.uint8).tobytes()
    else:
        buf = rng.bytes(n * etype.width)
    return CellValue.from_bytes(etype, tuple(shape), buf)


def write_random_table(rng, path, desc) -> dict:
    """Create, fill and finalize; returns the in-memory oracle map."""
    oracle = {}
    handle = create_table(desc, path)
    for col in desc.columns:
        shape = () if col.shape.kind.value == "scalar" else col.shape.extents
        for row in range(desc.nrows):
            cell = random_cell(rng, col.etype, shape)
            handle.put_cell(col.name, row, cell)
            oracle[(col.name, row)] = cell
    handle.finalize()
    return oracle


@pytest.fixture
def scratch_env(tmp_path, monkeypatch):
    """Point pseg scratch at a per-test directory and hand back its root."""
    scratch = tmp_path / "scratch"
    monkeypatch.setenv("PSM_SCRATCH_DIR", str(scratch))
    return scratch
