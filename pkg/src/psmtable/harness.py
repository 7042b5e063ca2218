"""Child-process orchestration for the CLI's parallel subcommands.

The converter and benchmarks spawn their own rank processes (no
external launcher); rank/size/rendezvous travel through the PSM_COMM_*
environment variables.
"""

from __future__ import annotations

import json
import math
import os
import socket
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field

from . import comm as comm_mod

SPAWN_TIMEOUT = 300.0


def block_partition(nrows: int, procs: int, rank: int) -> tuple[int, int]:
    """Rows [rank*ceil(N/P), min((rank+1)*ceil(N/P), N)); may be empty."""
    chunk = math.ceil(nrows / procs) if procs else 0
    begin = min(rank * chunk, nrows)
    end = min((rank + 1) * chunk, nrows)
    return begin, end


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


@dataclass
class RankResult:
    rank: int
    returncode: int
    stdout: str
    stderr: str

    def json(self) -> dict:
        """Last JSON line a worker printed to stdout."""
        for line in reversed(self.stdout.splitlines()):
            line = line.strip()
            if line.startswith("{"):
                return json.loads(line)
        raise ValueError(f"rank {self.rank} printed no JSON result")


def spawn_ranks(
    worker_args: list[str], procs: int, extra_env: dict[str, str] | None = None
) -> list[RankResult]:
    """Run ``python -m psmtable.cli <worker_args>`` as ranks 0..procs-1.

    All children are always reaped; a straggler past the timeout is
    killed and reported with a synthetic negative exit code.
    """
    host = "127.0.0.1"
    addr = f"{host}:{free_port(host)}"
    children = []
    for rank in range(procs):
        env = dict(os.environ)
        env[comm_mod.ENV_ADDR] = addr
        env[comm_mod.ENV_RANK] = str(rank)
        env[comm_mod.ENV_SIZE] = str(procs)
        env.update(extra_env or {})
        children.append(
            subprocess.Popen(
                [sys.executable, "-m", "psmtable.cli", *worker_args],
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                env=env,
            )
        )
    results = []
    deadline = time.monotonic() + SPAWN_TIMEOUT
    for rank, child in enumerate(children):
        try:
            out, err = child.communicate(timeout=max(1.0, deadline - time.monotonic()))
        except subprocess.TimeoutExpired:
            child.kill()
            out, err = child.communicate()
        results.append(RankResult(rank, child.returncode, out, err))
    return results


def report_failures(results: list[RankResult]) -> bool:
    ok = True
    for res in results:
        if res.returncode != 0:
            ok = False
            sys.stderr.write(f"rank {res.rank} exited {res.returncode}\n")
            if res.stderr:
                sys.stderr.write(res.stderr)
    return ok


@dataclass
class BenchReport:
    mode: str
    procs: int
    rows: int
    cell_bytes: int
    wall_seconds: float
    throughput_mb_s: float = 0.0
    per_rank_seconds: list[float] = field(default_factory=list)

    def __post_init__(self):
        # the report must satisfy this identity exactly
        self.throughput_mb_s = (
            self.rows * self.cell_bytes / self.wall_seconds / 2**20
            if self.wall_seconds > 0
            else 0.0
        )

    def to_json(self, extra: dict | None = None) -> str:
        payload = asdict(self)
        payload.update(extra or {})
        return json.dumps(payload, indent=2) + "\n"
