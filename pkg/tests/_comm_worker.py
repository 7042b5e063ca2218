"""Rank worker used by test_comm; prints one JSON line with results."""

import json
import sys
import time

import psmtable.comm as comm
from psmtable.errors import CommError, PayloadTooLarge, PeerLost, RendezvousTimeout


def main() -> int:
    scenario = sys.argv[1]
    out = {}
    try:
        c = comm.init_implicit()
    except (RendezvousTimeout, CommError) as exc:
        print(json.dumps({"error": type(exc).__name__, "msg": str(exc)}))
        return 0
    out["rank"] = c.rank
    out["size"] = c.size

    try:
        if scenario == "bcast_root0":
            payload = b"tbl.psegd" if c.rank == 0 else b""
            out["got"] = c.broadcast(0, payload).decode()
        elif scenario == "bcast_root_last":
            root = c.size - 1
            payload = b"from-last" if c.rank == root else b""
            out["got"] = c.broadcast(root, payload).decode()
        elif scenario == "gather_sleepy":
            # later ranks arrive first; ordering must still be by rank
            time.sleep(0.15 * (c.size - 1 - c.rank))
            parts = c.gather(0, f"r{c.rank}".encode())
            out["got"] = [p.decode() for p in parts]
        elif scenario == "gather_root_last":
            parts = c.gather(c.size - 1, f"r{c.rank}".encode())
            out["got"] = [p.decode() for p in parts]
        elif scenario == "barriers":
            for _ in range(5):
                c.barrier()
            out["got"] = "done"
        elif scenario == "attach":
            a = comm.attach(c)
            b = comm.attach(a)
            a.finalize()  # non-owning: must not tear anything down
            b.barrier()
            c.barrier()
            out["got"] = [a.owns_runtime, b.owns_runtime, c.owns_runtime]
        elif scenario == "skip_collective":
            # rank 1 walks away; everyone else should fail fast
            if c.rank == 1:
                out["got"] = "skipped"
            else:
                try:
                    c.gather(0, b"x")
                    out["got"] = "unexpected-success"
                except PeerLost:
                    out["got"] = "PeerLost"
        elif scenario == "too_large":
            try:
                c.broadcast(0, b"x" * (16 * 1024 * 1024 + 1))
                out["got"] = "unexpected-success"
            except PayloadTooLarge:
                out["got"] = "PayloadTooLarge"
            c.barrier()
        elif scenario == "p2p_ring":
            nxt = (c.rank + 1) % c.size
            prev = (c.rank - 1) % c.size
            c.send(nxt, f"hop-from-{c.rank}".encode() * 1000)
            got = c.recv(prev)
            out["got"] = got.decode()[: 20]
            c.barrier()
        else:
            raise SystemExit(f"unknown scenario {scenario}")
    except PeerLost as exc:
        out["error"] = "PeerLost"
        out["msg"] = str(exc)
    try:
        c.finalize()
    except CommError:
        pass
    print(json.dumps(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
