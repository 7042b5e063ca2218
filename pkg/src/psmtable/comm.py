"""Multi-process communicator over local sockets.

Rank 0 is the coordinator of a star topology: every other rank holds one
control connection to it and the collectives (broadcast, gather,
barrier) are relayed through it. Alongside the control plane, each rank
runs its own listener so bulk payloads can travel point-to-point
between arbitrary rank pairs without passing through rank 0.

Rendezvous is via environment variables::

    PSM_COMM_ADDR          host:port of the rank-0 listener
    PSM_COMM_RANK          decimal rank
    PSM_COMM_SIZE          decimal process count
    PSM_COMM_TIMEOUT_SECS  optional, default 30

With none of them set, init degenerates to a serial {rank 0, size 1}
communicator with no sockets.

Wire format: u32 little-endian length prefix covering the rest of the
frame, u8 message tag, payload. Collective frames sent to the
coordinator carry the u32 root rank ahead of the payload so root
disagreement is detected rather than silently mismatched.
"""

from __future__ import annotations

import json
import os
import socket
import struct
import time
from collections import deque

from .errors import (
    CommError,
    EnvMalformed,
    PayloadTooLarge,
    PeerLost,
    RendezvousTimeout,
)

ENV_ADDR = "PSM_COMM_ADDR"
ENV_RANK = "PSM_COMM_RANK"
ENV_SIZE = "PSM_COMM_SIZE"
ENV_TIMEOUT = "PSM_COMM_TIMEOUT_SECS"

HELLO, BCAST, GATHER, BARRIER, DATA, BYE = 1, 2, 3, 4, 5, 6
DEFAULT_TIMEOUT = 30.0
COLLECTIVE_PAYLOAD_CAP = 16 * 1024 * 1024

_LEN = struct.Struct("<I")
_U32 = struct.Struct("<I")

# at most one owning communicator may be live per process
_owner: "Communicator | None" = None


def _send_frame(sock: socket.socket, tag: int, payload: bytes, deadline: float):
    frame = _LEN.pack(1 + len(payload)) + bytes([tag]) + payload
    sock.settimeout(_remaining(deadline))
    try:
        sock.sendall(frame)
    except (OSError, socket.timeout) as exc:
        raise PeerLost(f"send failed: {exc}") from exc


def _recv_exact(sock: socket.socket, n: int, deadline: float) -> bytes:
    chunks = []
    got = 0
    while got < n:
        sock.settimeout(_remaining(deadline))
        try:
            chunk = sock.recv(min(n - got, 1 << 20))
        except socket.timeout:
            raise PeerLost("timed out waiting for peer") from None
        except OSError as exc:
            raise PeerLost(f"recv failed: {exc}") from exc
        if not chunk:
            raise PeerLost("peer closed the connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _recv_frame(sock: socket.socket, deadline: float) -> tuple[int, bytes]:
    (length,) = _LEN.unpack(_recv_exact(sock, 4, deadline))
    if length < 1:
        raise PeerLost("malformed frame")
    body = _recv_exact(sock, length, deadline)
    return body[0], body[1:]


def _remaining(deadline: float) -> float:
    left = deadline - time.monotonic()
    if left <= 0:
        raise PeerLost("timed out waiting for peer")
    return left


def _parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise EnvMalformed(f"{ENV_ADDR} must be host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise EnvMalformed(f"bad port in {text!r}") from None


class _Transport:
    """Sockets shared by an owning communicator and its attachments."""

    def __init__(self, rank: int, size: int, timeout: float):
        self.rank = rank
        self.size = size
        self.timeout = timeout
        self.closed = False
        self.listener: socket.socket | None = None
        self.coord: socket.socket | None = None  # workers only
        self.ctrl: dict[int, socket.socket] = {}  # rank 0 only
        self.addrs: list[str] = []
        self.data_in: dict[int, socket.socket] = {}
        self.data_out: dict[int, socket.socket] = {}
        self.self_queue: deque[bytes] = deque()

    def close(self):
        if self.closed:
            return
        self.closed = True
        for sock in (
            [self.coord, self.listener]
            + list(self.ctrl.values())
            + list(self.data_in.values())
            + list(self.data_out.values())
        ):
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass


class Communicator:
    """Process-group context: rank, size and blocking collectives.

    Confined to one thread. ``owns_runtime`` is True for the
    communicator that created the transport; finalize tears the
    transport down only through an owning handle.
    """

    def __init__(self, transport: _Transport, owns_runtime: bool):
        self._t = transport
        self.owns_runtime = owns_runtime

    @property
    def rank(self) -> int:
        return self._t.rank

    @property
    def size(self) -> int:
        return self._t.size

    @property
    def timeout(self) -> float:
        return self._t.timeout

    # -- lifecycle -----------------------------------------------------

    def attach(self) -> "Communicator":
        """Second handle on the same transport; never tears it down."""
        if self._t.closed:
            raise CommError("communicator is finalized")
        return Communicator(self._t, owns_runtime=False)

    def finalize(self) -> None:
        global _owner
        if not self.owns_runtime or self._t.closed:
            return
        t = self._t
        deadline = time.monotonic() + t.timeout
        try:
            if t.coord is not None:
                _send_frame(t.coord, BYE, b"", deadline)
            for rank in sorted(t.ctrl):
                try:
                    tag, _ = _recv_frame(t.ctrl[rank], deadline)
                    if tag != BYE:
                        break
                except PeerLost:
                    break
        except PeerLost:
            pass
        finally:
            t.close()
            if _owner is self:
                _owner = None

    # -- collectives ---------------------------------------------------

    def broadcast(self, root: int, payload: bytes) -> bytes:
        self._check_collective(root)
        payload = bytes(payload)
        if len(payload) > COLLECTIVE_PAYLOAD_CAP:
            raise PayloadTooLarge(f"{len(payload)} bytes > 16 MiB broadcast cap")
        if self.size == 1:
            return payload
        deadline = self._deadline()
        t = self._t
        if self.rank == 0:
            parts = self._collect(BCAST, root, payload, deadline)
            result = parts[root]
            for rank in range(1, self.size):
                _send_frame(t.ctrl[rank], BCAST, result, deadline)
            return result
        mine = payload if self.rank == root else b""
        _send_frame(t.coord, BCAST, _U32.pack(root) + mine, deadline)
        return self._reply(BCAST, deadline)

    def gather(self, root: int, payload: bytes) -> list[bytes]:
        self._check_collective(root)
        payload = bytes(payload)
        if len(payload) > COLLECTIVE_PAYLOAD_CAP:
            raise PayloadTooLarge(f"{len(payload)} bytes > 16 MiB gather cap")
        if self.size == 1:
            return [payload]
        deadline = self._deadline()
        t = self._t
        if self.rank == 0:
            parts = self._collect(GATHER, root, payload, deadline)
            packed = b"".join(_U32.pack(len(p)) + p for p in parts)
            for rank in range(1, self.size):
                _send_frame(t.ctrl[rank], GATHER, packed if rank == root else b"", deadline)
            return parts if root == 0 else []
        _send_frame(t.coord, GATHER, _U32.pack(root) + payload, deadline)
        reply = self._reply(GATHER, deadline)
        if self.rank != root:
            return []
        parts, pos = [], 0
        for _ in range(self.size):
            (n,) = _U32.unpack_from(reply, pos)
            pos += 4
            parts.append(reply[pos : pos + n])
            pos += n
        return parts

    def barrier(self) -> None:
        self._check_collective(0)
        if self.size == 1:
            return
        deadline = self._deadline()
        t = self._t
        if self.rank == 0:
            self._collect(BARRIER, 0, b"", deadline)
            for rank in range(1, self.size):
                _send_frame(t.ctrl[rank], BARRIER, b"", deadline)
            return
        _send_frame(t.coord, BARRIER, _U32.pack(0), deadline)
        self._reply(BARRIER, deadline)

    # -- point-to-point (bulk data, no size cap) -------------------------

    def send(self, dst: int, payload: bytes) -> None:
        self._check_rank(dst)
        if dst == self.rank:
            self._t.self_queue.append(bytes(payload))
            return
        deadline = self._deadline()
        sock = self._data_conn(dst, deadline)
        _send_frame(sock, DATA, payload, deadline)

    def recv(self, src: int) -> bytes:
        self._check_rank(src)
        t = self._t
        if src == self.rank:
            if not t.self_queue:
                raise PeerLost("no self-addressed payload pending")
            return t.self_queue.popleft()
        deadline = self._deadline()
        while src not in t.data_in:
            self._accept_data(deadline)
        tag, payload = _recv_frame(t.data_in[src], deadline)
        if tag != DATA:
            raise PeerLost(f"expected DATA from rank {src}, got tag {tag}")
        return payload

    # -- internals -------------------------------------------------------

    def _deadline(self) -> float:
        return time.monotonic() + self._t.timeout

    def _check_rank(self, rank: int):
        if not 0 <= rank < self.size:
            raise CommError(f"rank {rank} not in [0, {self.size})")

    def _check_collective(self, root: int):
        if self._t.closed:
            raise CommError("communicator is finalized")
        self._check_rank(root)

    def _collect(
        self, tag: int, root: int, own: bytes, deadline: float
    ) -> list[bytes]:
        """Coordinator side: one frame from every worker, tag and root checked."""
        parts: list[bytes] = [own] + [b""] * (self.size - 1)
        for rank in range(1, self.size):
            got_tag, body = _recv_frame(self._t.ctrl[rank], deadline)
            if got_tag != tag:
                raise PeerLost(
                    f"rank {rank} entered collective {got_tag}, expected {tag}"
                )
            (peer_root,) = _U32.unpack_from(body, 0)
            if peer_root != root:
                raise PeerLost(f"rank {rank} used root {peer_root}, expected {root}")
            parts[rank] = body[4:]
        return parts

    def _reply(self, tag: int, deadline: float) -> bytes:
        got_tag, payload = _recv_frame(self._t.coord, deadline)
        if got_tag != tag:
            raise PeerLost(f"expected reply tag {tag}, got {got_tag}")
        return payload

    def _data_conn(self, dst: int, deadline: float) -> socket.socket:
        t = self._t
        sock = t.data_out.get(dst)
        if sock is not None:
            return sock
        host, port = _parse_addr(t.addrs[dst])
        sock = socket.create_connection((host, port), timeout=_remaining(deadline))
        hello = _U32.pack(self.rank) + bytes([1]) + struct.pack("<H", 0)
        _send_frame(sock, HELLO, hello, deadline)
        t.data_out[dst] = sock
        return sock

    def _accept_data(self, deadline: float) -> None:
        t = self._t
        t.listener.settimeout(_remaining(deadline))
        try:
            conn, _ = t.listener.accept()
        except socket.timeout:
            raise PeerLost("timed out waiting for data connection") from None
        tag, body = _recv_frame(conn, deadline)
        if tag != HELLO or len(body) < 7:
            raise PeerLost("malformed data-channel hello")
        (rank,) = _U32.unpack_from(body, 0)
        channel = body[4]
        if channel != 1:
            raise PeerLost(f"unexpected control hello from rank {rank}")
        t.data_in[rank] = conn


def init_implicit(timeout: float | None = None) -> Communicator:
    """Build a communicator from the rendezvous environment.

    Without the env vars this returns a serial {rank 0, size 1}
    communicator, so code written for the multi-process case runs
    unchanged in a plain single process.
    """
    global _owner
    if _owner is not None and not _owner._t.closed:
        raise CommError("an owning communicator is already active in this process")

    addr = os.environ.get(ENV_ADDR)
    rank_s = os.environ.get(ENV_RANK)
    size_s = os.environ.get(ENV_SIZE)
    if timeout is None:
        timeout_s = os.environ.get(ENV_TIMEOUT)
        try:
            timeout = float(timeout_s) if timeout_s else DEFAULT_TIMEOUT
        except ValueError:
            raise EnvMalformed(f"{ENV_TIMEOUT}={timeout_s!r} is not a number") from None

    if addr is None and rank_s is None and size_s is None:
        comm = Communicator(_Transport(0, 1, timeout), owns_runtime=True)
        _owner = comm
        return comm
    if addr is None or rank_s is None or size_s is None:
        raise EnvMalformed(
            f"{ENV_ADDR}, {ENV_RANK} and {ENV_SIZE} must be set together"
        )
    try:
        rank, size = int(rank_s), int(size_s)
    except ValueError:
        raise EnvMalformed("rank and size must be decimal integers") from None
    if size < 1 or not 0 <= rank < size:
        raise EnvMalformed(f"rank {rank} not in [0, size {size})")

    transport = _Transport(rank, size, timeout)
    if size > 1:
        try:
            _rendezvous(transport, addr)
        except PeerLost as exc:
            transport.close()
            raise RendezvousTimeout(str(exc)) from None
        except (OSError, socket.timeout) as exc:
            transport.close()
            raise RendezvousTimeout(f"rendezvous failed: {exc}") from None
    comm = Communicator(transport, owns_runtime=True)
    _owner = comm
    return comm


def attach(existing: Communicator) -> Communicator:
    """Share an already-initialized runtime; never finalizes it."""
    return existing.attach()


def serial_local(timeout: float = DEFAULT_TIMEOUT) -> Communicator:
    """Size-1 communicator with no transport, ignoring the rendezvous env.

    Used for in-process serial binds; does not count as the process's
    owning communicator since there is no runtime to own.
    """
    return Communicator(_Transport(0, 1, timeout), owns_runtime=False)


def _rendezvous(t: _Transport, addr: str) -> None:
    host, port = _parse_addr(addr)
    deadline = time.monotonic() + t.timeout

    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    if t.rank == 0:
        listener.bind((host, port))
        listener.listen(128)
        t.listener = listener
        addrs = [""] * t.size
        addrs[0] = f"{host}:{port}"
        seen = 0
        while seen < t.size - 1:
            listener.settimeout(_remaining(deadline))
            conn, _ = listener.accept()
            tag, body = _recv_frame(conn, deadline)
            if tag != HELLO or len(body) < 7:
                raise PeerLost("malformed hello")
            (rank,) = _U32.unpack_from(body, 0)
            channel = body[4]
            (alen,) = struct.unpack_from("<H", body, 5)
            if channel != 0:
                raise PeerLost("data hello before rendezvous completed")
            if not 1 <= rank < t.size or t.ctrl.get(rank) is not None:
                raise EnvMalformed(f"bad or duplicate rank {rank} in hello")
            t.ctrl[rank] = conn
            addrs[rank] = body[7 : 7 + alen].decode("ascii")
            seen += 1
        t.addrs = addrs
        table = json.dumps(addrs).encode()
        for rank in range(1, t.size):
            _send_frame(t.ctrl[rank], BCAST, table, deadline)
    else:
        listener.bind((host, 0))
        listener.listen(128)
        t.listener = listener
        my_addr = f"{host}:{listener.getsockname()[1]}".encode("ascii")
        while True:
            try:
                t.coord = socket.create_connection(
                    (host, port), timeout=_remaining(deadline)
                )
                break
            except ConnectionRefusedError:
                time.sleep(0.02)
        hello = (
            _U32.pack(t.rank) + bytes([0]) + struct.pack("<H", len(my_addr)) + my_addr
        )
        _send_frame(t.coord, HELLO, hello, deadline)
        tag, table = _recv_frame(t.coord, deadline)
        if tag != BCAST:
            raise PeerLost(f"expected address table, got tag {tag}")
        t.addrs = json.loads(table.decode())
