"""Transport implementations: an in-process threaded simulator and TCP sockets.

Both deliver into a per-rank :class:`Mailbox` of FIFO queues keyed by
``(src, phase)`` and share the completion logic in :class:`MailboxTransport`;
they differ only in how a message reaches the destination mailbox.
"""
from __future__ import annotations

import collections
import logging
import random
import socket
import threading
import time
from typing import Callable, Iterable, Optional

import numpy as np

from .comm import (
    HEADER_SIZE,
    Handle,
    Message,
    Transport,
    decode_header,
    decode_payload,
    encode_message,
)
from .errors import CommError, FramingError, RankFailure, StartupError
from .grid import BYTES_PER_POINT, COMPLEX

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0

COMPLETION_ORDERS = (None, "reverse", "shuffle")


class Aborted(CommError):
    """Raised in surviving ranks after another rank failed."""


class Mailbox:
    """Unbounded per-rank inbox."""

    def __init__(self):
        self.cond = threading.Condition()
        self.queues: dict[tuple[int, int], collections.deque] = collections.defaultdict(collections.deque)
        self.error: Optional[BaseException] = None

    def put(self, src: int, phase: int, payload: np.ndarray) -> None:
        with self.cond:
            self.queues[(src, phase)].append(payload)
            self.cond.notify_all()

    def fail(self, exc: BaseException) -> None:
        with self.cond:
            if self.error is None:
                self.error = exc
            self.cond.notify_all()


class MailboxTransport(Transport):
    """Completion logic shared by both transports.

    ``completion_order`` lets tests force the order in which :meth:`wait_some`
    reports receives: ``"reverse"`` completes the last pending handle first,
    ``"shuffle"`` picks a seeded random pending handle each time.
    """

    def __init__(self, rank, size, mailbox=None, completion_order=None, timeout=DEFAULT_TIMEOUT, seed=0):
        if completion_order not in COMPLETION_ORDERS:
            raise ValueError(f"completion_order must be one of {COMPLETION_ORDERS}")
        self.rank = rank
        self.size = size
        self.mailbox = mailbox or Mailbox()
        self.completion_order = completion_order
        self.timeout = timeout
        self._rng = random.Random(seed * 1_000_003 + rank)
        self._sent = collections.Counter()
        self.message_count = 0

    # -- subclass hook
    def _deliver(self, msg: Message) -> None:
        raise NotImplementedError

    def abort(self, exc: BaseException) -> None:
        self.mailbox.fail(exc)

    def isend(self, msg: Message) -> Handle:
        if msg.src != self.rank:
            raise CommError(f"rank {self.rank} cannot send as rank {msg.src}")
        if not 0 <= msg.dst < self.size:
            raise CommError("destination out of range", msg.dst)
        payload = np.array(msg.payload, dtype=COMPLEX, copy=True).reshape(-1)
        nbytes = payload.size * BYTES_PER_POINT
        if nbytes:
            self._sent[(msg.phase, msg.dst)] += nbytes
        self.message_count += 1
        self._deliver(Message(msg.phase, msg.src, msg.dst, payload))
        return Handle("send", msg.dst, msg.phase, done=True, nbytes=nbytes)

    def irecv(self, peer: int, phase: int, out: np.ndarray) -> Handle:
        if not 0 <= peer < self.size:
            raise CommError("source out of range", peer)
        return Handle("recv", peer, phase, out=out, nbytes=out.size * BYTES_PER_POINT)

    def bytes_sent(self, phases: Iterable[int] | None = None) -> dict[int, int]:
        phases = None if phases is None else set(phases)
        out = collections.Counter()
        for (phase, dst), n in self._sent.items():
            if phases is None or phase in phases:
                out[dst] += n
        return dict(out)

    def reset_counters(self) -> None:
        self._sent.clear()
        self.message_count = 0

    # -- completion, called with the mailbox lock held
    def _ready(self, h: Handle) -> bool:
        return h.done or bool(self.mailbox.queues.get((h.peer, h.phase)))

    def _complete(self, h: Handle) -> None:
        if h.done:
            return
        payload = self.mailbox.queues[(h.peer, h.phase)].popleft()
        if payload.size != h.out.size:
            raise CommError(
                f"phase {h.phase}: expected {h.out.size} samples, got {payload.size}", h.peer
            )
        h.out[...] = payload
        h.done = True

    def _wait(self, deadline):
        mb = self.mailbox
        if mb.error is not None:
            if isinstance(mb.error, CommError):
                raise mb.error
            raise CommError(f"transport aborted: {mb.error!r}") from mb.error
        remaining = None if deadline is None else deadline - time.monotonic()
        if remaining is not None and remaining <= 0:
            raise CommError(f"rank {self.rank}: timed out waiting for messages")
        mb.cond.wait(remaining)

    def _deadline(self):
        return None if self.timeout is None else time.monotonic() + self.timeout

    def wait_all(self, handles) -> None:
        handles = list(handles)
        deadline = self._deadline()
        with self.mailbox.cond:
            while True:
                pending = False
                for h in handles:
                    if not h.done:
                        if self._ready(h):
                            self._complete(h)
                        else:
                            pending = True
                if not pending:
                    return
                self._wait(deadline)

    def wait_some(self, handles) -> list[int]:
        deadline = self._deadline()
        with self.mailbox.cond:
            pending = [i for i, h in enumerate(handles) if not h.done]
            if not pending:
                return []
            if self.completion_order is None:
                while True:
                    ready = [i for i in pending if self._ready(handles[i])]
                    if ready:
                        for i in ready:
                            self._complete(handles[i])
                        return ready
                    self._wait(deadline)
            if self.completion_order == "reverse":
                target = pending[-1]
            else:
                target = self._rng.choice(pending)
            while not self._ready(handles[target]):
                self._wait(deadline)
            self._complete(handles[target])
            return [target]


class ThreadedWorld:
    """Shared state for ``size`` in-process ranks."""

    def __init__(self, size, completion_order=None, timeout=DEFAULT_TIMEOUT, seed=0):
        if size < 1:
            raise ValueError("need at least one rank")
        self.size = size
        self.mailboxes = [Mailbox() for _ in range(size)]
        self.transports = [
            ThreadedTransport(self, r, completion_order=completion_order, timeout=timeout, seed=seed)
            for r in range(size)
        ]

    def abort(self, exc: BaseException) -> None:
        for mb in self.mailboxes:
            mb.fail(exc)


class ThreadedTransport(MailboxTransport):
    def __init__(self, world: ThreadedWorld, rank: int, **kw):
        super().__init__(rank, world.size, world.mailboxes[rank], **kw)
        self.world = world

    def _deliver(self, msg: Message) -> None:
        self.world.mailboxes[msg.dst].put(msg.src, msg.phase, msg.payload)

    def abort(self, exc):
        self.world.abort(exc)


def run_ranks(transports: dict[int, Transport], rank_main: Callable) -> dict[int, object]:
    """Run ``rank_main(transport)`` on one thread per entry; return results by rank.

    If any rank raises, every transport is aborted so blocked peers wake up,
    and a :class:`RankFailure` carrying the root-cause exceptions is raised.
    """
    results, failures = {}, {}
    lock = threading.Lock()

    def worker(rank, tr):
        try:
            res = rank_main(tr)
        except BaseException as exc:  # noqa: BLE001 - reported via RankFailure
            with lock:
                failures[rank] = exc
            abort = Aborted(f"aborted because rank {rank} failed")
            for t in transports.values():
                if hasattr(t, "abort"):
                    t.abort(abort)
        else:
            with lock:
                results[rank] = res

    if len(transports) == 1:
        (rank, tr), = transports.items()
        worker(rank, tr)
    else:
        threads = [
            threading.Thread(target=worker, args=(r, t), name=f"rank-{r}", daemon=True)
            for r, t in transports.items()
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if failures:
        # secondary failures are just the abort propagating
        roots = {r: e for r, e in failures.items() if not isinstance(e, Aborted)}
        raise RankFailure(roots or failures)
    return results


def threaded_spawn(nprocs: int, rank_main: Callable, completion_order=None, timeout=DEFAULT_TIMEOUT, seed=0) -> list:
    """Run ``rank_main(transport)`` on ``nprocs`` simulated ranks; results in rank order."""
    if nprocs < 1:
        raise ValueError("need at least one rank")
    world = ThreadedWorld(nprocs, completion_order=completion_order, timeout=timeout, seed=seed)
    res = run_ranks(dict(enumerate(world.transports)), rank_main)
    return [res[r] for r in range(nprocs)]


# ---------------------------------------------------------------------------
# sockets


def read_ranks_file(path) -> dict[int, tuple[str, int]]:
    """Parse ``rank host:port`` lines (``#`` starts a comment)."""
    table = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rank_s, addr = line.split()
                host, port_s = addr.rsplit(":", 1)
                table[int(rank_s)] = (host, int(port_s))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'rank host:port', got {line!r}") from None
    if sorted(table) != list(range(len(table))):
        raise ValueError(f"{path}: ranks must be exactly 0..{len(table) - 1}")
    return table


def _recv_exact(sock, n) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            break
        buf.extend(chunk)
    return bytes(buf)


class SocketTransport(MailboxTransport):
    """TCP transport; one lazily opened outgoing connection per peer.

    Frames are a 20-byte little-endian header ``(phase u32, src u32, dst u32,
    payload_bytes u64)`` followed by interleaved little-endian float64
    re/im pairs.
    """

    def __init__(self, rank, addresses, listener=None, connect_timeout=10.0, **kw):
        super().__init__(rank, len(addresses), **kw)
        if sorted(addresses) != list(range(len(addresses))) or rank not in addresses:
            raise ValueError("address table must cover ranks 0..n-1 including this rank")
        self.addresses = dict(addresses)
        self.connect_timeout = connect_timeout
        self._conns: dict[int, socket.socket] = {}
        self._conn_locks = collections.defaultdict(threading.Lock)
        self._closed = threading.Event()
        self._readers: list[socket.socket] = []
        if listener is None:
            host, port = self.addresses[rank]
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                listener.bind((host, port))
            except OSError as exc:
                listener.close()
                raise StartupError(f"rank {rank} cannot bind {host}:{port}: {exc}") from exc
            listener.listen(max(16, self.size))
        self.listener = listener
        self._acceptor = threading.Thread(target=self._accept_loop, name=f"accept-{rank}", daemon=True)
        self._acceptor.start()

    def _accept_loop(self):
        while not self._closed.is_set():
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._readers.append(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()

    def _read_loop(self, conn):
        try:
            while True:
                raw = _recv_exact(conn, HEADER_SIZE)
                if not raw:
                    return
                if len(raw) < HEADER_SIZE:
                    raise FramingError(f"truncated header ({len(raw)} of {HEADER_SIZE} bytes)")
                phase, src, dst, nbytes = decode_header(raw)
                if dst != self.rank:
                    raise FramingError(f"frame addressed to rank {dst} arrived at rank {self.rank}", src)
                if not 0 <= src < self.size:
                    raise FramingError(f"frame from unknown rank {src}")
                body = _recv_exact(conn, nbytes)
                if len(body) != nbytes:
                    raise FramingError(
                        f"payload truncated: header announced {nbytes} bytes, got {len(body)}", src
                    )
                self.mailbox.put(src, phase, decode_payload(body))
        except FramingError as exc:
            log.error("rank %d: %s", self.rank, exc)
            self.mailbox.fail(exc)
        except OSError as exc:
            if not self._closed.is_set():
                self.mailbox.fail(CommError(f"connection lost: {exc}"))
        finally:
            conn.close()

    def _connection(self, peer) -> socket.socket:
        conn = self._conns.get(peer)
        if conn is not None:
            return conn
        host, port = self.addresses[peer]
        deadline = time.monotonic() + self.connect_timeout
        while True:
            try:
                conn = socket.create_connection((host, port), timeout=self.connect_timeout)
                break
            except OSError as exc:
                if time.monotonic() >= deadline:
                    raise StartupError(f"cannot connect to {host}:{port}: {exc}", peer) from exc
                time.sleep(0.05)
        conn.settimeout(None)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._conns[peer] = conn
        return conn

    def _deliver(self, msg: Message) -> None:
        if msg.dst == self.rank:
            self.mailbox.put(msg.src, msg.phase, msg.payload)
            return
        frame = encode_message(msg)
        with self._conn_locks[msg.dst]:
            try:
                self._connection(msg.dst).sendall(frame)
            except StartupError:
                raise
            except OSError as exc:
                raise CommError(f"send failed: {exc}", msg.dst) from exc

    def alltoallv(self, phase, payloads, recv_into):
        # decomposed into the pairwise ring schedule
        empty = np.empty(0, dtype=COMPLEX)
        for step in range(1, self.size):
            dst, src = (self.rank + step) % self.size, (self.rank - step) % self.size
            out = recv_into.get(src, empty)
            self.sendrecv(Message(phase, self.rank, dst, payloads.get(dst, empty)), src, out)

    def close(self):
        if self._closed.is_set():
            return
        self._closed.set()
        try:
            self.listener.close()
        except OSError:
            pass
        for conn in list(self._conns.values()) + list(self._readers):
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()


def socket_connect(rank, address_table, listener=None, connect_timeout=10.0, **kw) -> SocketTransport:
    """Bring up rank ``rank`` of a socket world; peers are connected lazily."""
    return SocketTransport(rank, address_table, listener=listener, connect_timeout=connect_timeout, **kw)


def loopback_listeners(nprocs: int, host="127.0.0.1"):
    """Bind ``nprocs`` listeners on free ports; returns (address_table, listeners)."""
    listeners, table = {}, {}
    for r in range(nprocs):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.bind((host, 0))
        s.listen(max(16, nprocs))
        listeners[r] = s
        table[r] = s.getsockname()[:2]
    return table, listeners


def socket_spawn(nprocs: int, rank_main: Callable, address_table=None, ranks=None, **kw) -> dict:
    """Run ranks over sockets as threads of this process.

    With no address table, loopback listeners on free ports are created.
    ``ranks`` restricts which ranks run here (the others are other processes).
    """
    listeners = {}
    if address_table is None:
        address_table, listeners = loopback_listeners(nprocs)
    elif len(address_table) != nprocs:
        raise ValueError(f"address table has {len(address_table)} ranks, expected {nprocs}")
    ranks = range(nprocs) if ranks is None else ranks
    transports = {r: socket_connect(r, address_table, listener=listeners.get(r), **kw) for r in ranks}
    try:
        return run_ranks(transports, rank_main)
    finally:
        for t in transports.values():
            t.close()
        for r, s in listeners.items():
            if r not in transports:
                s.close()
