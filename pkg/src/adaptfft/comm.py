"""Transport contract and the six exchange schedules for a transpose.

Every schedule moves the same bytes between the same pairs; they differ only
in how sends and receives are initiated and awaited:

=================  ==========================================================
WAIT_ALL           post every send and receive, then wait for all of them
ALL_TO_ALL_V       one variable-count all-to-all collective
WAIT_ALL_BLOCK     WAIT_ALL restricted to one block of peers per round
WAIT_SOME          post everything, unpack each receive as soon as it lands
WAIT_SOME_BLOCK    WAIT_SOME restricted to one block of peers per round
PAIRWISE_RING      step i: send to rank+i, receive from rank-i (mod np)
=================  ==========================================================

Each schedule calls ``on_arrival(peer)`` exactly once for every peer whose
receive segment is nonempty, after that segment of ``recv_buf`` is filled.
"""
from __future__ import annotations

import abc
import enum
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import CommError, FramingError
from .grid import BYTES_PER_POINT, COMPLEX
from .transpose import RankPlan

DEFAULT_B_SIZE = 32

# phase ids on the wire
PHASE_ABC_CAB = 0
PHASE_CAB_CBA = 1
PHASE_GATHER = 2
PHASE_CONTROL = 3

HEADER = struct.Struct("<IIIQ")  # phase_id, src, dst, payload_bytes
HEADER_SIZE = HEADER.size  # 20
WIRE_DTYPE = np.dtype("<c16")


class CommMethod(enum.Enum):
    WAIT_ALL = "waitall"
    ALL_TO_ALL_V = "alltoallv"
    WAIT_ALL_BLOCK = "waitall-block"
    WAIT_SOME = "waitsome"
    WAIT_SOME_BLOCK = "waitsome-block"
    PAIRWISE_RING = "sendrecv"
    AUTO = "auto"

    @classmethod
    def concrete(cls) -> tuple["CommMethod", ...]:
        return tuple(m for m in cls if m is not cls.AUTO)

    @property
    def overlaps(self) -> bool:
        return self in (CommMethod.WAIT_SOME, CommMethod.WAIT_SOME_BLOCK)


DEFAULT_METHOD = CommMethod.WAIT_SOME


@dataclass(frozen=True)
class UserSelect:
    """Force one concrete method and skip auto-tuning."""

    method: CommMethod

    def __post_init__(self):
        if self.method is CommMethod.AUTO:
            raise ValueError("UserSelect needs one of the six concrete methods")


_ALIASES = {
    "isend_waitall": CommMethod.WAIT_ALL,
    "isend_waitall_block": CommMethod.WAIT_ALL_BLOCK,
    "isend_waitsome": CommMethod.WAIT_SOME,
    "isend_waitsome_block": CommMethod.WAIT_SOME_BLOCK,
    "ring": CommMethod.PAIRWISE_RING,
    "pairwise": CommMethod.PAIRWISE_RING,
}


def parse_method(text: str | None):
    """Parse a CLI method string.

    Returns ``None`` for ``"default"``, a :class:`UserSelect` for
    ``"user-select:NAME"`` and a :class:`CommMethod` otherwise.
    """
    if text is None:
        return None
    t = text.strip().lower().replace(" ", "")
    if t in ("", "default"):
        return None
    if t.startswith(("user-select:", "user:")):
        inner = parse_method(t.split(":", 1)[1])
        if not isinstance(inner, CommMethod):
            raise ValueError(f"cannot user-select {text!r}")
        return UserSelect(inner)
    t = t.replace("_", "-")
    for m in CommMethod:
        if t == m.value or t == m.name.lower().replace("_", "-"):
            return m
    alias = _ALIASES.get(t.replace("-", "_"))
    if alias is None:
        raise ValueError(f"unknown communication method {text!r}")
    return alias


@dataclass
class Message:
    phase: int
    src: int
    dst: int
    payload: np.ndarray

    @property
    def payload_bytes(self) -> int:
        return int(self.payload.size) * BYTES_PER_POINT


def encode_header(phase: int, src: int, dst: int, payload_bytes: int) -> bytes:
    return HEADER.pack(phase, src, dst, payload_bytes)


def decode_header(raw: bytes) -> tuple[int, int, int, int]:
    if len(raw) != HEADER_SIZE:
        raise FramingError(f"header is {len(raw)} bytes, expected {HEADER_SIZE}")
    phase, src, dst, nbytes = HEADER.unpack(raw)
    if nbytes % BYTES_PER_POINT:
        raise FramingError(f"payload of {nbytes} bytes is not a whole number of complex samples", src)
    return phase, src, dst, nbytes


def encode_message(msg: Message) -> bytes:
    payload = np.ascontiguousarray(msg.payload, dtype=WIRE_DTYPE)
    return encode_header(msg.phase, msg.src, msg.dst, payload.nbytes) + payload.tobytes()


def decode_payload(raw: bytes) -> np.ndarray:
    if len(raw) % BYTES_PER_POINT:
        raise FramingError(f"payload of {len(raw)} bytes is not a whole number of complex samples")
    return np.frombuffer(raw, dtype=WIRE_DTYPE).astype(COMPLEX)


class Handle:
    """Completion token for a posted send or receive."""

    __slots__ = ("kind", "peer", "phase", "out", "done", "nbytes")

    def __init__(self, kind, peer, phase, out=None, done=False, nbytes=0):
        self.kind = kind
        self.peer = peer
        self.phase = phase
        self.out = out
        self.done = done
        self.nbytes = nbytes

    def __repr__(self):
        return f"<Handle {self.kind} peer={self.peer} phase={self.phase} done={self.done}>"


class Transport(abc.ABC):
    """Point-to-point message passing between ``size`` ranks.

    Sends are buffered: the payload is copied when the send is initiated, so
    the caller may reuse its buffer immediately. Receives fill a caller-owned
    ``out`` view whose size must match the incoming payload. There is no
    ordering guarantee across different peers.
    """

    rank: int
    size: int

    @abc.abstractmethod
    def isend(self, msg: Message) -> Handle: ...

    @abc.abstractmethod
    def irecv(self, peer: int, phase: int, out: np.ndarray) -> Handle: ...

    @abc.abstractmethod
    def wait_all(self, handles: Iterable[Handle]) -> None: ...

    @abc.abstractmethod
    def wait_some(self, handles: list[Handle]) -> list[int]:
        """Block until at least one pending handle completes.

        Returns the indices (into ``handles``) of handles that completed during
        this call. Handles already complete on entry are not reported again.
        """

    @abc.abstractmethod
    def bytes_sent(self, phases: Iterable[int] | None = None) -> dict[int, int]:
        """Payload bytes this rank has sent, keyed by destination rank."""

    @abc.abstractmethod
    def reset_counters(self) -> None: ...

    def sendrecv(self, msg: Message, source: int, out: np.ndarray) -> None:
        """Combined send to ``msg.dst`` and receive from ``source`` into ``out``.

        Zero-length messages are transmitted so both sides stay in step.
        """
        h_recv = self.irecv(source, msg.phase, out)
        h_send = self.isend(msg)
        self.wait_all([h_send, h_recv])

    def alltoallv(self, phase: int, payloads: dict[int, np.ndarray], recv_into: dict[int, np.ndarray]) -> None:
        """Variable-count exchange; only nonempty payloads are transferred."""
        handles = [self.irecv(p, phase, out) for p, out in recv_into.items() if out.size]
        handles += [
            self.isend(Message(phase, self.rank, p, buf)) for p, buf in payloads.items() if buf.size
        ]
        self.wait_all(handles)

    def close(self) -> None:
        pass


@dataclass
class CommRecord:
    """What a schedule did during one exchange (for tests and reports)."""

    method: CommMethod
    rounds: int = 0
    sends: list[tuple[int, int]] = field(default_factory=list)  # (round, peer)
    recvs: list[tuple[int, int]] = field(default_factory=list)
    arrivals: list[int] = field(default_factory=list)  # peers, in unpack order
    bytes_sent: int = 0
    callback_seconds: float = 0.0


class _Arrivals:
    def __init__(self, record: CommRecord, on_arrival):
        self.record = record
        self.on_arrival = on_arrival

    def __call__(self, peer):
        self.record.arrivals.append(peer)
        if self.on_arrival is not None:
            t0 = time.perf_counter()
            self.on_arrival(peer)
            self.record.callback_seconds += time.perf_counter() - t0


def _segment(buf, displs, counts, peer):
    d = displs[peer]
    return buf[d : d + counts[peer]]


def _post(plan, phase, send_buf, recv_buf, transport, record, rnd, send_to, recv_from):
    recv_handles = []
    for q in recv_from:
        if plan.recv_counts[q]:
            recv_handles.append(
                transport.irecv(q, phase, _segment(recv_buf, plan.recv_displs, plan.recv_counts, q))
            )
            record.recvs.append((rnd, q))
    send_handles = []
    for q in send_to:
        if plan.send_counts[q]:
            payload = _segment(send_buf, plan.send_displs, plan.send_counts, q)
            send_handles.append(transport.isend(Message(phase, plan.rank, q, payload)))
            record.sends.append((rnd, q))
            record.bytes_sent += payload.size * BYTES_PER_POINT
    return recv_handles, send_handles


def _check_bufs(plan: RankPlan, send_buf, recv_buf, transport):
    if len(plan.send_counts) != transport.size:
        raise CommError(f"plan covers {len(plan.send_counts)} ranks, transport has {transport.size}")
    if plan.rank != transport.rank:
        raise CommError(f"plan is for rank {plan.rank}, transport is rank {transport.rank}")
    if send_buf.size < plan.total_send or recv_buf.size < plan.total_recv:
        raise CommError("send/recv buffers are smaller than the plan requires")


def _peers(plan: RankPlan):
    n = len(plan.send_counts)
    return [q for q in range(n) if q != plan.rank]


def run_waitall(plan, phase, send_buf, recv_buf, transport, on_arrival=None) -> CommRecord:
    _check_bufs(plan, send_buf, recv_buf, transport)
    record = CommRecord(CommMethod.WAIT_ALL)
    arrived = _Arrivals(record, on_arrival)
    if transport.size == 1:
        return record
    record.rounds = 1
    peers = _peers(plan)
    recvs, sends = _post(plan, phase, send_buf, recv_buf, transport, record, 0, peers, peers)
    transport.wait_all(recvs + sends)
    for h in recvs:
        arrived(h.peer)
    return record


def run_alltoallv(plan, phase, send_buf, recv_buf, transport, on_arrival=None) -> CommRecord:
    _check_bufs(plan, send_buf, recv_buf, transport)
    record = CommRecord(CommMethod.ALL_TO_ALL_V)
    arrived = _Arrivals(record, on_arrival)
    if transport.size == 1:
        return record
    record.rounds = 1
    payloads, recv_into = {}, {}
    for q in _peers(plan):
        if plan.send_counts[q]:
            payloads[q] = _segment(send_buf, plan.send_displs, plan.send_counts, q)
            record.sends.append((0, q))
            record.bytes_sent += payloads[q].size * BYTES_PER_POINT
        if plan.recv_counts[q]:
            recv_into[q] = _segment(recv_buf, plan.recv_displs, plan.recv_counts, q)
            record.recvs.append((0, q))
    transport.alltoallv(phase, payloads, recv_into)
    for q in recv_into:
        arrived(q)
    return record


def block_rounds(nprocs: int, b_size: int) -> int:
    if b_size < 1:
        raise ValueError(f"block size must be >= 1, got {b_size}")
    return math.ceil(nprocs / b_size)


def block_partners(rank: int, nprocs: int, b_size: int, rnd: int) -> tuple[list[int], list[int]]:
    """Ranks that ``rank`` sends to and receives from in round ``rnd``.

    Ranks are split into consecutive blocks of ``b_size``. In round ``r`` block
    ``i`` sends to block ``(i + r) mod nblocks`` and receives from block
    ``(i - r) mod nblocks``, so after all rounds every ordered pair has met once.
    """
    nblocks = block_rounds(nprocs, b_size)
    mine = rank // b_size

    def members(b):
        return [q for q in range(b * b_size, min((b + 1) * b_size, nprocs)) if q != rank]

    return members((mine + rnd) % nblocks), members((mine - rnd) % nblocks)


def _run_blocks(method, plan, phase, send_buf, recv_buf, transport, b_size, on_arrival, overlap):
    _check_bufs(plan, send_buf, recv_buf, transport)
    record = CommRecord(method)
    arrived = _Arrivals(record, on_arrival)
    nprocs = transport.size
    nrounds = block_rounds(nprocs, b_size)
    record.rounds = nrounds
    for rnd in range(nrounds):
        send_to, recv_from = block_partners(plan.rank, nprocs, b_size, rnd)
        recvs, sends = _post(plan, phase, send_buf, recv_buf, transport, record, rnd, send_to, recv_from)
        if overlap:
            _drain_some(recvs, transport, arrived)
            transport.wait_all(sends)
        else:
            transport.wait_all(recvs + sends)
            for h in recvs:
                arrived(h.peer)
    return record


def _drain_some(recvs, transport, arrived):
    pending = list(recvs)
    while pending:
        done = transport.wait_some(pending)
        if not done:
            raise CommError("wait_some returned without progress")
        for i in done:
            arrived(pending[i].peer)
        done_set = set(done)
        pending = [h for i, h in enumerate(pending) if i not in done_set]


def run_waitall_block(plan, phase, send_buf, recv_buf, transport, b_size=DEFAULT_B_SIZE, on_arrival=None):
    return _run_blocks(
        CommMethod.WAIT_ALL_BLOCK, plan, phase, send_buf, recv_buf, transport, b_size, on_arrival, False
    )


def run_waitsome(plan, phase, send_buf, recv_buf, transport, on_arrival=None) -> CommRecord:
    _check_bufs(plan, send_buf, recv_buf, transport)
    record = CommRecord(CommMethod.WAIT_SOME)
    arrived = _Arrivals(record, on_arrival)
    if transport.size == 1:
        return record
    record.rounds = 1
    peers = _peers(plan)
    recvs, sends = _post(plan, phase, send_buf, recv_buf, transport, record, 0, peers, peers)
    _drain_some(recvs, transport, arrived)
    transport.wait_all(sends)
    return record


def run_waitsome_block(plan, phase, send_buf, recv_buf, transport, b_size=DEFAULT_B_SIZE, on_arrival=None):
    return _run_blocks(
        CommMethod.WAIT_SOME_BLOCK, plan, phase, send_buf, recv_buf, transport, b_size, on_arrival, True
    )


def ring_partners(rank: int, nprocs: int, step: int) -> tuple[int, int]:
    """(send_to, recv_from) at ring step ``step``."""
    return (rank + step) % nprocs, (rank - step) % nprocs


def run_pairwise_ring(plan, phase, send_buf, recv_buf, transport, on_arrival=None) -> CommRecord:
    _check_bufs(plan, send_buf, recv_buf, transport)
    record = CommRecord(CommMethod.PAIRWISE_RING)
    arrived = _Arrivals(record, on_arrival)
    nprocs = transport.size
    for step in range(1, nprocs):
        dst, src = ring_partners(plan.rank, nprocs, step)
        payload = _segment(send_buf, plan.send_displs, plan.send_counts, dst)
        out = _segment(recv_buf, plan.recv_displs, plan.recv_counts, src)
        transport.sendrecv(Message(phase, plan.rank, dst, payload), src, out)
        record.sends.append((step, dst))
        record.recvs.append((step, src))
        record.bytes_sent += payload.size * BYTES_PER_POINT
        record.rounds += 1
        if out.size:
            arrived(src)
    return record


_SCHEDULES = {
    CommMethod.WAIT_ALL: run_waitall,
    CommMethod.ALL_TO_ALL_V: run_alltoallv,
    CommMethod.WAIT_ALL_BLOCK: run_waitall_block,
    CommMethod.WAIT_SOME: run_waitsome,
    CommMethod.WAIT_SOME_BLOCK: run_waitsome_block,
    CommMethod.PAIRWISE_RING: run_pairwise_ring,
}


def run_exchange(
    method: CommMethod,
    plan: RankPlan,
    phase: int,
    send_buf: np.ndarray,
    recv_buf: np.ndarray,
    transport: Transport,
    on_arrival: Optional[Callable[[int], None]] = None,
    b_size: int = DEFAULT_B_SIZE,
) -> CommRecord:
    """Dispatch to the schedule for ``method``."""
    if isinstance(method, UserSelect):
        method = method.method
    fn = _SCHEDULES.get(method)
    if fn is None:
        raise ValueError(f"{method} is not a concrete communication method")
    if method in (CommMethod.WAIT_ALL_BLOCK, CommMethod.WAIT_SOME_BLOCK):
        return fn(plan, phase, send_buf, recv_buf, transport, b_size=b_size, on_arrival=on_arrival)
    return fn(plan, phase, send_buf, recv_buf, transport, on_arrival=on_arrival)


def allgather_floats(transport: Transport, values) -> np.ndarray:
    """Every rank's float vector, stacked as a ``(size, len(values))`` array."""
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    out = np.zeros((transport.size, vals.size), dtype=COMPLEX)
    out[transport.rank] = vals
    if transport.size > 1 and vals.size:
        handles = [
            transport.irecv(q, PHASE_CONTROL, out[q]) for q in range(transport.size) if q != transport.rank
        ]
        handles += [
            transport.isend(Message(PHASE_CONTROL, transport.rank, q, out[transport.rank]))
            for q in range(transport.size)
            if q != transport.rank
        ]
        transport.wait_all(handles)
    return out.real.copy()
