"""Forward 3-D FFT on one rank: initialize, execute (repeatedly), finalize.

Data enters in the rank's slab of the ``abc`` decomposition and leaves in its
slab of the ``cba`` decomposition::

    FFT along c  ->  abc->cab transpose  ->  FFT along b
                 ->  cab->cba transpose  ->  FFT along a

Every work array is allocated once in :func:`init` and reused, so
:func:`execute` itself performs no buffer allocation. The returned array is
the context's output buffer and is overwritten by the next call.
"""
from __future__ import annotations

import logging
import statistics
import threading
import time
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .comm import (
    DEFAULT_B_SIZE,
    DEFAULT_METHOD,
    PHASE_ABC_CAB,
    PHASE_CAB_CBA,
    PHASE_GATHER,
    CommMethod,
    CommRecord,
    Message,
    Transport,
    UserSelect,
    allgather_floats,
    run_exchange,
)
from .decomposition import RankInfo, Slab, slab_corners, slab_of
from .errors import ContractError
from .fft import Direction, FftPlan1D, fft_rows
from .grid import COMPLEX, Coord3, DimOrder, GridDims
from .transpose import PIPELINE, RankPlan, TransposePlan, pipeline_plans

log = logging.getLogger(__name__)

_alloc_lock = threading.Lock()
_alloc_total = 0


def allocation_count() -> int:
    """Work buffers allocated by any context in this process so far."""
    return _alloc_total


@dataclass
class TimingBreakdown:
    """Seconds spent per category; ``others`` is whatever the rest leave of ``total``."""

    communication: float = 0.0
    fft: float = 0.0
    buffer_comm: float = 0.0
    buffer_fft: float = 0.0
    others: float = 0.0
    total: float = 0.0

    CATEGORIES = ("communication", "fft", "buffer_comm", "buffer_fft", "others")

    def close(self) -> None:
        named = self.communication + self.fft + self.buffer_comm + self.buffer_fft
        self.others = max(0.0, self.total - named)

    def __iadd__(self, other):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])

    @classmethod
    def from_array(cls, arr) -> "TimingBreakdown":
        return cls(*(float(v) for v in arr))


class FftContext:
    """Per-rank state of a distributed transform. Build it with :func:`init`."""

    def __init__(self, dims: GridDims, rank: RankInfo, transport: Transport, b_size: int):
        if transport.size != rank.nprocs or transport.rank != rank.myid:
            raise ContractError(
                f"transport is rank {transport.rank}/{transport.size}, context is {rank.myid}/{rank.nprocs}"
            )
        self.dims = dims
        self.rank = rank
        self.transport = transport
        self.b_size = b_size
        self.method: Optional[CommMethod] = None
        self.plans: tuple[TransposePlan, TransposePlan] = pipeline_plans(dims, rank.nprocs)
        self.rank_plans: tuple[RankPlan, RankPlan] = tuple(p[rank.myid] for p in self.plans)
        self.slabs: tuple[Slab, Slab, Slab] = tuple(slab_of(dims, o, rank) for o in PIPELINE)
        # transform axis of each stage is the fastest-varying one of its ordering
        self.fft_plans = tuple(FftPlan1D(dims.lengths(o)[2], Direction.FORWARD) for o in PIPELINE)

        self.allocations = 0
        width = max(s.count for s in self.slabs)
        self._work_a = self._allocate(width)
        self._work_b = self._allocate(width)
        self._fft_buf = self._allocate(width)
        self._send_buf = self._allocate(max(rp.total_send for rp in self.rank_plans))
        self._recv_buf = self._allocate(max(rp.total_recv for rp in self.rank_plans))
        self._out = self._allocate(self.slabs[2].count)
        self._scratch = self._allocate(self.slabs[0].count)

        self.timing = TimingBreakdown()
        self.last_timing = TimingBreakdown()
        self.last_records: list[CommRecord] = []
        self.executions = 0
        self.tuning_runs = 0
        self.tuning_medians: dict[CommMethod, float] = {}
        self.finalized = False

    def _allocate(self, n: int) -> np.ndarray:
        global _alloc_total
        with _alloc_lock:
            _alloc_total += 1
        self.allocations += 1
        return np.zeros(n, dtype=COMPLEX)

    # -- metadata
    @property
    def in_slab(self) -> Slab:
        return self.slabs[0]

    @property
    def out_slab(self) -> Slab:
        return self.slabs[2]

    @property
    def in_index_range(self) -> Optional[tuple[Coord3, Coord3]]:
        """(start, end) of the input slab as ``abc`` coordinates; ``None`` if empty."""
        return slab_corners(self.slabs[0], self.dims) if self.slabs[0].count else None

    @property
    def out_index_range(self) -> Optional[tuple[Coord3, Coord3]]:
        """(start, end) of the output slab as ``cba`` coordinates; ``None`` if empty."""
        return slab_corners(self.slabs[2], self.dims) if self.slabs[2].count else None

    @property
    def tuning_fraction(self) -> float:
        runs = self.tuning_runs + self.executions
        return self.tuning_runs / runs if runs else 0.0

    def _check_live(self):
        if self.finalized:
            raise ContractError("context has been finalized")

    # -- execution
    def _fft_stage(self, stage: int, src: np.ndarray, dst: np.ndarray, t: TimingBreakdown) -> None:
        n = self.slabs[stage].count
        plan = self.fft_plans[stage]
        buf = self._fft_buf[:n]
        t0 = time.perf_counter()
        buf[...] = src[:n]
        t1 = time.perf_counter()
        fft_rows(plan, buf, n // plan.n, out=buf)
        t2 = time.perf_counter()
        dst[:n] = buf
        t3 = time.perf_counter()
        t.buffer_fft += (t1 - t0) + (t3 - t2)
        t.fft += t2 - t1

    def _transpose(self, phase: int, method: CommMethod, src: np.ndarray, dst: np.ndarray, t: TimingBreakdown):
        rp = self.rank_plans[phase]
        send = self._send_buf[: rp.total_send]
        recv = self._recv_buf[: rp.total_recv]
        t0 = time.perf_counter()
        np.take(src, rp.send_idx, out=send)
        dst[rp.local_dst] = src[rp.local_src]
        t1 = time.perf_counter()

        def unpack(peer):
            d, c = rp.recv_displs[peer], rp.recv_counts[peer]
            dst[rp.recv_idx[d : d + c]] = recv[d : d + c]

        record = run_exchange(method, rp, phase, send, recv, self.transport, on_arrival=unpack, b_size=self.b_size)
        t2 = time.perf_counter()
        t.buffer_comm += (t1 - t0) + record.callback_seconds
        t.communication += (t2 - t1) - record.callback_seconds
        self.last_records.append(record)

    def _run(self, local_in: np.ndarray, method: CommMethod) -> np.ndarray:
        t = TimingBreakdown()
        self.last_records = []
        start = time.perf_counter()
        a, b = self._work_a, self._work_b
        self._fft_stage(0, local_in, a, t)
        self._transpose(PHASE_ABC_CAB, method, a, b, t)
        self._fft_stage(1, b, a, t)
        self._transpose(PHASE_CAB_CBA, method, a, b, t)
        self._fft_stage(2, b, self._out, t)
        t.total = time.perf_counter() - start
        t.close()
        self.last_timing = t
        return self._out

    def execute(self, local_in: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        self._check_live()
        if self.method is None:
            raise ContractError("context has no communication method installed")
        local_in = np.asarray(local_in)
        if local_in.shape != (self.slabs[0].count,):
            raise ContractError(f"input must be a flat array of {self.slabs[0].count} samples, got {local_in.shape}")
        res = self._run(local_in, self.method)
        self.executions += 1
        self.timing += self.last_timing
        if out is not None:
            out[...] = res
            return out
        return res

    # -- auto-tuning
    def _autotune(self, tune_reps: int) -> CommMethod:
        methods = CommMethod.concrete()
        medians = []
        for m in methods:
            runs = []
            for _ in range(tune_reps):
                self._run(self._scratch, m)
                self.tuning_runs += 1
                runs.append(self.last_timing.total)
            medians.append(statistics.median(runs))
        # every rank must install the same method: judge by the slowest rank
        worst = allgather_floats(self.transport, medians).max(axis=0)
        self.tuning_medians = dict(zip(methods, worst.tolist()))
        best = min(
            range(len(methods)),
            key=lambda i: (worst[i], methods[i] is not DEFAULT_METHOD, i),
        )
        log.info(
            "rank %d: auto-tuning ran %d executions, selected %s",
            self.rank.myid, self.tuning_runs, methods[best].value,
        )
        return methods[best]

    def finalize(self) -> None:
        self._check_live()
        self._work_a = self._work_b = self._fft_buf = None
        self._send_buf = self._recv_buf = self._out = self._scratch = None
        self.finalized = True

    def gather(self, local_out: np.ndarray) -> Optional[np.ndarray]:
        """Collective: rank 0 gets the full ``cba``-linearized output, others ``None``."""
        self._check_live()
        tr = self.transport
        if tr.rank != 0:
            if local_out.size:
                tr.wait_all([tr.isend(Message(PHASE_GATHER, tr.rank, 0, local_out))])
            return None
        full = np.empty(self.dims.total, dtype=COMPLEX)
        mine = self.slabs[2]
        full[mine.x_start : mine.stop] = local_out
        handles = []
        for r in range(1, tr.size):
            s = slab_of(self.dims, DimOrder.CBA, RankInfo(r, tr.size))
            if s.count:
                handles.append(tr.irecv(r, PHASE_GATHER, full[s.x_start : s.stop]))
        tr.wait_all(handles)
        return full


def resolve_method(method) -> tuple[CommMethod, bool]:
    """(method to install, whether auto-tuning is needed)."""
    if method is None:
        return DEFAULT_METHOD, False
    if isinstance(method, UserSelect):
        return method.method, False
    if isinstance(method, str):
        from .comm import parse_method

        return resolve_method(parse_method(method))
    if method is CommMethod.AUTO:
        return CommMethod.AUTO, True
    return CommMethod(method), False


def init(
    dims: GridDims,
    rank: RankInfo,
    method=None,
    transport: Optional[Transport] = None,
    tune_reps: int = 2,
    b_size: int = DEFAULT_B_SIZE,
) -> FftContext:
    """Build plans and buffers for this rank and install a communication method.

    ``method`` is ``None`` (the default method, WAIT_SOME), a concrete
    :class:`CommMethod`, a :class:`UserSelect` or ``CommMethod.AUTO``. With
    AUTO, each of the six methods runs ``tune_reps`` times on zero input and
    the one with the smallest median time (slowest rank) is installed; ties
    prefer WAIT_SOME. Collective when ``rank.nprocs > 1``.
    """
    if transport is None:
        if rank.nprocs != 1:
            raise ContractError("a transport is required for more than one rank")
        from .transports import ThreadedWorld

        transport = ThreadedWorld(1).transports[0]
    if tune_reps < 1:
        raise ValueError("tune_reps must be >= 1")
    ctx = FftContext(dims, rank, transport, b_size)
    chosen, tune = resolve_method(method)
    ctx.method = ctx._autotune(tune_reps) if tune else chosen
    return ctx


def execute(ctx: FftContext, local_in: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    return ctx.execute(local_in, out)


def finalize(ctx: FftContext) -> None:
    ctx.finalize()


def gather(ctx: FftContext, local_out: np.ndarray) -> Optional[np.ndarray]:
    return ctx.gather(local_out)
