"""Redistribution plans between two slab decompositions.

A plan records, for every rank, which of its source-slab points stay local and
which go to (or come from) each peer. Within one (sender, receiver) pair the
points are ordered by ascending global linear index under the destination
ordering, on both sides, so messages carry bare samples and no indices.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .decomposition import SlabForm, boundaries, form_for
from .grid import BYTES_PER_POINT, DimOrder, GridDims, reorder_indices

PIPELINE = (DimOrder.ABC, DimOrder.CAB, DimOrder.CBA)


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _displs(counts: np.ndarray) -> np.ndarray:
    d = np.zeros(len(counts), dtype=np.int64)
    np.cumsum(counts[:-1], out=d[1:])
    return d


@dataclass(frozen=True, eq=False)
class RankPlan:
    """One rank's share of a :class:`TransposePlan`.

    ``send_idx`` is the concatenation over peers (ascending) of source-local
    offsets; peer ``q`` owns ``send_idx[send_displs[q]:send_displs[q] + send_counts[q]]``.
    ``recv_idx`` likewise holds destination-local offsets. Self entries are
    always zero; retained points live in ``local_src``/``local_dst``.
    """

    rank: int
    src_count: int
    dst_count: int
    local_src: np.ndarray
    local_dst: np.ndarray
    send_counts: np.ndarray
    send_idx: np.ndarray
    recv_counts: np.ndarray
    recv_idx: np.ndarray
    send_displs: np.ndarray = field(init=False)
    recv_displs: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "send_displs", _frozen(_displs(self.send_counts)))
        object.__setattr__(self, "recv_displs", _frozen(_displs(self.recv_counts)))

    def send_map(self, peer: int) -> np.ndarray:
        d = self.send_displs[peer]
        return self.send_idx[d : d + self.send_counts[peer]]

    def recv_map(self, peer: int) -> np.ndarray:
        d = self.recv_displs[peer]
        return self.recv_idx[d : d + self.recv_counts[peer]]

    @property
    def local_map(self) -> list[tuple[int, int]]:
        return list(zip(self.local_src.tolist(), self.local_dst.tolist()))

    @property
    def send_peers(self) -> list[int]:
        return np.flatnonzero(self.send_counts).tolist()

    @property
    def recv_peers(self) -> list[int]:
        return np.flatnonzero(self.recv_counts).tolist()

    @property
    def send_bytes(self) -> np.ndarray:
        return self.send_counts * BYTES_PER_POINT

    @property
    def recv_bytes(self) -> np.ndarray:
        return self.recv_counts * BYTES_PER_POINT

    @property
    def total_send(self) -> int:
        return int(self.send_counts.sum())

    @property
    def total_recv(self) -> int:
        return int(self.recv_counts.sum())


@dataclass(frozen=True, eq=False)
class TransposePlan:
    dims: GridDims
    nprocs: int
    src_order: DimOrder
    dst_order: DimOrder
    ranks: tuple[RankPlan, ...]

    def __getitem__(self, rank: int) -> RankPlan:
        return self.ranks[rank]

    @property
    def form(self) -> SlabForm:
        forms = {form_for(self.dims, o, self.nprocs) for o in (self.src_order, self.dst_order)}
        return SlabForm.TWO_D if SlabForm.TWO_D in forms else SlabForm.ONE_D


@dataclass(frozen=True)
class VolumeReport:
    total_bytes: int
    per_rank_bytes: tuple[int, ...]
    decomposition_form: SlabForm

    def __add__(self, other: "VolumeReport") -> "VolumeReport":
        if len(self.per_rank_bytes) != len(other.per_rank_bytes):
            raise ValueError("volume reports cover different rank counts")
        form = SlabForm.TWO_D if SlabForm.TWO_D in (self.decomposition_form, other.decomposition_form) else SlabForm.ONE_D
        return VolumeReport(
            self.total_bytes + other.total_bytes,
            tuple(a + b for a, b in zip(self.per_rank_bytes, other.per_rank_bytes)),
            form,
        )

    def as_dict(self) -> dict:
        return {
            "total_bytes": self.total_bytes,
            "per_rank_bytes": list(self.per_rank_bytes),
            "decomposition_form": self.decomposition_form.value,
        }


@functools.lru_cache(maxsize=64)
def build_plan(dims: GridDims, nprocs: int, src: DimOrder, dst: DimOrder) -> TransposePlan:
    """Plans for every rank of the ``src`` -> ``dst`` redistribution.

    Raises :class:`~adaptfft.errors.UnsupportedScaleError` if ``nprocs`` is
    too large for either ordering. Results are cached and immutable.
    """
    sb = boundaries(dims, src, nprocs)
    db = boundaries(dims, dst, nprocs)

    x = np.arange(dims.total, dtype=np.int64)
    y = reorder_indices(dims, src, dst, x)
    p = np.searchsorted(sb, x, side="right") - 1
    q = np.searchsorted(db, y, side="right") - 1
    src_off = x - sb[p]
    dst_off = y - db[q]
    local = p == q

    # sender side: group by (p, q), ascending y inside each pair
    s_order = np.lexsort((y, q, p))
    # receiver side: group by (q, p), same ascending y
    r_order = np.lexsort((y, p, q))
    pair_counts = np.bincount(p * nprocs + q, minlength=nprocs * nprocs).reshape(nprocs, nprocs)

    s_p, s_local = p[s_order], local[s_order]
    r_q, r_local = q[r_order], local[r_order]
    s_bounds = np.searchsorted(s_p, np.arange(nprocs + 1))
    r_bounds = np.searchsorted(r_q, np.arange(nprocs + 1))

    ranks = []
    for r in range(nprocs):
        s_sel = s_order[s_bounds[r] : s_bounds[r + 1]]
        s_rem = ~s_local[s_bounds[r] : s_bounds[r + 1]]
        r_sel = r_order[r_bounds[r] : r_bounds[r + 1]]
        r_rem = ~r_local[r_bounds[r] : r_bounds[r + 1]]
        kept = s_sel[~s_rem]
        send_counts = pair_counts[r].copy()
        send_counts[r] = 0
        recv_counts = pair_counts[:, r].copy()
        recv_counts[r] = 0
        ranks.append(
            RankPlan(
                rank=r,
                src_count=int(sb[r + 1] - sb[r]),
                dst_count=int(db[r + 1] - db[r]),
                local_src=_frozen(src_off[kept]),
                local_dst=_frozen(dst_off[kept]),
                send_counts=_frozen(send_counts),
                send_idx=_frozen(src_off[s_sel[s_rem]]),
                recv_counts=_frozen(recv_counts),
                recv_idx=_frozen(dst_off[r_sel[r_rem]]),
            )
        )
    return TransposePlan(dims, nprocs, src, dst, tuple(ranks))


def volume_of(plan: TransposePlan) -> VolumeReport:
    per_rank = tuple(int(rp.send_bytes.sum()) for rp in plan.ranks)
    return VolumeReport(sum(per_rank), per_rank, plan.form)


def pipeline_plans(dims: GridDims, nprocs: int) -> tuple[TransposePlan, TransposePlan]:
    """The abc -> cab and cab -> cba plans of the forward transform."""
    return (
        build_plan(dims, nprocs, PIPELINE[0], PIPELINE[1]),
        build_plan(dims, nprocs, PIPELINE[1], PIPELINE[2]),
    )


def pipeline_volume(dims: GridDims, nprocs: int) -> VolumeReport:
    first, second = pipeline_plans(dims, nprocs)
    return volume_of(first) + volume_of(second)
