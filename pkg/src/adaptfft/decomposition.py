"""Adaptive row-wise slab assignment.

The grid is linearized under a :class:`~adaptfft.grid.DimOrder` and the 1-D
index range is cut into contiguous blocks, one per rank. With permuted lengths
``(P1, P2, P3)`` the cut points are

* ``floor(P1 * myid / np) * P2 * P3`` when ``np <= P1`` (whole planes, 1-D form)
* ``floor(P1 * P2 * myid / np) * P3`` when ``P1 < np <= P1 * P2`` (whole rows, 2-D form)

so every rank always holds complete rows of the fastest-varying axis.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedScaleError
from .grid import Coord3, DimOrder, GridDims, delinearize


class SlabForm(enum.Enum):
    ONE_D = "1d"
    TWO_D = "2d"


@dataclass(frozen=True)
class RankInfo:
    myid: int
    nprocs: int

    def __post_init__(self):
        if self.nprocs < 1:
            raise ValueError(f"rank count must be >= 1, got {self.nprocs}")
        if not 0 <= self.myid < self.nprocs:
            raise ValueError(f"rank id {self.myid} outside [0, {self.nprocs - 1}]")


@dataclass(frozen=True)
class Slab:
    order: DimOrder
    x_start: int
    x_end: int  # inclusive; x_start - 1 for an empty slab
    form: SlabForm

    @property
    def count(self) -> int:
        return self.x_end - self.x_start + 1

    @property
    def stop(self) -> int:
        return self.x_end + 1

    def __contains__(self, x):
        return self.x_start <= x <= self.x_end


def form_for(dims: GridDims, order: DimOrder, nprocs: int) -> SlabForm:
    p1, p2, _ = dims.lengths(order)
    if nprocs < 1:
        raise ValueError(f"rank count must be >= 1, got {nprocs}")
    if nprocs <= p1:
        return SlabForm.ONE_D
    if nprocs <= p1 * p2:
        return SlabForm.TWO_D
    raise UnsupportedScaleError(
        f"{nprocs} ranks exceed {p1}*{p2}={p1 * p2} rows of the {order.label} decomposition of {dims}"
    )


def boundary(dims: GridDims, order: DimOrder, nprocs: int, myid: int) -> int:
    """First linear index owned by ``myid`` (``myid == nprocs`` gives the total)."""
    p1, p2, p3 = dims.lengths(order)
    if form_for(dims, order, nprocs) is SlabForm.ONE_D:
        return (p1 * myid // nprocs) * p2 * p3
    return (p1 * p2 * myid // nprocs) * p3


def boundaries(dims: GridDims, order: DimOrder, nprocs: int) -> np.ndarray:
    """All ``nprocs + 1`` cut points as an int64 array."""
    return np.array([boundary(dims, order, nprocs, r) for r in range(nprocs + 1)], dtype=np.int64)


def slab_of(dims: GridDims, order: DimOrder, rank: RankInfo) -> Slab:
    form = form_for(dims, order, rank.nprocs)
    start = boundary(dims, order, rank.nprocs, rank.myid)
    end = boundary(dims, order, rank.nprocs, rank.myid + 1) - 1
    return Slab(order, start, end, form)


def slab_corners(slab: Slab, dims: GridDims) -> tuple[Coord3, Coord3]:
    """Start and end coordinates (in the slab's ordering) of a non-empty slab."""
    if slab.count <= 0:
        raise ValueError("empty slab has no corners")
    return delinearize(slab.order, dims, slab.x_start), delinearize(slab.order, dims, slab.x_end)


def check_supported(dims: GridDims, nprocs: int, orders=tuple(DimOrder)) -> None:
    """Raise :class:`UnsupportedScaleError` unless ``nprocs`` fits every ordering."""
    for order in orders:
        form_for(dims, order, nprocs)


def is_supported(dims: GridDims, nprocs: int, orders=tuple(DimOrder)) -> bool:
    try:
        check_supported(dims, nprocs, orders)
    except UnsupportedScaleError:
        return False
    return True
