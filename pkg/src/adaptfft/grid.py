"""Grid dimensions, dimension orderings and 3-D <-> 1-D index translation.

A global array ``A(a, b, c)`` has ``n1`` points along ``a``, ``n2`` along ``b``
and ``n3`` along ``c``. Each :class:`DimOrder` names the axis sequence that is
linearized row-major: under ``ABC`` the index is ``a*n2*n3 + b*n3 + c``, under
``CAB`` it is ``c*n1*n2 + a*n2 + b`` and under ``CBA`` it is
``c*n2*n1 + b*n1 + a``. Every index is 0-based.

Complex samples are stored in flat ``numpy.complex128`` arrays, which are
interleaved (re, im) float64 pairs in memory.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BoundsError

COMPLEX = np.complex128
BYTES_PER_POINT = np.dtype(COMPLEX).itemsize  # 16


class DimOrder(enum.Enum):
    """The three linearizations used by the transform pipeline.

    The value is the tuple of axis numbers (0=a, 1=b, 2=c) from slowest to
    fastest varying.
    """

    ABC = (0, 1, 2)
    CAB = (2, 0, 1)
    CBA = (2, 1, 0)

    @property
    def axes(self) -> tuple[int, int, int]:
        return self.value

    @property
    def label(self) -> str:
        return self.name.lower()


class Coord3(NamedTuple):
    """A point given in the coordinate sequence of some DimOrder."""

    i: int
    j: int
    k: int


@dataclass(frozen=True)
class GridDims:
    n1: int
    n2: int
    n3: int

    def __post_init__(self):
        for name in ("n1", "n2", "n3"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.total > np.iinfo(np.int64).max:
            raise ValueError("grid too large for 64-bit indexing")

    @classmethod
    def parse(cls, text: str) -> "GridDims":
        """Parse ``"N1xN2xN3"`` (or a single ``"N"`` for a cube)."""
        parts = [p for p in re.split(r"[x×,\s]+", text.strip().lower()) if p]
        if len(parts) == 1:
            parts = parts * 3
        if len(parts) != 3:
            raise ValueError(f"expected N1xN2xN3, got {text!r}")
        return cls(*(int(p) for p in parts))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def total(self) -> int:
        return self.n1 * self.n2 * self.n3

    def lengths(self, order: DimOrder) -> tuple[int, int, int]:
        """Axis lengths permuted into ``order``."""
        s = self.shape
        return tuple(s[ax] for ax in order.axes)

    def __str__(self):
        return f"{self.n1}x{self.n2}x{self.n3}"


def linearize(order: DimOrder, dims: GridDims, c: Coord3) -> int:
    p1, p2, p3 = dims.lengths(order)
    i, j, k = c
    if not (0 <= i < p1 and 0 <= j < p2 and 0 <= k < p3):
        raise BoundsError(f"{tuple(c)} outside {order.label} grid {(p1, p2, p3)}")
    return (i * p2 + j) * p3 + k


def delinearize(order: DimOrder, dims: GridDims, x: int) -> Coord3:
    _, p2, p3 = dims.lengths(order)
    if not 0 <= x < dims.total:
        raise BoundsError(f"linear index {x} outside [0, {dims.total})")
    i = x // (p2 * p3)
    j = (x - i * p2 * p3) // p3
    k = x - i * p2 * p3 - j * p3
    return Coord3(i, j, k)


def to_abc(order: DimOrder, c: Coord3) -> tuple[int, int, int]:
    """Reorder a coordinate given in ``order`` into (a, b, c)."""
    abc = [0, 0, 0]
    for ax, v in zip(order.axes, c):
        abc[ax] = v
    return tuple(abc)


def from_abc(order: DimOrder, abc) -> Coord3:
    return Coord3(*(abc[ax] for ax in order.axes))


def reorder_indices(dims: GridDims, src: DimOrder, dst: DimOrder, x=None) -> np.ndarray:
    """Vectorized map from linear indices under ``src`` to those under ``dst``.

    ``x`` defaults to every index of the grid.
    """
    if x is None:
        x = np.arange(dims.total, dtype=np.int64)
    coords = np.unravel_index(x, dims.lengths(src))
    abc = [None, None, None]
    for ax, v in zip(src.axes, coords):
        abc[ax] = v
    return np.ravel_multi_index(tuple(abc[ax] for ax in dst.axes), dims.lengths(dst)).astype(np.int64)


def global_view(buf: np.ndarray, dims: GridDims, order: DimOrder) -> np.ndarray:
    """View a full linearized array as an (n1, n2, n3) array indexed by (a, b, c)."""
    arr = np.asarray(buf).reshape(dims.lengths(order))
    return arr.transpose(np.argsort(order.axes))


def linearized(arr_abc: np.ndarray, order: DimOrder) -> np.ndarray:
    """Flatten an (n1, n2, n3) array into the linear layout of ``order``."""
    return np.ascontiguousarray(np.transpose(arr_abc, order.axes)).reshape(-1)
