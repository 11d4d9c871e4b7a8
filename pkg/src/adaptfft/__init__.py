"""Distributed forward 3-D complex FFT with adaptive slab decomposition.

Typical use on each rank::

    ctx = adaptfft.init(dims, adaptfft.RankInfo(rank, nprocs), method, transport)
    out = ctx.execute(local_in)      # local_in: this rank's abc slab
    ctx.finalize()
"""
from .comm import CommMethod, UserSelect
from .decomposition import RankInfo, Slab, SlabForm, slab_corners, slab_of
from .engine import FftContext, TimingBreakdown, execute, finalize, gather, init
from .errors import BoundsError, CommError, ContractError, FramingError, UnsupportedScaleError
from .grid import Coord3, DimOrder, GridDims, delinearize, linearize
from .transpose import build_plan, pipeline_plans, volume_of
from .transports import socket_connect, threaded_spawn

__all__ = [
    "BoundsError", "CommError", "CommMethod", "ContractError", "Coord3", "DimOrder", "FftContext",
    "FramingError", "GridDims", "RankInfo", "Slab", "SlabForm", "TimingBreakdown", "UnsupportedScaleError",
    "UserSelect", "build_plan", "delinearize", "execute", "finalize", "gather", "init", "linearize",
    "pipeline_plans", "slab_corners", "slab_of", "socket_connect", "threaded_spawn", "volume_of",
]
