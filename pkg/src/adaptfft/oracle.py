"""Reference data and the brute-force 3-D DFT used to check the pipeline."""
from __future__ import annotations

import numpy as np

from .grid import COMPLEX, GridDims

DEFAULT_CAP = 4096
_CHUNK_ELEMS = 1 << 21


def seeded_input(dims: GridDims, seed: int) -> np.ndarray:
    """Reproducible (n1, n2, n3) complex array.

    Draws ``2 * total`` standard normals from ``numpy.random.default_rng(seed)``
    (PCG64); the first half are the real parts and the second half the
    imaginary parts, both in ``abc`` row-major order.
    """
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(2 * dims.total)
    return (vals[: dims.total] + 1j * vals[dims.total :]).reshape(dims.shape)


def oracle_dft3(global_input: np.ndarray, dims: GridDims, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Direct triple-sum forward DFT, ``O(total**2)``.

    ``X[k1,k2,k3] = sum x[a,b,c] * exp(-2j*pi*(k1*a/n1 + k2*b/n2 + k3*c/n3))``.
    Accepts an (n1, n2, n3) array or its ``abc``-flattened form and returns an
    (n1, n2, n3) array.
    """
    if dims.total > cap:
        raise ValueError(f"grid of {dims.total} points exceeds the oracle cap of {cap}")
    x = np.asarray(global_input, dtype=COMPLEX).reshape(-1)
    if x.size != dims.total:
        raise ValueError(f"input holds {x.size} points, grid has {dims.total}")
    n1, n2, n3 = dims.shape
    a, b, c = (g.reshape(-1) for g in np.indices(dims.shape))
    out = np.empty(dims.total, dtype=COMPLEX)
    step = max(1, _CHUNK_ELEMS // dims.total)
    for s in range(0, dims.total, step):
        k1, k2, k3 = a[s : s + step, None], b[s : s + step, None], c[s : s + step, None]
        # integer products reduced mod n keep every phase in [0, 3)
        frac = (k1 * a % n1) / n1 + (k2 * b % n2) / n2 + (k3 * c % n3) / n3
        out[s : s + step] = np.exp(-2j * np.pi * frac) @ x
    return out.reshape(dims.shape)
