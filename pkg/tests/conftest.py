"""Independent oracles shared by the test modules.

Nothing here calls into the plan builder or FFT kernel: owners are found by
re-deriving the cut points from the floor formula and scanning every point.
"""
import itertools

import numpy as np
import pytest

from adaptfft.grid import GridDims

AXES = {"abc": (0, 1, 2), "acb": (0, 2, 1), "bac": (1, 0, 2), "bca": (1, 2, 0), "cab": (2, 0, 1), "cba": (2, 1, 0)}


def cut_points(lengths, nprocs):
    p1, p2, p3 = lengths
    if nprocs <= p1:
        return [(p1 * r // nprocs) * p2 * p3 for r in range(nprocs + 1)]
    assert nprocs <= p1 * p2
    return [(p1 * p2 * r // nprocs) * p3 for r in range(nprocs + 1)]


def owner(cuts, x):
    for r in range(len(cuts) - 1):
        if cuts[r] <= x < cuts[r + 1]:
            return r
    raise AssertionError(f"{x} unowned")


def lin(shape, axes, abc):
    p = [shape[a] for a in axes]
    i, j, k = (abc[a] for a in axes)
    return (i * p[1] + j) * p[2] + k


def oracle_relocation(shape, nprocs, src, dst):
    """Brute-force classification of every point for the src -> dst transpose.

    Returns ``(local, pairs)`` where ``local[p]`` is a set of
    (src_off, dst_off) and ``pairs[(p, q)]`` is a list of (src_off, dst_off)
    sorted by global destination index.
    """
    sa, da = AXES[src], AXES[dst]
    scuts = cut_points([shape[a] for a in sa], nprocs)
    dcuts = cut_points([shape[a] for a in da], nprocs)
    local = {r: set() for r in range(nprocs)}
    pairs = {}
    for abc in itertools.product(*(range(n) for n in shape)):
        x, y = lin(shape, sa, abc), lin(shape, da, abc)
        p, q = owner(scuts, x), owner(dcuts, y)
        entry = (y, x - scuts[p], y - dcuts[q])
        if p == q:
            local[p].add(entry[1:])
        else:
            pairs.setdefault((p, q), []).append(entry)
    return local, {k: [e[1:] for e in sorted(v)] for k, v in pairs.items()}


def oracle_volume(shape, nprocs, orders):
    """Bytes moved across a chain of orderings, 16 per relocated point."""
    total = 0
    for src, dst in zip(orders, orders[1:]):
        _, pairs = oracle_relocation(shape, nprocs, src, dst)
        total += 16 * sum(len(v) for v in pairs.values())
    return total


def naive_dft(x, sign=-1):
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    jk = np.outer(np.arange(n), np.arange(n)) % n
    return x @ np.exp(sign * 2j * np.pi * jk / n).T


def naive_dft3(arr):
    """Separable naive DFT along all three axes (O(n^2) per axis)."""
    out = np.asarray(arr, dtype=complex)
    for axis in range(3):
        out = np.moveaxis(naive_dft(np.moveaxis(out, axis, -1)), -1, axis)
    return out


def valid_nps(dims: GridDims, candidates):
    lim = min(dims.n1 * dims.n2, dims.n3 * dims.n1, dims.n3 * dims.n2)
    return [n for n in candidates if n <= lim]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])
