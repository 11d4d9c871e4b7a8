"""Batched 1-D complex FFTs.

Forward transforms use ``X[k] = sum_j x[j] * exp(-2j*pi*j*k/n)``; backward
transforms flip the sign of the exponent. Neither direction normalizes, so
``backward(forward(x)) / n == x``.

Composite lengths are split recursively by decimation in time (radix 4 first,
then the smallest prime factor). Prime factors up to ``DIRECT_MAX`` are
applied as small dense DFT matrices; larger primes go through Bluestein's
chirp-z algorithm on a power-of-two convolution.
"""
from __future__ import annotations

import enum
import functools

import numpy as np

from .errors import ContractError
from .grid import COMPLEX

DIRECT_MAX = 16


class Direction(enum.IntEnum):
    FORWARD = -1
    BACKWARD = 1


def _roots(n: int, sign: int, exps: np.ndarray) -> np.ndarray:
    # reduce exponents mod n before scaling to keep phases exact
    return np.exp(sign * 2j * np.pi * (np.mod(exps, n) / n))


def _smallest_factor(n: int) -> int:
    if n % 4 == 0 and n > 4:
        return 4
    f = 2
    while f * f <= n:
        if n % f == 0:
            return f
        f += 1
    return n


class _Direct:
    def __init__(self, n, sign):
        jk = np.outer(np.arange(n), np.arange(n))
        self.mat_t = np.ascontiguousarray(_roots(n, sign, jk).T)

    def apply(self, x):
        return x @ self.mat_t


class _Radix2:
    def apply(self, x):
        out = np.empty_like(x)
        np.add(x[:, 0], x[:, 1], out=out[:, 0])
        np.subtract(x[:, 0], x[:, 1], out=out[:, 1])
        return out


class _Identity:
    def apply(self, x):
        return x.copy()


class _Stage:
    """One decimation-in-time split ``n = radix * m``."""

    def __init__(self, n, radix, sign):
        self.n, self.radix, self.m = n, radix, n // radix
        self.twiddle = _roots(n, sign, np.outer(np.arange(radix), np.arange(self.m)))
        self.sub = _kernel(self.m, sign)
        self.butterfly = _kernel(radix, sign)

    def apply(self, x):
        b, p, m = x.shape[0], self.radix, self.m
        # input j = r + p*j2 -> sub-sequence r, position j2
        y = x.reshape(b, m, p).transpose(0, 2, 1).reshape(b * p, m)
        y = self.sub.apply(y).reshape(b, p, m)
        y *= self.twiddle
        z = y.transpose(0, 2, 1).reshape(b * m, p)
        z = self.butterfly.apply(z).reshape(b, m, p)
        # output k = k1 + m*k2
        return z.transpose(0, 2, 1).reshape(b, self.n)


class _Bluestein:
    def __init__(self, n, sign):
        self.n = n
        j = np.arange(n)
        # exp(sign*pi*i*j^2/n) with j^2 reduced mod 2n
        self.chirp = np.exp(sign * 1j * np.pi * (np.mod(j * j, 2 * n) / n))
        size = 1
        while size < 2 * n - 1:
            size *= 2
        self.size = size
        self.fwd = _kernel(size, -1)
        self.bwd = _kernel(size, 1)
        filt = np.zeros((1, size), dtype=COMPLEX)
        filt[0, :n] = np.conj(self.chirp)
        filt[0, size - n + 1 :] = np.conj(self.chirp[1:])[::-1]
        self.filt_hat = self.fwd.apply(filt)[0] / size

    def apply(self, x):
        b = x.shape[0]
        a = np.zeros((b, self.size), dtype=COMPLEX)
        np.multiply(x, self.chirp, out=a[:, : self.n])
        conv = self.bwd.apply(self.fwd.apply(a) * self.filt_hat)
        return conv[:, : self.n] * self.chirp


@functools.lru_cache(maxsize=None)
def _kernel(n: int, sign: int):
    if n == 1:
        return _Identity()
    if n == 2:
        return _Radix2()
    radix = _smallest_factor(n)
    if radix == n:
        return _Direct(n, sign) if n <= DIRECT_MAX else _Bluestein(n, sign)
    return _Stage(n, radix, sign)


class FftPlan1D:
    """Reusable transform of length ``n``; applying it never mutates the plan."""

    def __init__(self, n: int, direction: Direction = Direction.FORWARD):
        if int(n) != n or n < 1:
            raise ValueError(f"transform length must be a positive integer, got {n!r}")
        self.n = int(n)
        self.direction = Direction(direction)
        self._kernel = _kernel(self.n, int(self.direction))

    def __repr__(self):
        return f"FftPlan1D(n={self.n}, direction={self.direction.name})"

    def apply_batch(self, rows: np.ndarray) -> np.ndarray:
        """Transform each row of a 2-D ``(batch, n)`` array; returns a new array."""
        if rows.ndim != 2 or rows.shape[1] != self.n:
            raise ContractError(f"expected rows of length {self.n}, got shape {rows.shape}")
        if rows.shape[0] == 0:
            return np.empty((0, self.n), dtype=COMPLEX)
        return self._kernel.apply(np.asarray(rows, dtype=COMPLEX))


def fft1d(plan: FftPlan1D, row: np.ndarray) -> np.ndarray:
    row = np.asarray(row, dtype=COMPLEX)
    if row.ndim != 1 or row.shape[0] != plan.n:
        raise ContractError(f"expected a row of length {plan.n}, got shape {row.shape}")
    return plan.apply_batch(row.reshape(1, -1))[0]


def fft_rows(plan: FftPlan1D, slab_data: np.ndarray, row_count: int, out: np.ndarray | None = None) -> np.ndarray:
    """Transform ``row_count`` contiguous rows of length ``plan.n``.

    ``out`` may alias ``slab_data``; the result is written there when given.
    """
    slab_data = np.asarray(slab_data)
    if slab_data.size != row_count * plan.n:
        raise ContractError(
            f"slab holds {slab_data.size} samples, expected {row_count} rows of {plan.n}"
        )
    res = plan.apply_batch(slab_data.reshape(row_count, plan.n))
    if out is None:
        return res.reshape(-1)
    out.reshape(row_count, plan.n)[...] = res
    return out
