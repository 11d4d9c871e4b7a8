import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptfft.errors import BoundsError
from adaptfft.grid import (
    Coord3,
    DimOrder,
    GridDims,
    delinearize,
    from_abc,
    global_view,
    linearize,
    linearized,
    reorder_indices,
)

dims_st = st.builds(GridDims, st.integers(1, 8), st.integers(1, 8), st.integers(1, 8))


def test_linearize_examples():
    d4 = GridDims(4, 4, 4)
    assert linearize(DimOrder.ABC, d4, Coord3(1, 2, 3)) == 27
    assert linearize(DimOrder.ABC, GridDims(3, 5, 7), Coord3(0, 0, 0)) == 0
    # CBA over 2x3x4: coordinate sequence (c, b, a) = (1, 2, 0), lengths (4, 3, 2)
    assert linearize(DimOrder.CBA, GridDims(2, 3, 4), Coord3(1, 2, 0)) == 10


def test_delinearize_examples():
    d4 = GridDims(4, 4, 4)
    assert delinearize(DimOrder.ABC, d4, 27) == Coord3(1, 2, 3)
    assert delinearize(DimOrder.ABC, GridDims(5, 2, 3), 0) == Coord3(0, 0, 0)
    assert delinearize(DimOrder.ABC, d4, 24) == Coord3(1, 2, 0)


def test_bounds_errors():
    d = GridDims(2, 3, 4)
    with pytest.raises(BoundsError):
        linearize(DimOrder.ABC, d, Coord3(2, 0, 0))
    with pytest.raises(BoundsError):
        linearize(DimOrder.CAB, d, Coord3(0, 0, 3))  # CAB lengths are (4, 2, 3)
    with pytest.raises(BoundsError):
        delinearize(DimOrder.ABC, d, 24)
    with pytest.raises(BoundsError):
        delinearize(DimOrder.ABC, d, -1)


def test_griddims_validation_and_parse():
    with pytest.raises(ValueError):
        GridDims(0, 1, 1)
    with pytest.raises(ValueError):
        GridDims(1.5, 1, 1)
    assert GridDims.parse("4x6x8") == GridDims(4, 6, 8)
    assert GridDims.parse("16") == GridDims(16, 16, 16)
    assert str(GridDims(5, 7, 3)) == "5x7x3"
    assert GridDims(2, 3, 4).lengths(DimOrder.CAB) == (4, 2, 3)


def test_only_three_orders():
    assert {o.label for o in DimOrder} == {"abc", "cab", "cba"}
    with pytest.raises(ValueError):
        DimOrder((1, 2, 0))


@pytest.mark.parametrize("order", list(DimOrder))
@pytest.mark.parametrize("shape", [(1, 1, 1), (2, 3, 4), (8, 8, 8), (5, 1, 7)])
def test_exhaustive_round_trip_and_bijectivity(order, shape):
    dims = GridDims(*shape)
    lengths = dims.lengths(order)
    seen = []
    prev = -1
    # lexicographic iteration over the permuted tuple
    for c in itertools.product(*(range(n) for n in lengths)):
        x = linearize(order, dims, Coord3(*c))
        assert delinearize(order, dims, x) == c
        assert x > prev
        prev = x
        seen.append(x)
    assert sorted(seen) == list(range(dims.total))


@given(dims_st, st.sampled_from(list(DimOrder)), st.sampled_from(list(DimOrder)), st.data())
def test_reorder_indices_matches_scalar(dims, src, dst, data):
    x = data.draw(st.integers(0, dims.total - 1))
    c = delinearize(src, dims, x)
    abc = [0, 0, 0]
    for ax, v in zip(src.axes, c):
        abc[ax] = v
    expected = linearize(dst, dims, from_abc(dst, abc))
    assert reorder_indices(dims, src, dst, np.array([x]))[0] == expected


@pytest.mark.parametrize("order", list(DimOrder))
def test_global_view_inverts_linearized(order, rng):
    dims = GridDims(2, 3, 4)
    arr = rng.standard_normal(dims.shape)
    flat = linearized(arr, order)
    np.testing.assert_array_equal(global_view(flat, dims, order), arr)
    a, b, c = 1, 2, 3
    x = linearize(order, dims, from_abc(order, (a, b, c)))
    assert flat[x] == arr[a, b, c]
