import numpy as np
import pytest
from conftest import oracle_relocation, oracle_volume, valid_nps

from adaptfft.decomposition import SlabForm
from adaptfft.errors import UnsupportedScaleError
from adaptfft.grid import DimOrder, GridDims
from adaptfft.transpose import build_plan, pipeline_plans, pipeline_volume, volume_of

ABC, CAB, CBA = DimOrder.ABC, DimOrder.CAB, DimOrder.CBA


def assert_matches_oracle(plan, shape, src, dst):
    local, pairs = oracle_relocation(shape, plan.nprocs, src, dst)
    for rp in plan.ranks:
        assert set(rp.local_map) == local[rp.rank]
        assert len(rp.local_map) == len(local[rp.rank])
        for q in range(plan.nprocs):
            expected = pairs.get((rp.rank, q), [])
            assert rp.send_map(q).tolist() == [e[0] for e in expected]
            expected_in = pairs.get((q, rp.rank), [])
            assert rp.recv_map(q).tolist() == [e[1] for e in expected_in]


def test_single_rank_is_all_local():
    plan = build_plan(GridDims(4, 4, 4), 1, ABC, CAB)
    rp = plan[0]
    assert len(rp.local_map) == 64
    assert rp.total_send == rp.total_recv == 0
    assert volume_of(plan).total_bytes == 0


def test_oracle_4cube_np8_abc_cab():
    plan = build_plan(GridDims(4, 4, 4), 8, ABC, CAB)
    assert_matches_oracle(plan, (4, 4, 4), "abc", "cab")


def test_cab_cba_locality_8cube_np4():
    plan = build_plan(GridDims(8, 8, 8), 4, CAB, CBA)
    assert_matches_oracle(plan, (8, 8, 8), "cab", "cba")
    for rp in plan.ranks:
        assert len(rp.local_map) >= rp.total_send


@pytest.mark.parametrize("shape", [(2, 2, 2), (4, 4, 4), (4, 6, 8), (5, 7, 3), (3, 1, 5), (16, 16, 16)])
def test_oracle_equivalence_all_valid_np(shape):
    dims = GridDims(*shape)
    nps = valid_nps(dims, range(1, 65))
    if dims.total > 512:
        nps = [n for n in nps if n in (1, 3, 16, 17, 64)]
    for n in nps:
        for src, dst in ((ABC, CAB), (CAB, CBA)):
            assert_matches_oracle(build_plan(dims, n, src, dst), shape, src.label, dst.label)


@pytest.mark.parametrize("shape,nprocs", [((4, 6, 8), 5), ((8, 8, 8), 16), ((5, 7, 3), 13)])
def test_conservation_and_symmetry(shape, nprocs):
    dims = GridDims(*shape)
    plan = build_plan(dims, nprocs, CAB, CBA)
    for rp in plan.ranks:
        assert rp.send_counts[rp.rank] == 0 and rp.recv_counts[rp.rank] == 0
        assert len(rp.local_src) + rp.total_send == rp.src_count
        assert len(rp.local_dst) + rp.total_recv == rp.dst_count
        # each local offset used exactly once on both sides
        src_used = np.concatenate([rp.local_src, rp.send_idx])
        dst_used = np.concatenate([rp.local_dst, rp.recv_idx])
        np.testing.assert_array_equal(np.sort(src_used), np.arange(rp.src_count))
        np.testing.assert_array_equal(np.sort(dst_used), np.arange(rp.dst_count))
    for p in range(nprocs):
        for q in range(nprocs):
            assert plan[p].send_counts[q] == plan[q].recv_counts[p]
    assert sum(int(rp.send_bytes.sum()) for rp in plan.ranks) == sum(int(rp.recv_bytes.sum()) for rp in plan.ranks)


def test_plans_are_immutable_and_cached():
    a = build_plan(GridDims(4, 4, 4), 4, ABC, CAB)
    assert build_plan(GridDims(4, 4, 4), 4, ABC, CAB) is a
    with pytest.raises(ValueError):
        a[0].send_idx[0] = 1


def test_volume_report():
    d = GridDims(8, 8, 8)
    v8, v16 = pipeline_volume(d, 8), pipeline_volume(d, 16)
    assert v16.total_bytes > v8.total_bytes
    assert v8.decomposition_form is SlabForm.ONE_D and v16.decomposition_form is SlabForm.TWO_D
    assert v8.total_bytes == sum(v8.per_rank_bytes)
    assert pipeline_volume(d, 1).total_bytes == 0
    assert v8.as_dict()["decomposition_form"] == "1d"


def test_pipeline_plans_4cube_np2_union_matches_oracle():
    first, second = pipeline_plans(GridDims(4, 4, 4), 2)
    assert (first.src_order, first.dst_order, second.dst_order) == (ABC, CAB, CBA)
    assert pipeline_volume(GridDims(4, 4, 4), 2).total_bytes == oracle_volume((4, 4, 4), 2, ["abc", "cab", "cba"])


def test_pipeline_beats_bca_route_8cube_np4():
    ours = pipeline_volume(GridDims(8, 8, 8), 4).total_bytes
    assert ours == oracle_volume((8, 8, 8), 4, ["abc", "cab", "cba"])
    assert ours <= oracle_volume((8, 8, 8), 4, ["abc", "bca", "cba"])


def test_unsupported_scale():
    with pytest.raises(UnsupportedScaleError):
        build_plan(GridDims(5, 7, 3), 16, ABC, CAB)  # cab rows: 3*5 = 15
    with pytest.raises(UnsupportedScaleError):
        pipeline_plans(GridDims(2, 2, 2), 5)
