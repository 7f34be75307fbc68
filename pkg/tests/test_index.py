import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unit_rows
from sphere_lsf.errors import DimensionError, FormatError
from sphere_lsf.experiments import gen_planted
from sphere_lsf.index import (
    CLOSETOP1,
    TENSOR,
    TOP1,
    SphereDataset,
    build_closetop1,
    build_index,
    build_tensor,
    build_top1,
    index_from_bytes,
    index_to_bytes,
    inspected_point_ids,
    query_ann,
    query_count,
    query_count_batch,
    query_search_buckets,
    search_lists,
    structure_from_bytes,
    structure_to_bytes,
    to_count_table,
)
from sphere_lsf.oracle import brute_force
from sphere_lsf.params import ApplicabilityWarning, derive_ann_params, derive_tensor_params

warnings.simplefilter("ignore", ApplicabilityWarning)

DESK = derive_ann_params(1024, 0.5, 0.1)
DESK_T = derive_tensor_params(1024, 0.5, 0.1)
SMALL = derive_ann_params(200, 0.5, 0.1)
SMALL_T = derive_tensor_params(200, 0.5, 0.1, t=2)


def _all(dataset, seed=0, eta_override=None):
    return [
        build_top1(dataset, SMALL, seed, eta_override),
        build_closetop1(dataset, SMALL, seed, eta_override),
        build_tensor(dataset, SMALL, SMALL_T, seed, eta_override),
    ]


def test_single_point_top1():
    x = unit_rows(np.random.default_rng(0), 1, 8)
    idx = build_top1(SphereDataset(x), SMALL, 1)
    assert idx.table.n_stored == 1 and len(idx.table.keys) == 1


def test_duplicates_share_a_bucket():
    x = unit_rows(np.random.default_rng(0), 1, 8)
    for idx in _all(SphereDataset(np.vstack([x, x])), 3):
        if idx.table.n_stored:
            assert len(idx.table.keys) == 1 and idx.table.bucket(0) == [0, 1]


def test_empty_dataset():
    for idx in _all(SphereDataset.empty(8)):
        assert idx.table.n_stored == 0 and idx.dropped == []
        counts = to_count_table(idx)
        assert counts.total == 0
        q = unit_rows(np.random.default_rng(1), 1, 8)[0]
        assert query_ann(idx, q).point_id is None
        assert query_count(counts, idx, q)[0] == 0


def test_linear_space_and_count_table(small_dataset):
    for idx in _all(small_dataset, 5):
        buckets = idx.buckets()
        ids = [i for b in buckets.values() for i in b]
        assert len(ids) == len(set(ids))
        assert len(ids) + len(idx.dropped) == small_dataset.n
        assert not set(ids) & set(idx.dropped)
        counts = to_count_table(idx)
        assert counts.total == len(ids)
        assert counts.as_dict() == {k: len(v) for k, v in buckets.items()}
        assert counts.total + counts.dropped == small_dataset.n
        if idx.kind == TOP1:
            assert counts.total == small_dataset.n


def test_top1_desk_scale_stores_everything():
    inst = gen_planted(1024, 64, 0.5, 1, 0)
    assert to_count_table(build_top1(inst.dataset, DESK, 1)).total == 1024


def test_stored_projections_lie_in_band(small_dataset):
    idx = build_closetop1(small_dataset, SMALL, 9)
    lo, hi = idx.band
    for key, ids in idx.buckets().items():
        proj = small_dataset.points[ids] @ idx.banks[0].vectors[key]
        assert np.all((proj >= lo) & (proj <= hi))
    stored = ~np.isnan(idx.projections[:, 0])
    assert np.all((idx.projections[stored, 0] >= lo) & (idx.projections[stored, 0] <= hi))


def test_tensor_drops_are_exactly_points_absent_somewhere(small_dataset):
    idx = build_tensor(small_dataset, SMALL, SMALL_T, 4)
    lo, hi = idx.band
    missing = set()
    for bank in idx.banks:
        proj = small_dataset.points @ bank.vectors.T
        missing |= set(np.flatnonzero(~((proj >= lo) & (proj <= hi)).any(axis=1)).tolist())
    assert set(idx.dropped) == missing


def test_tensor_t1_equals_closetop1(small_dataset):
    t1 = derive_tensor_params(200, 0.5, 0.1, t=1)
    a = build_tensor(small_dataset, SMALL, t1, 17)
    b = build_closetop1(small_dataset, SMALL, 17)
    assert a.banks[0].same_as(b.banks[0]) and a.eta == b.eta and a.band == b.band
    assert {k[0]: v for k, v in a.buckets().items()} == b.buckets()
    assert a.dropped == b.dropped


def test_order_independence(small_dataset):
    perm = np.random.default_rng(3).permutation(small_dataset.n)
    shuffled = SphereDataset(small_dataset.points[perm])
    for kind in (TOP1, CLOSETOP1, TENSOR):
        a = build_index(kind, small_dataset, SMALL, 2, SMALL_T)
        b = build_index(kind, shuffled, SMALL, 2, SMALL_T)
        relabel = {k: sorted(perm[i] for i in v) for k, v in b.buckets().items()}
        assert relabel == a.buckets()


def test_tensor_search_is_cartesian_product(small_dataset):
    idx = build_tensor(small_dataset, SMALL, SMALL_T, 6)
    rng = np.random.default_rng(4)
    for q in unit_rows(rng, 20, small_dataset.d):
        lists = search_lists(idx, q)
        keys = query_search_buckets(idx, q)
        assert keys == sorted(keys)
        assert len(keys) == math.prod(len(x) for x in lists)
        assert query_ann(idx, q).cost.buckets_inspected == len(keys)


def test_empty_sub_list_gives_empty_product(small_dataset):
    idx = build_tensor(small_dataset, SMALL, SMALL_T, 6, eta_override=np.inf)
    q = unit_rows(np.random.default_rng(0), 1, small_dataset.d)[0]
    assert query_search_buckets(idx, q) == []
    assert query_ann(idx, q).point_id is None


def test_query_ann_postcondition_replay(small_dataset):
    rng = np.random.default_rng(10)
    for idx in _all(small_dataset, 8):
        for q in unit_rows(rng, 30, small_dataset.d):
            res = query_ann(idx, q)
            inspected = inspected_point_ids(idx, q)
            near = inspected[small_dataset.points[inspected] @ q >= idx.beta]
            if res.point_id is None:
                assert near.size == 0
            else:
                assert small_dataset.points[res.point_id] @ q >= idx.beta
                assert res.point_id in inspected
            assert res.cost.filters_evaluated == sum(b.m for b in idx.banks)
            assert res.cost.inner_products == res.cost.filters_evaluated + res.cost.points_inspected


def test_query_containing_itself_top1(small_dataset):
    idx = build_top1(small_dataset, SMALL, 1)
    for i in range(20):
        res = query_ann(idx, small_dataset.points[i])
        if res.cost.buckets_inspected:
            assert res.point_id is not None
            assert small_dataset.points[res.point_id] @ small_dataset.points[i] >= SMALL.beta


def test_orthogonal_query_returns_none():
    d = 8
    pts = np.zeros((10, d))
    pts[np.arange(10), np.arange(10) % (d - 1) + 1] = 1.0
    q = np.zeros(d)
    q[0] = 1.0
    for idx in _all(SphereDataset(pts), 2, eta_override=-np.inf):
        assert query_ann(idx, q).point_id is None


def test_dimension_mismatch(small_dataset):
    idx = build_top1(small_dataset, SMALL, 1)
    with pytest.raises(DimensionError):
        query_ann(idx, np.ones(3) / math.sqrt(3))


def test_eta_minus_infinity_counts_everything(small_dataset):
    for idx in _all(small_dataset, 3, eta_override=-np.inf):
        counts = to_count_table(idx)
        q = unit_rows(np.random.default_rng(2), 1, small_dataset.d)[0]
        assert query_count(counts, idx, q)[0] == counts.total


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_count_matches_recomputed_bucket_sum(seed):
    rng = np.random.default_rng(seed)
    ds = SphereDataset(unit_rows(rng, 120, 10))
    queries = unit_rows(rng, 10, 10)
    for idx in _all(ds, seed):
        counts = to_count_table(idx)
        batch, _ = query_count_batch(counts, idx, queries)
        for j, q in enumerate(queries):
            lists = [set(x) for x in search_lists(idx, q)]
            expect = 0
            for key, ids in idx.buckets().items():
                key = key if isinstance(key, tuple) else (key,)
                if all(k in s for k, s in zip(key, lists)):
                    expect += len(ids)
            assert query_count(counts, idx, q)[0] == expect == batch[j]
            assert expect <= ds.n


def test_planted_count_bounds():
    inst = gen_planted(1024, 64, 0.5, 20, 2)
    truth = brute_force(inst.dataset, inst.query, 0.5, 0.1)
    assert truth.close_count >= 20
    for idx in (build_top1(inst.dataset, DESK, 3), build_closetop1(inst.dataset, DESK, 3)):
        counts = to_count_table(idx)
        c, cost = query_count(counts, idx, inst.query, beta=0.1)
        assert c >= 0.6 * 20
        assert c <= truth.beta_count + cost.far_points_inspected
        inspected = inspected_point_ids(idx, inst.query)
        sims = inst.dataset.points[inspected] @ inst.query
        assert c == (sims >= 0.1).sum() + cost.far_points_inspected


def test_tensor_uses_fewer_filters():
    assert DESK_T.t * DESK_T.m_tilde == 90 < DESK.m


def test_index_round_trip(small_dataset, tmp_path):
    for idx in _all(small_dataset, 21):
        buf = index_to_bytes(idx)
        back = index_from_bytes(buf, small_dataset)
        assert back.kind == idx.kind and back.eta == idx.eta and back.band == idx.band
        assert all(a.same_as(b) for a, b in zip(back.banks, idx.banks))
        assert back.buckets() == idx.buckets() and back.dropped == idx.dropped
        assert index_to_bytes(back) == buf
        with pytest.raises(FormatError):
            index_from_bytes(buf[:-1], small_dataset)
        s = structure_from_bytes(structure_to_bytes(idx.structure))
        assert s.eta == idx.eta and s.kind == idx.kind and all(a.same_as(b) for a, b in zip(s.banks, idx.banks))


def test_index_is_immutable(small_dataset):
    idx = build_top1(small_dataset, SMALL, 1)
    with pytest.raises(ValueError):
        idx.dataset.points[0, 0] = 0.0
    with pytest.raises(Exception):
        idx.eta = 0.0


def test_search_keys_exhaustive_for_tensor(small_dataset):
    idx = build_tensor(small_dataset, SMALL, SMALL_T, 30)
    q = unit_rows(np.random.default_rng(5), 1, small_dataset.d)[0]
    proj = [b.vectors @ q for b in idx.banks]
    brute = [k for k in itertools.product(*(range(b.m) for b in idx.banks))
             if all(p[j] >= idx.eta for p, j in zip(proj, k))]
    assert query_search_buckets(idx, q) == brute
