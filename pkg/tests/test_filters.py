import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import unit_rows
from sphere_lsf.errors import AllocationError, DimensionError, FormatError, NormError
from sphere_lsf.filters import (
    assign_band,
    assign_band_batch,
    assign_top1,
    assign_top1_batch,
    bank_from_bytes,
    bank_to_bytes,
    build_bank,
    load_bank,
    save_bank,
    search,
)
from sphere_lsf.oracle import band_probability_mc, expected_max_gaussian
from sphere_lsf.params import band_limits
from sphere_lsf.rng import stream


def test_bank_determinism_and_row_independence():
    a = build_bank(8, 50, 7)
    b = build_bank(8, 50, 7)
    assert a.same_as(b)
    assert not a.same_as(build_bank(8, 50, 8))
    # row i does not depend on how many rows precede or follow it
    assert np.array_equal(build_bank(8, 10, 7).vectors, a.vectors[:10])
    assert np.array_equal(a.vectors[17], stream(7, "filter-row", 17).standard_normal(8))
    with pytest.raises(ValueError):
        a.vectors[0, 0] = 1.0


def test_bank_entries_are_standard_normal():
    v = build_bank(4, 1000, 3).vectors.ravel()
    assert abs(v.mean()) <= 4 / math.sqrt(4000)
    assert stats.kstest(v, "norm").pvalue > 1e-3


def test_degenerate_bank():
    bank = build_bank(1, 1, 99)
    assert bank.vectors.shape == (1, 1)


def test_allocation_budget():
    with pytest.raises(AllocationError):
        build_bank(100, 100, 0, max_bytes=8 * 100 * 100 - 1)


def test_point_validation():
    bank = build_bank(4, 5, 0)
    with pytest.raises(DimensionError):
        assign_top1(bank, np.ones(3) / math.sqrt(3))
    with pytest.raises(NormError) as err:
        assign_top1_batch(bank, np.array([[1.0, 0, 0, 0], [2.0, 0, 0, 0]]))
    assert err.value.ids == [1]


def test_top1_single_filter():
    bank = build_bank(3, 1, 5)
    for x in unit_rows(np.random.default_rng(0), 10, 3):
        assert assign_top1(bank, x).filter_index == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 200))
def test_top1_optimality_and_batch_agreement(seed, m):
    rng = np.random.default_rng(seed)
    bank = build_bank(6, m, seed)
    pts = unit_rows(rng, 20, 6)
    idx, proj = assign_top1_batch(bank, pts)
    full = pts @ bank.vectors.T
    assert np.all(proj >= full.max(axis=1))
    for i, x in enumerate(pts):
        a = assign_top1(bank, x, i)
        assert a.filter_index == idx[i]
        assert a.projection == pytest.approx(proj[i], abs=1e-12)


def test_top1_ties_go_to_lowest_index():
    bank = build_bank(2, 4, 0)
    object.__setattr__(bank, "vectors", np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.5, 0.0]]))
    assert assign_top1(bank, np.array([1.0, 0.0])).filter_index == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(-1.0, 2.0), st.floats(0.05, 2.0))
def test_band_membership(seed, lo, width):
    rng = np.random.default_rng(seed)
    bank = build_bank(5, 30, seed)
    pts = unit_rows(rng, 15, 5)
    idx, proj = assign_band_batch(bank, pts, lo, lo + width)
    full = pts @ bank.vectors.T
    for i in range(len(pts)):
        inside = np.flatnonzero((full[i] >= lo) & (full[i] <= lo + width))
        if inside.size == 0:
            assert idx[i] == -1 and np.isnan(proj[i])
            assert assign_band(bank, pts[i], lo, lo + width).filter_index is None
        else:
            assert idx[i] == inside[0]
            assert lo <= proj[i] <= lo + width
            assert assign_band(bank, pts[i], lo, lo + width).filter_index == inside[0]


def test_band_extremes():
    bank = build_bank(4, 20, 1)
    x = unit_rows(np.random.default_rng(1), 1, 4)[0]
    assert assign_band(bank, x, -np.inf, np.inf).filter_index == 0
    hi = band_limits(20)[1]
    assert assign_band(bank, x, hi, hi).filter_index is None


def test_band_drop_rate_averaged_over_banks():
    m = 64
    lo, hi = band_limits(m)
    p_hat, _ = band_probability_mc(m, 10**6, 12)
    rng = np.random.default_rng(3)
    drops = []
    for s in range(100):
        idx, _ = assign_band_batch(build_bank(8, m, s), unit_rows(rng, 100, 8), lo, hi)
        drops.append(np.mean(idx < 0))
    bound = (1 - p_hat) ** m
    assert np.mean(drops) <= bound + 3 * np.std(drops, ddof=1) / math.sqrt(len(drops))


def test_search_basics():
    bank = build_bank(6, 40, 2)
    q = unit_rows(np.random.default_rng(5), 1, 6)[0]
    assert search(bank, q, -np.inf) == list(range(40))
    assert search(bank, q, np.inf) == []
    s1, s2 = search(bank, q, -0.3), search(bank, q, 0.4)
    assert set(s2) <= set(s1)
    assert s1 == sorted(s1)


def test_search_length_matches_gaussian_cdf():
    m, eta = 2006, 0.20544
    p = stats.norm.sf(eta)
    rng = np.random.default_rng(6)
    lengths = [len(search(build_bank(32, m, s), unit_rows(rng, 1, 32)[0], eta)) for s in range(30)]
    assert abs(np.mean(lengths) - m * p) <= 3 * math.sqrt(m * p * (1 - p) / len(lengths))
    assert m * p == pytest.approx(839.3, abs=1.0)


def test_top1_winner_matches_expected_gaussian_maximum():
    m, trials = 2005, 200
    rng = np.random.default_rng(7)
    wins = [assign_top1(build_bank(32, m, s), unit_rows(rng, 1, 32)[0]).projection for s in range(trials)]
    se = np.std(wins, ddof=1) / math.sqrt(trials)
    assert abs(np.mean(wins) - expected_max_gaussian(m)) <= 3 * se


def test_concomitant_projection_of_query():
    # projection of q onto x's Top-1 filter has mean varrho * E[X_(m)]
    m, varrho, trials = 500, 0.6, 400
    rng = np.random.default_rng(8)
    xs, qs = [], []
    for s in range(trials):
        bank = build_bank(16, m, 1000 + s)
        x = unit_rows(rng, 1, 16)[0]
        u = rng.standard_normal(16)
        u -= (u @ x) * x
        q = varrho * x + math.sqrt(1 - varrho**2) * u / np.linalg.norm(u)
        a = assign_top1(bank, x)
        xs.append(a.projection)
        qs.append(bank.vectors[a.filter_index] @ q)
    diff = np.asarray(qs) - varrho * np.asarray(xs)
    assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / math.sqrt(trials)
    assert diff.var(ddof=1) == pytest.approx(1 - varrho**2, rel=0.2)


def test_bank_round_trip(tmp_path):
    bank = build_bank(7, 13, 2**63 + 5)
    path = tmp_path / "b.lsfb"
    save_bank(bank, path)
    assert load_bank(path).same_as(bank)
    buf = bank_to_bytes(bank)
    assert buf[:4] == b"LSFB"
    with pytest.raises(FormatError) as err:
        bank_from_bytes(buf[:-3])
    assert err.value.offset == len(buf) - 3
    with pytest.raises(FormatError):
        bank_from_bytes(b"XXXX" + buf[4:])
