import math
import warnings

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sphere_lsf.errors import DomainError, TooSmallError
from sphere_lsf.params import (
    MIN_FILTERS,
    ApplicabilityWarning,
    band_limits,
    derive_ann_params,
    derive_privacy_params,
    derive_tensor_params,
    euclidean_to_sphere_thresholds,
    query_exponent,
)

mpmath.mp.dps = 40


def test_desk_scale_ann_params_match_extended_precision():
    p = derive_ann_params(1024, 0.5, 0.1)
    exponent = mpmath.mpf("0.99") / mpmath.mpf("0.95") ** 2
    m_exact = mpmath.ceil(mpmath.mpf(1024) ** exponent)
    assert p.m == int(m_exact) == 2006
    assert p.rho == pytest.approx(0.822715, abs=1e-6)
    ln_m = mpmath.log(p.m)
    eta = 0.5 * mpmath.sqrt(2 * ln_m) - mpmath.sqrt(2 * 0.75 * mpmath.log(ln_m))
    assert p.eta == pytest.approx(float(eta), abs=1e-12)
    assert p.eta == pytest.approx(0.206, abs=1e-3)


def test_beta_zero_gives_rho_one_minus_alpha_squared():
    for alpha in (0.3, 0.5, 0.9):
        assert derive_ann_params(5000, alpha, 0.0).rho == 1 - alpha * alpha


def test_ordering_violation():
    with pytest.raises(DomainError):
        derive_ann_params(1024, 0.1, 0.5)


def test_too_small():
    with pytest.raises(TooSmallError):
        derive_ann_params(4, 0.5, 0.1)
    with pytest.raises(TooSmallError):
        band_limits(MIN_FILTERS - 1)


def test_tensor_params_desk_scale():
    tp = derive_tensor_params(1024, 0.5, 0.1)
    assert float(mpmath.log(1024) ** mpmath.mpf("0.125") / mpmath.mpf("0.75")) == pytest.approx(1.698, abs=1e-3)
    assert tp.t == 2
    m_tilde = mpmath.ceil(mpmath.mpf(1024) ** (mpmath.mpf("0.99") / mpmath.mpf("0.95") ** 2 / 2))
    assert tp.m_tilde == int(m_tilde) == 45
    assert tp.total_filters == 90 < derive_ann_params(1024, 0.5, 0.1).m
    assert tp.band_lo < tp.band_hi == pytest.approx(math.sqrt(2 * math.log(45)))


def test_tensor_t_override():
    assert derive_tensor_params(1024, 0.5, 0.1, t=1).m_tilde == derive_ann_params(1024, 0.5, 0.1).m


@given(st.integers(16, 10**7))
def test_band_is_nonempty(m):
    lo, hi = band_limits(m)
    assert lo < hi


@given(
    st.integers(64, 10**6),
    st.floats(0.05, 0.95),
    st.floats(0.0, 0.9),
)
def test_ann_invariants(n, alpha, beta):
    if beta >= alpha - 1e-3:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ApplicabilityWarning)
        try:
            p = derive_ann_params(n, alpha, beta)
        except TooSmallError:
            return
        again = derive_ann_params(n, alpha, beta)
    assert p == again
    assert 0 < p.rho <= 1
    assert p.eta < alpha * math.sqrt(2 * math.log(p.m))
    # balancing identity: m^(1-a^2) = n m^(-(a-b)^2/(1-b^2)), slack from the ceiling
    lhs = (1 - alpha**2) * math.log(p.m)
    rhs = math.log(n) - (alpha - beta) ** 2 / (1 - beta**2) * math.log(p.m)
    assert abs(lhs - rhs) <= math.log(p.m) / p.m + 1e-9 * math.log(p.m)


def test_applicability_warning_is_soft():
    with pytest.warns(ApplicabilityWarning):
        p = derive_ann_params(1024, 0.5, 0.1)
    assert not p.applicable
    with warnings.catch_warnings():
        warnings.simplefilter("error", ApplicabilityWarning)
        assert derive_ann_params(10**6, 0.9, 0.1).applicable


def test_privacy_params():
    p = derive_privacy_params(1.0, 0.1)
    assert p.A == pytest.approx(float(mpmath.log(1 + (mpmath.e - 1) / mpmath.mpf("0.2"))), abs=1e-12)
    assert p.A == pytest.approx(2.2609, abs=1e-4)
    assert p.tau == p.A
    assert derive_privacy_params(0.7, 0.5 - 1e-12, 3).A == pytest.approx(3.0, abs=1e-9)
    with pytest.raises(DomainError):
        derive_privacy_params(-1.0, 0.1)
    with pytest.raises(DomainError):
        derive_privacy_params(1.0, 0.5)


def test_euclidean_thresholds():
    a, b = euclidean_to_sphere_thresholds(1.0, math.sqrt(2))
    assert a == 0.5
    assert b == pytest.approx(0.0, abs=1e-15)
    a, b = euclidean_to_sphere_thresholds(0.05, 2.0)
    assert abs(query_exponent(a, b) - 4 * 4 / 25) <= 0.01
    with pytest.raises(DomainError):
        euclidean_to_sphere_thresholds(1.0, 2.0)
