"""Constants derived from ``(n, alpha, beta, epsilon, delta)``.

All logarithms are natural. The filter threshold and the CloseTop-1 band are
not invariant under a change of base, so this choice is part of the contract.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import DomainError, TooSmallError

MIN_FILTERS = 16


class ApplicabilityWarning(UserWarning):
    """The finite-n surrogate of an asymptotic precondition is violated."""


def filter_exponent(alpha: float, beta: float) -> float:
    """Exponent x in m = n^x that balances buckets against far points."""
    return (1.0 - beta * beta) / (1.0 - alpha * beta) ** 2


def query_exponent(alpha: float, beta: float) -> float:
    """rho = (1 - a^2)(1 - b^2) / (1 - ab)^2."""
    return (1.0 - alpha * alpha) * (1.0 - beta * beta) / (1.0 - alpha * beta) ** 2


def query_threshold(alpha: float, m: int) -> float:
    """Projection threshold a query filter must reach to be inspected."""
    if m < MIN_FILTERS:
        raise TooSmallError(f"m={m} < {MIN_FILTERS}: ln ln m is not positive")
    ln_m = math.log(m)
    return alpha * math.sqrt(2.0 * ln_m) - math.sqrt(2.0 * (1.0 - alpha * alpha) * math.log(ln_m))


def band_limits(m: int) -> tuple[float, float]:
    """Closed band ``[lo, hi]`` a CloseTop-1 projection must fall into."""
    if m < MIN_FILTERS:
        raise TooSmallError(f"m={m} < {MIN_FILTERS}: ln ln m is not positive")
    hi = math.sqrt(2.0 * math.log(m))
    lo = hi - 1.5 * math.log(math.log(m)) / hi
    return lo, hi


def _check_thresholds(alpha: float, beta: float) -> None:
    if not (0.0 <= beta < alpha < 1.0):
        raise DomainError(f"need 0 <= beta < alpha < 1, got alpha={alpha}, beta={beta}")


def _separation_ok(alpha: float, beta: float, m: int) -> bool:
    ln_m = math.log(m)
    return alpha - beta >= math.sqrt((1.0 - alpha * alpha) * math.log(ln_m) / ln_m)


@dataclass(frozen=True)
class AnnParams:
    alpha: float
    beta: float
    n: int
    m: int
    eta: float
    rho: float
    applicable: bool = True

    @property
    def exponent(self) -> float:
        return filter_exponent(self.alpha, self.beta)


@dataclass(frozen=True)
class TensorParams:
    t: int
    m_tilde: int
    band_lo: float
    band_hi: float
    eta: float
    applicable: bool = True

    @property
    def total_filters(self) -> int:
        return self.t * self.m_tilde


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    sensitivity: int
    A: float
    tau: float


def derive_ann_params(n: int, alpha: float, beta: float) -> AnnParams:
    """Filter count, query threshold and query exponent for a flat index.

    Args:
        n: Dataset size.
        alpha: Similarity a near point has with the query.
        beta: Similarity below which a returned point is wrong.

    Raises:
        DomainError: ``n < 2`` or the thresholds are not ordered.
        TooSmallError: the derived ``m`` is below 16.
    """
    _check_thresholds(alpha, beta)
    if n < 2:
        raise DomainError(f"need n >= 2, got {n}")
    m = math.ceil(n ** filter_exponent(alpha, beta))
    eta = query_threshold(alpha, m)
    ok = _separation_ok(alpha, beta, m)
    if not ok:
        warnings.warn(
            f"alpha - beta = {alpha - beta:.4f} is below sqrt((1-alpha^2) lnln m / ln m) at m={m}; "
            "recall and far-point guarantees are weaker",
            ApplicabilityWarning,
            stacklevel=2,
        )
    return AnnParams(alpha, beta, n, m, eta, query_exponent(alpha, beta), ok)


def derive_tensor_params(n: int, alpha: float, beta: float, t: int | None = None) -> TensorParams:
    """Concatenation factor and per-sub-structure filter count.

    ``t`` may be forced (e.g. ``t=1`` reduces to a flat CloseTop-1); otherwise
    it is ``ceil(ln(n)^(1/8) / (1 - alpha^2))``.
    """
    _check_thresholds(alpha, beta)
    if n < 2:
        raise DomainError(f"need n >= 2, got {n}")
    if t is None:
        t = math.ceil(math.log(n) ** 0.125 / (1.0 - alpha * alpha))
    if t < 1:
        raise DomainError(f"need t >= 1, got {t}")
    m_tilde = math.ceil(n ** (filter_exponent(alpha, beta) / t))
    lo, hi = band_limits(m_tilde)
    eta = query_threshold(alpha, m_tilde)
    ok = _separation_ok(alpha, beta, m_tilde) and (1.0 - alpha * alpha) >= math.log(n) ** -0.75
    if not ok:
        warnings.warn(
            f"tensor preconditions fail their finite-n surrogates at n={n}, t={t}, m~={m_tilde}",
            ApplicabilityWarning,
            stacklevel=2,
        )
    return TensorParams(t, m_tilde, lo, hi, eta, ok)


def truncation_bound(epsilon: float, delta: float, sensitivity: float = 1.0) -> float:
    if epsilon > 30.0:
        # ln(1 + (e^eps - 1) / 2delta) = eps + ln((1 - e^-eps) / 2delta + e^-eps), no overflow
        tail = math.exp(-epsilon)
        return (sensitivity / epsilon) * (epsilon + math.log((1.0 - tail) / (2.0 * delta) + tail))
    return (sensitivity / epsilon) * math.log1p(math.expm1(epsilon) / (2.0 * delta))


def derive_privacy_params(epsilon: float, delta: float, sensitivity: int = 1) -> PrivacyParams:
    """Truncation bound ``A`` and zeroing threshold ``tau``.

    Raises:
        DomainError: ``epsilon <= 0``, ``delta`` outside (0, 1/2) or
            ``sensitivity < 1``.
    """
    if not (epsilon > 0.0 and math.isfinite(epsilon)):
        raise DomainError(f"epsilon must be positive and finite, got {epsilon}")
    if not (0.0 < delta < 0.5):
        raise DomainError(f"delta must lie in (0, 1/2), got {delta}")
    if sensitivity < 1:
        raise DomainError(f"sensitivity must be >= 1, got {sensitivity}")
    A = truncation_bound(epsilon, delta, sensitivity)
    tau = truncation_bound(epsilon, delta, 1.0)
    return PrivacyParams(float(epsilon), float(delta), int(sensitivity), A, tau)


def euclidean_to_sphere_thresholds(r: float, c: float) -> tuple[float, float]:
    """Map a Euclidean ``(c, r)`` problem on the sphere to ``(alpha, beta)``."""
    if not r > 0.0:
        raise DomainError(f"need r > 0, got {r}")
    if not c > 1.0:
        raise DomainError(f"need c > 1, got {c}")
    alpha = 1.0 - r * r / 2.0
    beta = 1.0 - (c * r) ** 2 / 2.0
    if -1e-12 < beta < 0.0:
        # (c r)^2 = 2 up to rounding
        beta = 0.0
    if beta < 0.0:
        raise DomainError(f"(c r)^2 = {(c * r) ** 2:.4f} > 2 gives beta < 0")
    if not alpha > beta:
        raise DomainError("alpha must exceed beta")
    return alpha, beta
