"""Ground truth and statistical oracles.

Everything here is deliberately naive: full scans in double precision and
plain Monte-Carlo, so the index modules can be checked against something
beyond suspicion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .errors import DimensionError, DomainError
from .params import band_limits
from .rng import stream

# similarities within this distance of a threshold count as on it; planted
# points sit exactly on alpha and float rounding must not demote them
BOUNDARY_TOL = 1e-9

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GroundTruth:
    close_count: int
    mid_count: int
    far_ids: np.ndarray
    inner_products: np.ndarray

    @property
    def n(self) -> int:
        return len(self.inner_products)

    @property
    def beta_count(self) -> int:
        """``|S ∩ B(q, beta)|``, the upper end of a valid fuzzy count."""
        return self.close_count + self.mid_count


def brute_force(points: np.ndarray, q: np.ndarray, alpha: float, beta: float, tol: float = BOUNDARY_TOL) -> GroundTruth:
    """Classify every point by its similarity to ``q`` with a full scan.

    Args:
        points: (n, d) array, or anything with a ``points`` attribute.
        q: Query vector of dimension d.
        alpha: Close threshold.
        beta: Far threshold.
        tol: Slack granted at both thresholds.
    """
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if pts.ndim != 2 or q.ndim != 1 or (len(pts) and pts.shape[1] != q.shape[0]):
        raise DimensionError(f"dataset shape {pts.shape} does not match query shape {q.shape}")
    ips = pts @ q if len(pts) else np.empty(0)
    close = ips >= alpha - tol
    far = ips < beta - tol
    mid = ~close & ~far
    return GroundTruth(int(close.sum()), int(mid.sum()), np.flatnonzero(far), ips)


@dataclass(frozen=True)
class ConcomitantEstimate:
    mean_max: float
    mean_concomitant: float
    se_max: float
    se_concomitant: float
    trials: int


def concomitant_mc(m: int, varrho: float, trials: int, seed: int, chunk: int = 50) -> ConcomitantEstimate:
    """Estimate ``E[X_(m)]`` and ``E[Y_[m]]`` from bivariate normal samples.

    Each trial draws ``m`` pairs ``(X, Y)`` with correlation ``varrho`` and
    records the maximum ``X`` together with its partner ``Y``.
    """
    if m < 2:
        raise DomainError(f"need m >= 2, got {m}")
    if not -1.0 <= varrho <= 1.0:
        raise DomainError(f"need -1 <= varrho <= 1, got {varrho}")
    if trials < 100:
        raise DomainError(f"need trials >= 100, got {trials}")
    xs = np.empty(trials)
    ys = np.empty(trials)
    noise_scale = math.sqrt(1.0 - varrho * varrho)
    for start in range(0, trials, chunk):
        stop = min(start + chunk, trials)
        rng = stream(seed, "concomitant", start)
        x = rng.standard_normal((stop - start, m))
        w = rng.standard_normal((stop - start, m))
        y = varrho * x + noise_scale * w
        top = np.argmax(x, axis=1)
        rows = np.arange(stop - start)
        xs[start:stop] = x[rows, top]
        ys[start:stop] = y[rows, top]
    root = math.sqrt(trials)
    return ConcomitantEstimate(
        float(xs.mean()), float(ys.mean()), float(xs.std(ddof=1) / root), float(ys.std(ddof=1) / root), trials
    )


def gaussian_tail(t: float) -> tuple[float, float]:
    """Komatsu lower and upper bounds on ``Pr[Z >= t]``.

    The bounds are the Mills-ratio sandwich ``2 / (t + sqrt(t^2 + 4))`` and
    ``2 / (t + sqrt(t^2 + 2))`` times the standard normal density at ``t``.
    """
    if t < 0:
        raise DomainError(f"need t >= 0, got {t}")
    dens = _INV_SQRT_2PI * math.exp(-t * t / 2.0)
    return 2.0 / (t + math.sqrt(t * t + 4.0)) * dens, 2.0 / (t + math.sqrt(t * t + 2.0)) * dens


def gaussian_sf(t: float) -> float:
    """Exact ``Pr[Z >= t]`` via erfc."""
    return float(0.5 * special.erfc(t / math.sqrt(2.0)))


def expected_max_gaussian(m: int) -> float:
    """``E[max of m i.i.d. N(0,1)]`` by quadrature of ``x * d/dx Phi(x)^m``."""
    if m < 1:
        raise DomainError(f"need m >= 1, got {m}")

    def integrand(x: float) -> float:
        return x * math.exp(math.log(m) + stats.norm.logpdf(x) + (m - 1) * stats.norm.logcdf(x))

    centre = math.sqrt(2.0 * math.log(m)) if m > 1 else 0.0
    parts = [(-np.inf, centre - 8.0), (centre - 8.0, centre + 8.0), (centre + 8.0, np.inf)]
    return float(sum(integrate.quad(integrand, a, b, limit=200, epsabs=1e-12)[0] for a, b in parts))


def band_probability(m: int) -> float:
    """Exact probability that one filter projection lands in the band at ``m``."""
    lo, hi = band_limits(m)
    return float(stats.norm.sf(lo) - stats.norm.sf(hi))


def drop_probability(m: int) -> float:
    """Exact probability that a point misses the band on all ``m`` filters."""
    return float((1.0 - band_probability(m)) ** m)


def band_probability_mc(m: int, samples: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate of the band probability and its standard error."""
    lo, hi = band_limits(m)
    hits = 0
    rng = stream(seed, "band-mc")
    left = samples
    while left:
        k = min(left, 1 << 22)
        z = rng.standard_normal(k)
        hits += int(np.count_nonzero((z >= lo) & (z <= hi)))
        left -= k
    p = hits / samples
    return p, math.sqrt(p * (1.0 - p) / samples)


@dataclass(frozen=True)
class CollisionEstimate:
    similarity: float
    rate: float
    se: float
    stored_rate: float
    trials: int


def collision_rate_mc(
    m: int, similarity: float, eta: float, trials: int, seed: int, band: tuple[float, float] | None = None
) -> CollisionEstimate:
    """Rate at which a point at ``similarity`` to ``q`` sits in a bucket ``q`` inspects.

    Only the projections of the Gaussian filters onto ``span(x, q)`` matter,
    so each trial draws ``m`` correlated pairs ``(<a, x>, <a, q>)`` directly.
    With ``band`` the point is assigned CloseTop-1 style (first filter in
    band); otherwise Top-1.
    """
    s = similarity
    hits = stored = 0
    noise_scale = math.sqrt(max(0.0, 1.0 - s * s))
    chunk = max(1, (1 << 21) // m)
    for start in range(0, trials, chunk):
        k = min(chunk, trials - start)
        rng = stream(seed, "collision", start)
        px = rng.standard_normal((k, m))
        pq = s * px + noise_scale * rng.standard_normal((k, m))
        if band is None:
            idx = np.argmax(px, axis=1)
            ok = np.ones(k, dtype=bool)
        else:
            inside = (px >= band[0]) & (px <= band[1])
            ok = inside.any(axis=1)
            idx = np.argmax(inside, axis=1)
        passed = ok & (pq[np.arange(k), idx] >= eta)
        hits += int(passed.sum())
        stored += int(ok.sum())
    rate = hits / trials
    return CollisionEstimate(s, rate, math.sqrt(rate * (1.0 - rate) / trials), stored / trials, trials)


def bucket_reference(alpha: float, m: int, eta: float) -> float:
    """Expected number of filters a query passes, ``m * Pr[Z >= eta]``.

    Reported beside measured bucket counts; it grows like ``m^(1 - alpha^2)``
    up to lower-order factors.
    """
    return float(m * stats.norm.sf(eta))
