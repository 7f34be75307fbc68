"""Truncated Laplace noise, private count release, and multi-query composition.

A released table stores only noisy values above the zeroing threshold. Raw
zero buckets need no explicit noise: ``0 + Z <= A = tau`` always, so they are
released as 0 whatever the draw, and a tensor index never has to touch its
exponentially large key space.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AuditFailure, DomainError, FormatError
from .index import CostReport, CountTable, sum_over_keys
from .params import PrivacyParams, derive_privacy_params
from .rng import stream


class TLapNoise:
    """Positioned stream of truncated Laplace draws on ``[-A, A]``."""

    def __init__(self, params: PrivacyParams, seed: int) -> None:
        self.params = params
        self.seed = int(seed)
        self._rng = stream(seed, "tlap")

    @property
    def A(self) -> float:
        return self.params.A

    @property
    def scale(self) -> float:
        return self.params.sensitivity / self.params.epsilon

    def sample(self, size: int | None = None) -> np.ndarray | float:
        """Inverse-CDF draws: uniform sign, magnitude from the truncated exponential."""
        b, A = self.scale, self.A
        n = 1 if size is None else size
        u = self._rng.random(n)
        sign = np.where(self._rng.random(n) < 0.5, -1.0, 1.0)
        mag = -b * np.log1p(u * np.expm1(-A / b))
        out = sign * np.minimum(mag, A)
        return float(out[0]) if size is None else out


def sample_tlap(noise: TLapNoise) -> float:
    return noise.sample()


def tlap_density(z, params: PrivacyParams):
    b = params.sensitivity / params.epsilon
    A = params.A
    norm = 2.0 * b * -math.expm1(-A / b)
    z = np.asarray(z, dtype=np.float64)
    return np.where(np.abs(z) <= A, np.exp(-np.abs(z) / b) / norm, 0.0)


def tlap_cdf(z: float, params: PrivacyParams) -> float:
    """Closed-form CDF of the truncated Laplace law."""
    b = params.sensitivity / params.epsilon
    A = params.A
    norm = 2.0 * b * -math.expm1(-A / b)
    if z < -A:
        return 0.0
    if z >= A:
        return 1.0
    if z <= 0.0:
        return b * (math.exp(z / b) - math.exp(-A / b)) / norm
    return 0.5 + b * -math.expm1(-z / b) / norm


# -- release ----------------------------------------------------------------


def _provenance(counts: CountTable) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(counts.keys, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(counts.counts, dtype="<i8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class PrivateCountTable:
    """Released noisy counts. Holds no raw data; zeros are implicit."""

    keys: np.ndarray
    values: np.ndarray
    params: PrivacyParams
    provenance: str
    tuple_keys: bool = False

    def as_dict(self) -> dict:
        if self.tuple_keys:
            return {tuple(int(v) for v in k): float(x) for k, x in zip(self.keys, self.values)}
        return {int(k[0]): float(x) for k, x in zip(self.keys, self.values)}

    def value(self, key) -> float:
        return self.as_dict().get(key, 0.0)


def privatize(counts: CountTable, params: PrivacyParams, seed: int) -> PrivateCountTable:
    """Add independent truncated Laplace noise to every occupied bucket, then zero small values.

    Raises:
        DomainError: ``tau < A``; zero buckets could then be released nonzero
            and could no longer be left implicit.
    """
    if params.tau < params.A:
        raise DomainError(f"zeroing threshold tau={params.tau} must equal A={params.A} (sensitivity 1)")
    noise = TLapNoise(params, seed)
    raw = counts.counts.astype(np.float64)
    noisy = raw + noise.sample(len(raw)) if len(raw) else raw
    keep = noisy > params.tau
    keys = np.ascontiguousarray(counts.keys[keep])
    values = noisy[keep]
    keys.setflags(write=False)
    values.setflags(write=False)
    return PrivateCountTable(keys, values, params, _provenance(counts), counts.tuple_keys)


def query_private_count(ptable: PrivateCountTable, structure, q: np.ndarray) -> tuple[float, CostReport]:
    """Sum of released values over the buckets the query inspects."""
    sums, nb = sum_over_keys(structure, ptable.keys, ptable.values, q)
    return float(sums[0]), CostReport(structure.filters_evaluated, nb[0])


def query_private_count_batch(ptable: PrivateCountTable, structure, queries: np.ndarray):
    return sum_over_keys(structure, ptable.keys, ptable.values, queries)


# -- audit ------------------------------------------------------------------


def _exp_integral(a: float, s: float, lo: float, hi: float) -> float:
    """Integral of exp(a + s x) over [lo, hi]."""
    if hi <= lo:
        return 0.0
    if s == 0.0:
        return math.exp(a) * (hi - lo)
    return (math.exp(a + s * hi) - math.exp(a + s * lo)) / s


def _log_piece(c: float, x: float, params: PrivacyParams):
    """(log-intercept, slope) of the density of ``c + Z`` around ``x``; None off support."""
    b = params.sensitivity / params.epsilon
    A = params.A
    if x < c - A or x > c + A:
        return None
    log_norm = -math.log(2.0 * b * -math.expm1(-A / b))
    if x <= c:
        return log_norm - c / b, 1.0 / b
    return log_norm + c / b, -1.0 / b


def _positive_part_integral(p, q, log_k: float, lo: float, hi: float) -> float:
    """Integral over [lo, hi] of max(0, P(x) - e^k Q(x)) for exponential pieces."""
    if p is None:
        return 0.0
    if q is None:
        return _exp_integral(p[0], p[1], lo, hi)
    a1, s1 = p
    a2, s2 = q[0] + log_k, q[1]
    cuts = [lo, hi]
    if s1 != s2:
        x = (a2 - a1) / (s1 - s2)
        if lo < x < hi:
            cuts = [lo, x, hi]
    total = 0.0
    for left, right in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (left + right)
        if a1 + s1 * mid > a2 + s2 * mid:
            total += _exp_integral(a1, s1, left, right) - _exp_integral(a2, s2, left, right)
    return total


def release_divergence(c1: float, c2: float, params: PrivacyParams) -> float:
    """Largest ``P(E) - e^eps Q(E)`` over events of the privatized output.

    ``P`` is the output law when the raw count is ``c1``, ``Q`` when it is
    ``c2``. The law is an atom at 0 plus an exponential-piecewise density on
    ``(tau, inf)``; both parts are integrated in closed form.
    """
    eps, tau, A = params.epsilon, params.tau, params.A
    atom = max(0.0, tlap_cdf(tau - c1, params) - math.exp(eps) * tlap_cdf(tau - c2, params))
    pts = sorted({tau, c1 - A, c1, c1 + A, c2 - A, c2, c2 + A})
    pts = [x for x in pts if x >= tau]
    total = atom
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (lo + hi)
        total += _positive_part_integral(_log_piece(c1, mid, params), _log_piece(c2, mid, params), eps, lo, hi)
    return total


@dataclass(frozen=True)
class AuditReport:
    epsilon: float
    delta: float
    max_gap: float
    worst: tuple[int, int]
    gaps: dict[tuple[int, int], float] = field(repr=False)
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.delta + self.tolerance


def dp_audit(params: PrivacyParams, counts: Sequence[int] = range(21), tolerance: float = 1e-6) -> AuditReport:
    """Certify the release of one bucket for adjacent raw counts, both directions.

    Raises:
        AuditFailure: some event has ``P - e^eps Q > delta + tolerance``.
    """
    gaps = {}
    for c in counts:
        gaps[(c, c + 1)] = release_divergence(c, c + 1, params)
        gaps[(c + 1, c)] = release_divergence(c + 1, c, params)
    worst = max(gaps, key=gaps.get)
    report = AuditReport(params.epsilon, params.delta, gaps[worst], worst, gaps, tolerance)
    if not report.passed:
        raise AuditFailure(
            f"gap {report.max_gap:.6g} at counts {worst} exceeds delta={params.delta:g} + {tolerance:g}"
        )
    return report


# -- composition ------------------------------------------------------------


class CompositionMode(str, Enum):
    PURE = "pure"
    ADVANCED = "advanced"


@dataclass(frozen=True)
class CompositionPlan:
    ell: int
    k: int
    mode: CompositionMode
    epsilon: float
    delta: float
    epsilon_i: float
    delta_i: float

    def replica_params(self) -> PrivacyParams:
        return derive_privacy_params(self.epsilon_i, self.delta_i)


def replicas_for(ell: int) -> int:
    """k = ceil(6 ln ell), bumped to the next odd number."""
    k = max(1, math.ceil(6.0 * math.log(ell))) if ell > 1 else 1
    return k if k % 2 else k + 1


def plan_composition(
    epsilon: float, delta: float, ell: int, mode: CompositionMode | str = CompositionMode.PURE
) -> CompositionPlan:
    """Split ``(epsilon, delta)`` across the replicas answering ``ell`` queries."""
    if ell < 1:
        raise DomainError(f"need ell >= 1, got {ell}")
    mode = CompositionMode(mode)
    k = replicas_for(ell)
    if mode is CompositionMode.PURE:
        eps_i, delta_i = epsilon / k, delta / k
    else:
        eps_i = epsilon / (2.0 * math.sqrt(2.0 * k * math.log(2.0 / delta)))
        delta_i = delta / (2.0 * k)
    return CompositionPlan(ell, k, mode, epsilon, delta, eps_i, delta_i)


def median_answer(replicas: Sequence[tuple[object, PrivateCountTable]], q: np.ndarray) -> float:
    """Lower median of the replicas' private answers."""
    if not replicas:
        raise ValueError("need at least one replica")
    answers = sorted(query_private_count(pt, structure, q)[0] for structure, pt in replicas)
    return answers[(len(answers) - 1) // 2]


# -- released-table file ----------------------------------------------------

RELEASE_MAGIC = b"LSFR"
RELEASE_VERSION = 1
_RELEASE_HEADER = struct.Struct("<4sIdddddI32sQ")


def release_to_bytes(ptable: PrivateCountTable) -> bytes:
    p = ptable.params
    t = ptable.keys.shape[1] if ptable.keys.ndim == 2 else 1
    head = _RELEASE_HEADER.pack(
        RELEASE_MAGIC,
        RELEASE_VERSION,
        p.epsilon,
        p.delta,
        float(p.sensitivity),
        p.A,
        p.tau,
        t | (0x80000000 if ptable.tuple_keys else 0),
        bytes.fromhex(ptable.provenance),
        len(ptable.values),
    )
    rec = np.zeros(len(ptable.values), dtype=[("key", "<u4", (t,)), ("value", "<f8")])
    rec["key"] = ptable.keys.reshape(len(ptable.values), t)
    rec["value"] = ptable.values
    return head + rec.tobytes()


def release_from_bytes(buf: bytes) -> PrivateCountTable:
    if len(buf) < _RELEASE_HEADER.size:
        raise FormatError("truncated release header", 0)
    magic, version, eps, delta, sens, A, tau, tword, prov, n = _RELEASE_HEADER.unpack_from(buf, 0)
    if magic != RELEASE_MAGIC:
        raise FormatError(f"bad release magic {magic!r}", 0)
    if version != RELEASE_VERSION:
        raise FormatError(f"unsupported release version {version}", 4)
    t = tword & 0x7FFFFFFF
    dtype = np.dtype([("key", "<u4", (t,)), ("value", "<f8")])
    off = _RELEASE_HEADER.size
    if len(buf) != off + n * dtype.itemsize:
        raise FormatError("release body length mismatch", min(len(buf), off + n * dtype.itemsize))
    rec = np.frombuffer(buf, dtype=dtype, count=n, offset=off)
    keys = rec["key"].astype(np.int64).reshape(n, t)
    values = rec["value"].astype(np.float64)
    params = PrivacyParams(eps, delta, int(sens), A, tau)
    return PrivateCountTable(keys, values, params, prov.hex(), bool(tword & 0x80000000))


def save_release(ptable: PrivateCountTable, path: str | Path) -> None:
    Path(path).write_bytes(release_to_bytes(ptable))


def load_release(path: str | Path) -> PrivateCountTable:
    return release_from_bytes(Path(path).read_bytes())
