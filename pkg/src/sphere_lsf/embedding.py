"""Randomized map from Euclidean space onto the unit sphere.

Construction: pre-scale into the half-unit ball, project with an i.i.d.
``N(0, 1/d')`` matrix, append the lift coordinate ``sqrt(1 - |y|^2)`` and
renormalize. Only the three distortion properties are contractual; they are
checked empirically by :func:`verify_embedding`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, FormatError, RangeError, VerificationFailure
from .index import AnnResult, CostReport, LSFIndex, SphereDataset, _bucket_hits, _n_buckets, _pass_masks, build_tensor
from .params import derive_ann_params, derive_tensor_params, euclidean_to_sphere_thresholds
from .rng import derive_seed, stream

# target dimension d' = ceil(DIM_CONSTANT * ln(n) / gamma^2)
DIM_CONSTANT = 40.0
# failure-rate threshold is FAILURE_SCALE * exp(-AUDIT_CONSTANT * d' * gamma^2);
# AUDIT_CONSTANT is half the smallest value fitted over a d' in [25, 400]
# sweep with half-ball pairs (seed 20240611), then frozen
FAILURE_SCALE = 5.0
AUDIT_CONSTANT = 0.25

EMBED_MAGIC = b"EMBD"


@dataclass(frozen=True, eq=False)
class SphereEmbedding:
    d: int
    d_prime: int
    gamma: float
    scale: float
    seed: int
    projection: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.d_prime + 1


def target_dimension(n: int, gamma: float, constant: float = DIM_CONSTANT) -> int:
    return math.ceil(constant * math.log(n) / gamma**2)


def build_embedding(
    d: int,
    n: int,
    gamma: float,
    r: float,
    c: float,
    seed: int,
    scale: float = 1.0,
    d_prime: int | None = None,
) -> SphereEmbedding:
    """Sample the projection for a ``(c, r)`` problem at the given pre-scaling.

    Args:
        d: Source dimension.
        n: Dataset size; sets the default target dimension.
        gamma: Distortion parameter in (0, 1/2).
        r: Near radius in source units.
        c: Approximation factor.
        seed: Projection seed.
        scale: Factor applied to inputs before projecting; must be at most 1.
        d_prime: Override for the target dimension.

    Raises:
        DomainError: ``gamma`` outside (0, 1/2), ``scale`` outside (0, 1], or
            ``(c * r * scale)^2 > gamma / 2``.
    """
    if not (0.0 < gamma < 0.5):
        raise DomainError(f"gamma must lie in (0, 1/2), got {gamma}")
    if not (0.0 < scale <= 1.0):
        raise DomainError(f"scale must lie in (0, 1], got {scale}")
    if (c * r * scale) ** 2 > gamma / 2.0 * (1.0 + 1e-12):
        raise DomainError(f"(c r scale)^2 = {(c * r * scale) ** 2:.4g} exceeds gamma/2 = {gamma / 2:.4g}")
    if d_prime is None:
        d_prime = target_dimension(n, gamma)
    proj = stream(seed, "embedding").standard_normal((d_prime, d)) / math.sqrt(d_prime)
    proj.setflags(write=False)
    return SphereEmbedding(d, d_prime, gamma, scale, int(seed), proj)


def project_linear(e: SphereEmbedding, x: np.ndarray) -> np.ndarray:
    """First ``d'`` coordinates before the lift and renormalization."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != e.d:
        raise DimensionError(f"expected dimension {e.d}, got {x.shape[-1]}")
    return (e.scale * x) @ e.projection.T


def embed(e: SphereEmbedding, x: np.ndarray) -> np.ndarray:
    """Map one vector (or a batch) onto ``S^{d'}``.

    Raises:
        RangeError: ``|scale * x| > 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    if batch.shape[1] != e.d:
        raise DimensionError(f"expected dimension {e.d}, got {batch.shape[1]}")
    norms = np.linalg.norm(e.scale * batch, axis=1)
    bad = np.flatnonzero(norms > 1.0 + 1e-12)
    if bad.size:
        raise RangeError(f"|scale * x| > 1 for rows {bad[:10].tolist()}; pre-scale the data")
    y = project_linear(e, batch)
    lift = np.sqrt(np.maximum(0.0, 1.0 - np.einsum("ij,ij->i", y, y)))
    out = np.concatenate([y, lift[:, None]], axis=1)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out if x.ndim == 2 else out[0]


@dataclass(frozen=True)
class EmbeddingReport:
    pairs: int
    failures: dict[str, int]
    applicable: dict[str, int]
    threshold: float

    def rate(self, prop: str) -> float:
        k = self.applicable[prop]
        return self.failures[prop] / k if k else 0.0


def failure_threshold(d_prime: int, gamma: float) -> float:
    return FAILURE_SCALE * math.exp(-AUDIT_CONSTANT * d_prime * gamma**2)


def embedding_failures(e: SphereEmbedding, xs: np.ndarray, ys: np.ndarray, gamma: float):
    """Per-property failure and applicability counts for the pairs ``(xs[i], ys[i])``.

    Distances are measured on the scaled inputs, which is the space the map
    acts on.
    """
    sx, sy = e.scale * np.asarray(xs, dtype=np.float64), e.scale * np.asarray(ys, dtype=np.float64)
    src = np.einsum("ij,ij->i", sx - sy, sx - sy)
    ex, ey = embed(e, xs), embed(e, ys)
    dst = np.einsum("ij,ij->i", ex - ey, ex - ey)
    near = src <= gamma
    far = src >= gamma
    fail = {
        "upper": int(np.sum(dst > (1.0 + gamma) * src)),
        "lower": int(np.sum(near & (dst < (1.0 - gamma) * src))),
        "separation": int(np.sum(far & (dst < gamma / 2.0))),
    }
    applicable = {"upper": len(src), "lower": int(near.sum()), "separation": int(far.sum())}
    return fail, applicable


def verify_embedding(e: SphereEmbedding, pairs, gamma: float | None = None) -> EmbeddingReport:
    """Check the upper-distortion, lower-distortion and separation properties.

    Raises:
        VerificationFailure: some property's failure rate exceeds
            ``5 * exp(-c0 * d' * gamma^2)``.
    """
    gamma = e.gamma if gamma is None else gamma
    xs = np.array([p[0] for p in pairs], dtype=np.float64).reshape(len(pairs), e.d)
    ys = np.array([p[1] for p in pairs], dtype=np.float64).reshape(len(pairs), e.d)
    fail, applicable = embedding_failures(e, xs, ys, gamma)
    report = EmbeddingReport(len(pairs), fail, applicable, failure_threshold(e.d_prime, gamma))
    over = [k for k in fail if report.rate(k) > report.threshold]
    if over:
        raise VerificationFailure(f"failure rate above {report.threshold:.3g} for {over}", fail)
    return report


@dataclass(frozen=True, eq=False)
class EuclideanPipeline:
    """Sphere index over embedded points, answering in the original space."""

    points: np.ndarray
    r: float
    c: float
    embedding: SphereEmbedding
    index: LSFIndex

    def query(self, q: np.ndarray) -> AnnResult:
        """First stored point within ``c r`` of ``q``, re-checked against the raw coordinates."""
        q = np.asarray(q, dtype=np.float64)
        masks = _pass_masks(self.index, embed(self.embedding, q))
        hit = _bucket_hits(self.index, masks)[0]
        tab = self.index.table
        limit = (self.c * self.r) ** 2
        inspected = 0
        found = None
        for b in np.flatnonzero(hit):
            ids = tab.ids[tab.starts[b] : tab.starts[b + 1]]
            diff = self.points[ids] - q
            ok = np.flatnonzero(np.einsum("ij,ij->i", diff, diff) <= limit)
            if ok.size:
                inspected += int(ok[0]) + 1
                found = int(ids[ok[0]])
                break
            inspected += len(ids)
        return AnnResult(found, CostReport(self.index.filters_evaluated, _n_buckets(masks)[0], inspected))


def euclidean_ann_pipeline(
    points: np.ndarray,
    r: float,
    c: float,
    seed: int,
    gamma: float = 0.2,
    d_prime: int | None = None,
) -> EuclideanPipeline:
    """Scale, embed, and build a TensorCloseTop-1 index for ``(c, r)``-ANN in R^d.

    The scale is ``1 / (2 max|x|)``, reduced further if needed so that
    ``(c r scale)^2 <= gamma / 2``. The sphere thresholds use radius
    ``r scale (1 + gamma)`` and factor ``c (1 - gamma) / (1 + gamma)``.
    """
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    max_norm = float(np.max(np.linalg.norm(points, axis=1))) if n else 1.0
    scale = 1.0 / (2.0 * max_norm) if max_norm > 0 else 1.0
    scale = min(scale, math.sqrt(gamma / 2.0) / (c * r))
    emb = build_embedding(d, n, gamma, r, c, derive_seed(seed, "pipeline-embedding"), scale, d_prime)
    c_sphere = c * (1.0 - gamma) / (1.0 + gamma)
    alpha, beta = euclidean_to_sphere_thresholds(r * scale * (1.0 + gamma), c_sphere)
    ann = derive_ann_params(max(n, 2), alpha, beta)
    tensor = derive_tensor_params(max(n, 2), alpha, beta)
    dataset = SphereDataset(embed(emb, points))
    index = build_tensor(dataset, ann, tensor, derive_seed(seed, "pipeline-index"))
    return EuclideanPipeline(points, r, c, emb, index)


def embedding_to_bytes(e: SphereEmbedding) -> bytes:
    head = struct.pack("<4sIQIIdd", EMBED_MAGIC, 1, e.seed & ((1 << 64) - 1), e.d, e.d_prime, e.gamma, e.scale)
    return head + e.projection.astype("<f8").tobytes()


def embedding_from_bytes(buf: bytes) -> SphereEmbedding:
    fmt = struct.Struct("<4sIQIIdd")
    if len(buf) < fmt.size:
        raise FormatError("truncated embedding header", 0)
    magic, version, seed, d, d_prime, gamma, scale = fmt.unpack_from(buf, 0)
    if magic != EMBED_MAGIC:
        raise FormatError(f"bad embedding magic {magic!r}", 0)
    if version != 1:
        raise FormatError(f"unsupported embedding version {version}", 4)
    if len(buf) != fmt.size + 8 * d * d_prime:
        raise FormatError("embedding payload length mismatch", min(len(buf), fmt.size + 8 * d * d_prime))
    proj = np.frombuffer(buf, dtype="<f8", offset=fmt.size).reshape(d_prime, d).astype(np.float64)
    proj.setflags(write=False)
    return SphereEmbedding(d, d_prime, gamma, scale, seed, proj)
