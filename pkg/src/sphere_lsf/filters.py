"""Seeded Gaussian filter banks and the three filter primitives.

A bank is ``m`` rows of ``d`` i.i.d. standard normals. Row ``i`` is drawn from
its own counter-addressed stream, so a bank is fully determined by
``(seed, d, m)`` and rows can be produced in any order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllocationError, DimensionError, FormatError, NormError
from .rng import stream

DEFAULT_MAX_BANK_BYTES = 2 << 30
NORM_TOL = 1e-6

BANK_MAGIC = b"LSFB"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<4sIQII")


@dataclass(frozen=True, eq=False)
class FilterBank:
    d: int
    m: int
    seed: int
    vectors: np.ndarray

    def __post_init__(self) -> None:
        self.vectors.setflags(write=False)

    def same_as(self, other: FilterBank) -> bool:
        return (
            (self.d, self.m, self.seed) == (other.d, other.m, other.seed)
            and self.vectors.tobytes() == other.vectors.tobytes()
        )


@dataclass(frozen=True)
class Assignment:
    point_id: int
    filter_index: int | None
    projection: float | None


def build_bank(d: int, m: int, seed: int, max_bytes: int = DEFAULT_MAX_BANK_BYTES) -> FilterBank:
    """Sample ``m`` Gaussian filters in ``R^d``.

    Raises:
        AllocationError: ``m * d`` float64 entries exceed ``max_bytes``.
    """
    if d < 1 or m < 1:
        raise DimensionError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    if 8 * d * m > max_bytes:
        raise AllocationError(f"bank of {m}x{d} float64 needs {8 * d * m} bytes > budget {max_bytes}")
    vectors = np.empty((m, d), dtype=np.float64)
    for i in range(m):
        vectors[i] = stream(seed, "filter-row", i).standard_normal(d)
    return FilterBank(d, m, int(seed), vectors)


def check_points(x: np.ndarray, d: int, tol: float = NORM_TOL) -> np.ndarray:
    """Validate a vector or batch of vectors as points of ``S^(d-1)``."""
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    if batch.ndim != 2 or batch.shape[1] != d:
        raise DimensionError(f"expected dimension {d}, got shape {x.shape}")
    bad = np.flatnonzero(np.abs(np.linalg.norm(batch, axis=1) - 1.0) > tol)
    if bad.size:
        raise NormError(bad.tolist(), tol)
    return x


def project(bank: FilterBank, x: np.ndarray) -> np.ndarray:
    """Inner products ``<a_i, x>`` for one point (shape m) or a batch (n, m)."""
    x = check_points(x, bank.d)
    return x @ bank.vectors.T


def assign_top1(bank: FilterBank, x: np.ndarray, point_id: int = 0) -> Assignment:
    proj = project(bank, x)
    i = int(np.argmax(proj))
    return Assignment(point_id, i, float(proj[i]))


def assign_top1_batch(bank: FilterBank, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Top-1: (filter index, projection) per row; ties go to the lowest index."""
    proj = np.atleast_2d(project(bank, points))
    idx = np.argmax(proj, axis=1)
    return idx, proj[np.arange(len(idx)), idx]


def assign_band(bank: FilterBank, x: np.ndarray, band_lo: float, band_hi: float, point_id: int = 0) -> Assignment:
    """First filter, in index order, whose projection lies in ``[band_lo, band_hi]``."""
    proj = project(bank, x)
    hits = np.flatnonzero((proj >= band_lo) & (proj <= band_hi))
    if hits.size == 0:
        return Assignment(point_id, None, None)
    i = int(hits[0])
    return Assignment(point_id, i, float(proj[i]))


def assign_band_batch(
    bank: FilterBank, points: np.ndarray, band_lo: float, band_hi: float
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized band assignment; index -1 and projection NaN mark ABSENT."""
    proj = np.atleast_2d(project(bank, points))
    inside = (proj >= band_lo) & (proj <= band_hi)
    found = inside.any(axis=1)
    idx = np.where(found, np.argmax(inside, axis=1), -1)
    rows = np.arange(len(idx))
    val = np.where(found, proj[rows, np.maximum(idx, 0)], np.nan)
    return idx, val


def search(bank: FilterBank, q: np.ndarray, eta: float) -> list[int]:
    """Ascending indices of every filter with ``<a_i, q> >= eta``."""
    return np.flatnonzero(project(bank, q) >= eta).tolist()


def search_mask(bank: FilterBank, queries: np.ndarray, eta: float) -> np.ndarray:
    """Boolean (n_queries, m) matrix of filters each query inspects."""
    return np.atleast_2d(project(bank, queries)) >= eta


def bank_to_bytes(bank: FilterBank) -> bytes:
    header = _BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.seed, bank.d, bank.m)
    return header + bank.vectors.astype("<f8", copy=False).tobytes()


def bank_from_bytes(buf: bytes, offset: int = 0) -> tuple[FilterBank, int]:
    """Parse one bank starting at ``offset``; returns the bank and the end offset."""
    if len(buf) - offset < _BANK_HEADER.size:
        raise FormatError("truncated bank header", offset)
    magic, version, seed, d, m = _BANK_HEADER.unpack_from(buf, offset)
    if magic != BANK_MAGIC:
        raise FormatError(f"bad bank magic {magic!r}", offset)
    if version != BANK_VERSION:
        raise FormatError(f"unsupported bank version {version}", offset + 4)
    start = offset + _BANK_HEADER.size
    end = start + 8 * d * m
    if len(buf) < end:
        raise FormatError("truncated bank payload", len(buf))
    vectors = np.frombuffer(buf, dtype="<f8", count=d * m, offset=start).reshape(m, d).astype(np.float64)
    return FilterBank(d, m, seed, vectors), end


def save_bank(bank: FilterBank, path: str | Path) -> None:
    Path(path).write_bytes(bank_to_bytes(bank))


def load_bank(path: str | Path) -> FilterBank:
    buf = Path(path).read_bytes()
    bank, end = bank_from_bytes(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after bank", end)
    return bank
