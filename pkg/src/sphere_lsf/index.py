"""Top-1, CloseTop-1 and TensorCloseTop-1 indexes, and their count tables.

All three variants share one representation: ``t`` filter banks (``t = 1`` for
the flat indexes) and, per point, a key of ``t`` filter indices. Flat keys are
exposed as plain ints, tensor keys as tuples. Each point lives in at most one
bucket, which is what gives the counting transform sensitivity one.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import AllocationError, DimensionError, FormatError
from .filters import (
    DEFAULT_MAX_BANK_BYTES,
    FilterBank,
    assign_band_batch,
    assign_top1_batch,
    bank_from_bytes,
    bank_to_bytes,
    build_bank,
    check_points,
    search_mask,
)
from .params import AnnParams, TensorParams, band_limits
from .rng import derive_seed

Key = Union[int, tuple[int, ...]]

TOP1 = "top1"
CLOSETOP1 = "closetop1"
TENSOR = "tensor"
KINDS = (TOP1, CLOSETOP1, TENSOR)

INDEX_MAGIC = b"LSFI"
INDEX_VERSION = 1


def bank_seed(seed: int, j: int) -> int:
    """Seed of the ``j``-th bank; flat indexes use ``j = 0``."""
    return derive_seed(seed, "bank", j)


@dataclass(frozen=True, eq=False)
class SphereDataset:
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise DimensionError(f"dataset must be 2-D, got shape {pts.shape}")
        if len(pts):
            check_points(pts, pts.shape[1])
        pts = np.array(pts, copy=True)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls, d: int) -> SphereDataset:
        return cls(np.empty((0, d)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class CostReport:
    filters_evaluated: int
    buckets_inspected: int
    points_inspected: int = 0
    far_points_inspected: int | None = None

    @property
    def inner_products(self) -> int:
        """Filter projections plus d-dimensional re-check products."""
        return self.filters_evaluated + self.points_inspected


@dataclass(frozen=True, eq=False)
class BucketTable:
    """Occupied buckets, sorted by key, plus the ids that were not stored.

    ``keys`` is an (n_buckets, t) int array in lexicographic order; bucket ``b``
    holds ``ids[starts[b]:starts[b + 1]]`` in ascending id order.
    """

    t: int
    keys: np.ndarray
    starts: np.ndarray
    ids: np.ndarray
    dropped: np.ndarray
    tuple_keys: bool = False

    @classmethod
    def from_point_keys(cls, point_keys: np.ndarray, tuple_keys: bool = False) -> BucketTable:
        point_keys = np.asarray(point_keys, dtype=np.int64)
        if point_keys.ndim == 1:
            point_keys = point_keys[:, None]
        t = point_keys.shape[1]
        stored = np.flatnonzero((point_keys >= 0).all(axis=1))
        dropped = np.flatnonzero(~(point_keys >= 0).all(axis=1))
        sk = point_keys[stored]
        # lexsort: last key is primary; id is the final tiebreak
        order = np.lexsort((stored,) + tuple(sk[:, j] for j in reversed(range(t))))
        ids = stored[order]
        sk = sk[order]
        if len(sk):
            new = np.ones(len(sk), dtype=bool)
            new[1:] = (sk[1:] != sk[:-1]).any(axis=1)
            first = np.flatnonzero(new)
        else:
            first = np.empty(0, dtype=np.int64)
        keys = sk[first]
        starts = np.append(first, len(ids)).astype(np.int64)
        return cls(t, keys, starts, ids, dropped, tuple_keys)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.starts)

    @property
    def n_stored(self) -> int:
        return int(len(self.ids))

    def key(self, b: int) -> Key:
        row = self.keys[b]
        return tuple(int(v) for v in row) if self.tuple_keys else int(row[0])

    def bucket(self, b: int) -> list[int]:
        return self.ids[self.starts[b] : self.starts[b + 1]].tolist()

    def as_dict(self) -> dict[Key, list[int]]:
        return {self.key(b): self.bucket(b) for b in range(len(self.keys))}

    def find(self, key: Key) -> int | None:
        """Position of ``key`` among occupied buckets, or None."""
        row = np.atleast_1d(np.asarray(key, dtype=np.int64))
        lo, hi = 0, len(self.keys)
        target = tuple(row.tolist())
        while lo < hi:
            mid = (lo + hi) // 2
            cur = tuple(self.keys[mid].tolist())
            if cur < target:
                lo = mid + 1
            else:
                hi = mid
        if lo < len(self.keys) and tuple(self.keys[lo].tolist()) == target:
            return lo
        return None


@dataclass(frozen=True, eq=False)
class LSFIndex:
    """A built index. Immutable; queries are read-only."""

    kind: str
    dataset: SphereDataset
    banks: tuple[FilterBank, ...]
    eta: float
    band: tuple[float, float] | None
    table: BucketTable
    projections: np.ndarray
    alpha: float
    beta: float
    seed: int

    @property
    def t(self) -> int:
        return len(self.banks)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.banks[0].d

    @property
    def filters_evaluated(self) -> int:
        return sum(b.m for b in self.banks)

    @property
    def dropped(self) -> list[int]:
        return self.table.dropped.tolist()

    def buckets(self) -> dict[Key, list[int]]:
        return self.table.as_dict()

    @property
    def structure(self) -> FilterStructure:
        return FilterStructure(self.kind, self.banks, self.eta)


@dataclass(frozen=True, eq=False)
class FilterStructure:
    """The data-independent part of an index: banks and query threshold.

    This is all a released private table needs to answer queries.
    """

    kind: str
    banks: tuple[FilterBank, ...]
    eta: float

    @property
    def t(self) -> int:
        return len(self.banks)

    @property
    def d(self) -> int:
        return self.banks[0].d

    @property
    def filters_evaluated(self) -> int:
        return sum(b.m for b in self.banks)


def _assign(kind: str, bank: FilterBank, points: np.ndarray, band) -> tuple[np.ndarray, np.ndarray]:
    if len(points) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    if kind == TOP1:
        return assign_top1_batch(bank, points)
    return assign_band_batch(bank, points, *band)


def _build(kind, dataset, alpha, beta, m, t, eta, band, seed, eta_override=None, max_bytes=DEFAULT_MAX_BANK_BYTES):
    if 8 * dataset.d * m * t > max_bytes:
        raise AllocationError(f"{t} bank(s) of {m}x{dataset.d} float64 exceed the budget of {max_bytes} bytes")
    banks = tuple(build_bank(dataset.d, m, bank_seed(seed, j), max_bytes) for j in range(t))
    point_keys = np.empty((dataset.n, t), dtype=np.int64)
    proj = np.empty((dataset.n, t))
    for j, bank in enumerate(banks):
        point_keys[:, j], proj[:, j] = _assign(kind, bank, dataset.points, band)
    table = BucketTable.from_point_keys(point_keys, tuple_keys=kind == TENSOR)
    proj.setflags(write=False)
    return LSFIndex(
        kind, dataset, banks, eta if eta_override is None else eta_override, band, table, proj, alpha, beta, seed
    )


def build_top1(
    dataset: SphereDataset, params: AnnParams, seed: int, eta_override: float | None = None,
    max_bytes: int = DEFAULT_MAX_BANK_BYTES,
) -> LSFIndex:
    """Assign every point to the filter maximizing its projection."""
    return _build(
        TOP1, dataset, params.alpha, params.beta, params.m, 1, params.eta, None, seed, eta_override, max_bytes
    )


def build_closetop1(
    dataset: SphereDataset, params: AnnParams, seed: int, eta_override: float | None = None,
    max_bytes: int = DEFAULT_MAX_BANK_BYTES,
) -> LSFIndex:
    """Assign each point to the first filter whose projection lands in the band at ``m``."""
    band = band_limits(params.m)
    return _build(
        CLOSETOP1, dataset, params.alpha, params.beta, params.m, 1, params.eta, band, seed, eta_override, max_bytes
    )


def build_tensor(
    dataset: SphereDataset,
    ann: AnnParams,
    tensor: TensorParams,
    seed: int,
    eta_override: float | None = None,
    max_bytes: int = DEFAULT_MAX_BANK_BYTES,
) -> LSFIndex:
    """``t`` independent CloseTop-1 banks of ``m_tilde`` filters; keys are index tuples.

    The query threshold is computed from ``m_tilde``, not from ``m_tilde^t``.
    """
    band = (tensor.band_lo, tensor.band_hi)
    return _build(
        TENSOR, dataset, ann.alpha, ann.beta, tensor.m_tilde, tensor.t, tensor.eta, band, seed, eta_override, max_bytes
    )


def build_index(
    kind: str,
    dataset: SphereDataset,
    ann: AnnParams,
    seed: int,
    tensor: TensorParams | None = None,
    eta_override: float | None = None,
    max_bytes: int = DEFAULT_MAX_BANK_BYTES,
) -> LSFIndex:
    if kind == TOP1:
        return build_top1(dataset, ann, seed, eta_override, max_bytes)
    if kind == CLOSETOP1:
        return build_closetop1(dataset, ann, seed, eta_override, max_bytes)
    if kind == TENSOR:
        if tensor is None:
            raise ValueError("tensor index needs TensorParams")
        return build_tensor(dataset, ann, tensor, seed, eta_override, max_bytes)
    raise ValueError(f"unknown index kind {kind!r}")


# -- querying ---------------------------------------------------------------


def search_lists(index: LSFIndex, q: np.ndarray) -> list[list[int]]:
    """Per-bank ascending lists of filters the query passes."""
    return [np.flatnonzero(search_mask(b, q, index.eta)[0]).tolist() for b in index.banks]


def query_search_buckets(index: LSFIndex, q: np.ndarray) -> list[Key]:
    """Every bucket key the query inspects, in ascending (lexicographic) order.

    For a tensor index this enumerates the full Cartesian product and can be
    very large; the query routines never materialize it.
    """
    lists = search_lists(index, q)
    if index.kind != TENSOR:
        return lists[0]
    return list(itertools.product(*lists))


def _pass_masks(structure, queries: np.ndarray) -> list[np.ndarray]:
    return [search_mask(b, queries, structure.eta) for b in structure.banks]


def _key_hits(keys: np.ndarray, masks: list[np.ndarray]) -> np.ndarray:
    """(n_queries, n_keys) booleans: key lies in the query's search set."""
    hit = np.ones((masks[0].shape[0], len(keys)), dtype=bool)
    for j, mask in enumerate(masks):
        hit &= mask[:, keys[:, j]]
    return hit


def _bucket_hits(index: LSFIndex, masks: list[np.ndarray]) -> np.ndarray:
    return _key_hits(index.table.keys, masks)


def _n_buckets(masks: list[np.ndarray]) -> list[int]:
    sizes = np.stack([m.sum(axis=1) for m in masks], axis=1)
    return [math.prod(int(v) for v in row) for row in sizes]


def sum_over_keys(structure, keys: np.ndarray, values: np.ndarray, queries: np.ndarray):
    """Sum ``values`` over the keys each query's search set contains.

    ``structure`` needs only ``banks`` and ``eta``, so released tables can be
    queried without the index that produced them. Keys absent from ``keys``
    contribute zero. Returns ``(sums, n_buckets)`` with one entry per query.
    """
    queries = np.atleast_2d(check_points(queries, structure.banks[0].d))
    masks = _pass_masks(structure, queries)
    keys = np.asarray(keys, dtype=np.int64).reshape(len(keys), len(structure.banks))
    if len(keys):
        sums = _key_hits(keys, masks).astype(values.dtype) @ values
    else:
        sums = np.zeros(len(queries), dtype=np.asarray(values).dtype)
    return sums, _n_buckets(masks)


@dataclass(frozen=True)
class AnnResult:
    point_id: int | None
    cost: CostReport


def query_ann(index: LSFIndex, q: np.ndarray, beta: float | None = None) -> AnnResult:
    """First stored point with ``<q, x> >= beta`` in ascending bucket-key order."""
    beta = index.beta if beta is None else beta
    q = check_points(q, index.d)
    masks = _pass_masks(index, q)
    hit = _bucket_hits(index, masks)[0]
    pts = index.dataset.points
    tab = index.table
    inspected = far = 0
    found = None
    for b in np.flatnonzero(hit):
        ids = tab.ids[tab.starts[b] : tab.starts[b + 1]]
        ips = pts[ids] @ q
        ok = np.flatnonzero(ips >= beta)
        if ok.size:
            stop = int(ok[0])
            inspected += stop + 1
            far += int((ips[:stop] < beta).sum())
            found = int(ids[stop])
            break
        inspected += len(ids)
        far += len(ids)
    cost = CostReport(index.filters_evaluated, _n_buckets(masks)[0], inspected, far)
    return AnnResult(found, cost)


def inspected_point_ids(index: LSFIndex, q: np.ndarray) -> np.ndarray:
    """All stored ids living in buckets the query inspects (diagnostics only)."""
    q = check_points(q, index.d)
    hit = _bucket_hits(index, _pass_masks(index, q))[0]
    tab = index.table
    parts = [tab.ids[tab.starts[b] : tab.starts[b + 1]] for b in np.flatnonzero(hit)]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class CountTable:
    """Bucket cardinalities; the keys mirror the source index's BucketTable."""

    keys: np.ndarray
    counts: np.ndarray
    tuple_keys: bool
    dropped: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict[Key, int]:
        if self.tuple_keys:
            return {tuple(int(v) for v in k): int(c) for k, c in zip(self.keys, self.counts)}
        return {int(k[0]): int(c) for k, c in zip(self.keys, self.counts)}


def to_count_table(index: LSFIndex) -> CountTable:
    """Replace each bucket by its cardinality."""
    tab = index.table
    keys = tab.keys.copy()
    counts = tab.sizes.astype(np.int64)
    keys.setflags(write=False)
    counts.setflags(write=False)
    return CountTable(keys, counts, index.kind == TENSOR, len(tab.dropped))


def _check_aligned(keys: np.ndarray, index: LSFIndex) -> None:
    if keys.shape != index.table.keys.shape or not np.array_equal(keys, index.table.keys):
        raise ValueError("table was not derived from this index")


def sum_over_search(values: np.ndarray, keys: np.ndarray, index: LSFIndex, queries: np.ndarray):
    _check_aligned(keys, index)
    return sum_over_keys(index, keys, values, queries)


def query_count(
    counts: CountTable, index: LSFIndex, q: np.ndarray, beta: float | None = None
) -> tuple[int, CostReport]:
    """Sum of counts over the inspected buckets.

    When ``beta`` is given the far points (``<q, x> < beta``) inside those
    buckets are also counted, using the index's stored points; the count
    structure itself never needs them.
    """
    sums, nb = sum_over_search(counts.counts, counts.keys, index, q)
    far = None
    if beta is not None:
        ids = inspected_point_ids(index, q)
        far = int((index.dataset.points[ids] @ np.asarray(q, dtype=np.float64) < beta).sum())
    return int(sums[0]), CostReport(index.filters_evaluated, nb[0], 0, far)


def query_count_batch(counts: CountTable, index: LSFIndex, queries: np.ndarray) -> tuple[np.ndarray, list[int]]:
    return sum_over_search(counts.counts, counts.keys, index, queries)


# -- serialization ----------------------------------------------------------

_INDEX_HEADER = struct.Struct("<4sII16sddQdI")  # magic, version, t, kind, alpha, beta, seed, eta, n


def index_to_bytes(index: LSFIndex) -> bytes:
    """Header, ``t`` bank blobs, then ``(key, count, sorted ids)`` records.

    The band is recomputed from the bank size on load; point coordinates are
    not part of the file and are supplied again from the vector file.
    """
    out = [
        _INDEX_HEADER.pack(
            INDEX_MAGIC,
            INDEX_VERSION,
            index.t,
            index.kind.encode().ljust(16, b"\0"),
            index.alpha,
            index.beta,
            index.seed & ((1 << 64) - 1),
            index.eta,
            index.n,
        )
    ]
    out.extend(bank_to_bytes(b) for b in index.banks)
    tab = index.table
    out.append(struct.pack("<Q", len(tab.keys)))
    for b in range(len(tab.keys)):
        ids = tab.ids[tab.starts[b] : tab.starts[b + 1]]
        out.append(tab.keys[b].astype("<u4").tobytes())
        out.append(struct.pack("<I", len(ids)))
        out.append(ids.astype("<u4").tobytes())
    out.append(struct.pack("<Q", len(tab.dropped)))
    out.append(tab.dropped.astype("<u4").tobytes())
    return b"".join(out)


def index_from_bytes(buf: bytes, dataset: SphereDataset) -> LSFIndex:
    """Rebuild an index from its serialized form and the original points."""
    if len(buf) < _INDEX_HEADER.size:
        raise FormatError("truncated index header", 0)
    magic, version, t, kind, alpha, beta, seed, eta, n = _INDEX_HEADER.unpack_from(buf, 0)
    if magic != INDEX_MAGIC:
        raise FormatError(f"bad index magic {magic!r}", 0)
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}", 4)
    kind = kind.rstrip(b"\0").decode()
    if n != dataset.n:
        raise FormatError(f"index was built over {n} points, dataset has {dataset.n}", _INDEX_HEADER.size - 4)
    off = _INDEX_HEADER.size
    banks = []
    for _ in range(t):
        bank, off = bank_from_bytes(buf, off)
        banks.append(bank)

    def take(fmt: str, count: int = 1):
        nonlocal off
        size = np.dtype(fmt).itemsize * count
        if off + size > len(buf):
            raise FormatError("truncated index body", off)
        vals = np.frombuffer(buf, dtype=fmt, count=count, offset=off)
        off += size
        return vals

    point_keys = np.full((n, t), -1, dtype=np.int64)
    (n_buckets,) = take("<u8")
    for _ in range(int(n_buckets)):
        key = take("<u4", t).astype(np.int64)
        (size,) = take("<u4")
        ids = take("<u4", int(size)).astype(np.int64)
        point_keys[ids] = key
    (n_dropped,) = take("<u8")
    take("<u4", int(n_dropped))
    if off != len(buf):
        raise FormatError("trailing bytes after index", off)
    table = BucketTable.from_point_keys(point_keys, tuple_keys=kind == TENSOR)
    band = None if kind == TOP1 else band_limits(banks[0].m)
    proj = np.full((n, t), np.nan)
    for j, bank in enumerate(banks):
        stored = point_keys[:, j] >= 0
        if stored.any():
            rows = np.flatnonzero(stored)
            proj[rows, j] = np.einsum("ij,ij->i", dataset.points[rows], bank.vectors[point_keys[rows, j]])
    proj.setflags(write=False)
    return LSFIndex(kind, dataset, tuple(banks), eta, band, table, proj, alpha, beta, seed)


_STRUCT_HEADER = struct.Struct("<4sI16sdI")
STRUCT_MAGIC = b"LSFS"


def structure_to_bytes(structure: FilterStructure) -> bytes:
    head = _STRUCT_HEADER.pack(
        STRUCT_MAGIC, INDEX_VERSION, structure.kind.encode().ljust(16, b"\0"), structure.eta, structure.t
    )
    return head + b"".join(bank_to_bytes(b) for b in structure.banks)


def structure_from_bytes(buf: bytes) -> FilterStructure:
    if len(buf) < _STRUCT_HEADER.size:
        raise FormatError("truncated structure header", 0)
    magic, version, kind, eta, t = _STRUCT_HEADER.unpack_from(buf, 0)
    if magic != STRUCT_MAGIC:
        raise FormatError(f"bad structure magic {magic!r}", 0)
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported structure version {version}", 4)
    off = _STRUCT_HEADER.size
    banks = []
    for _ in range(t):
        bank, off = bank_from_bytes(buf, off)
        banks.append(bank)
    if off != len(buf):
        raise FormatError("trailing bytes after structure", off)
    return FilterStructure(kind.rstrip(b"\0").decode(), tuple(banks), eta)


def save_index(index: LSFIndex, path: str | Path) -> None:
    Path(path).write_bytes(index_to_bytes(index))


def load_index(path: str | Path, dataset: SphereDataset) -> LSFIndex:
    return index_from_bytes(Path(path).read_bytes(), dataset)
