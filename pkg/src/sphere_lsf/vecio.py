"""Vector files: little-endian records of a u32 dimension followed by the values.

``.fvecs`` stores float32 values and ``.dvecs`` float64; any other extension is
read as float32.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, NormError
from .filters import NORM_TOL
from .index import SphereDataset

_DTYPES = {".fvecs": np.dtype("<f4"), ".dvecs": np.dtype("<f8")}


def dtype_for(path: str | Path) -> np.dtype:
    return _DTYPES.get(Path(path).suffix.lower(), _DTYPES[".fvecs"])


def vectors_to_bytes(vectors: np.ndarray, dtype: np.dtype) -> bytes:
    vectors = np.atleast_2d(np.asarray(vectors))
    n, d = vectors.shape
    rec = np.empty((n, 4 + d * dtype.itemsize), dtype=np.uint8)
    rec[:, :4] = np.frombuffer(np.uint32(d).astype("<u4").tobytes(), dtype=np.uint8)
    rec[:, 4:] = vectors.astype(dtype).view(np.uint8).reshape(n, -1)
    return rec.tobytes()


def vectors_from_bytes(buf: bytes, dtype: np.dtype) -> np.ndarray:
    """Parse every record; all records must share one dimension.

    Raises:
        FormatError: truncated record or inconsistent dimension, with the byte
            offset where parsing failed.
    """
    if not buf:
        return np.empty((0, 0), dtype=np.float64)
    if len(buf) < 4:
        raise FormatError("truncated dimension field", 0)
    d = int(np.frombuffer(buf, dtype="<u4", count=1)[0])
    if d == 0:
        raise FormatError("zero dimension", 0)
    size = 4 + d * dtype.itemsize
    n, rest = divmod(len(buf), size)
    if rest:
        offset = n * size
        # report where the short record's missing bytes begin
        raise FormatError(f"truncated record {n}", offset + 4 if rest >= 4 else offset)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(n, size)
    dims = raw[:, :4].copy().view("<u4").ravel()
    bad = np.flatnonzero(dims != d)
    if bad.size:
        raise FormatError(f"record {bad[0]} has dimension {dims[bad[0]]}, expected {d}", int(bad[0]) * size)
    return raw[:, 4:].copy().view(dtype).reshape(n, d).astype(np.float64)


def write_vectors(path: str | Path, vectors: np.ndarray) -> None:
    Path(path).write_bytes(vectors_to_bytes(vectors, dtype_for(path)))


def read_vectors(path: str | Path) -> np.ndarray:
    return vectors_from_bytes(Path(path).read_bytes(), dtype_for(path))


def read_sphere(path: str | Path, d: int | None = None, tol: float | None = None) -> SphereDataset:
    """Read a file as a sphere dataset.

    float32 files carry about 1e-7 relative error per coordinate, so the unit
    norm check is loosened to 1e-5 for them unless ``tol`` is given, and the
    rows are renormalized after the check. float64 rows are kept bit for bit.

    Raises:
        NormError: some record is not unit norm; lists the offending ids.
    """
    pts = read_vectors(path)
    if d is not None and len(pts) and pts.shape[1] != d:
        raise DimensionError(f"expected dimension {d}, file has {pts.shape[1]}")
    if tol is None:
        tol = NORM_TOL if dtype_for(path).itemsize == 8 else 1e-5
    bad = np.flatnonzero(np.abs(np.linalg.norm(pts, axis=1) - 1.0) > tol) if len(pts) else []
    if len(bad):
        raise NormError(list(map(int, bad)), tol)
    if len(pts) and dtype_for(path).itemsize == 4:
        # renormalize so float32 rounding does not trip the stricter dataset check
        pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return SphereDataset(pts if len(pts) else np.empty((0, d or 1)))
