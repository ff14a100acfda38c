"""Training residuals r = onehot(label) - softmax(logits / T), stored top-m.

Each row keeps its m largest-magnitude entries (ties broken toward the lower
class index) and is zero-filled on read. m = c keeps the full row. The
temperature used at build time travels with the store so prediction applies
the same scaling.

Store layout (RRES v1, little-endian):

    magic "RRES" | version u32 | n u64 | c u64 | m u64 | T f32
    then n*m (class u32, value f32) pairs, rows sorted by class index
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from resmem.errors import (
    BadMagic,
    NonPositiveSigma,
    NonPositiveTemperature,
    ShapeMismatch,
    VersionUnsupported,
)

MAGIC = b"RRES"
VERSION = 1

_HEADER = struct.Struct("<4sIQQQf")
_PAIR = np.dtype([("idx", "<u4"), ("val", "<f4")])


@dataclass(frozen=True)
class HyperParams:
    """Neighbor count k, kernel width sigma, softmax temperature."""

    k: int
    sigma: float
    temperature: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ShapeMismatch("k must be >= 1")
        if not self.sigma > 0.0:
            raise NonPositiveSigma(f"sigma must be positive, got {self.sigma}")
        if not self.temperature > 0.0:
            raise NonPositiveTemperature(
                f"temperature must be positive, got {self.temperature}"
            )


def softmax_temp(logits: np.ndarray, T: float) -> np.ndarray:
    """Temperature-scaled softmax, max-shifted for stability.

    Accepts a vector or a matrix of row vectors; returns float64.
    """
    if not T > 0.0:
        raise NonPositiveTemperature(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    shifted = z - z.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


class SparseResidualStore:
    """Per-example sparse residual rows plus the build temperature."""

    def __init__(self, indices: np.ndarray, values: np.ndarray, c: int, temperature: float):
        indices = np.ascontiguousarray(indices, dtype=np.uint32)
        values = np.ascontiguousarray(values, dtype=np.float32)
        if indices.ndim != 2 or indices.shape != values.shape:
            raise ShapeMismatch("indices and values must share an (n, m) shape")
        if indices.shape[1] > c:
            raise ShapeMismatch(f"m={indices.shape[1]} exceeds c={c}")
        if indices.size and int(indices.max()) >= c:
            raise ShapeMismatch("class index out of range")
        self.indices = indices
        self.values = values
        self.c = int(c)
        # f32 so the value survives a file round trip unchanged
        self.temperature = float(np.float32(temperature))

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def m(self) -> int:
        return self.indices.shape[1]

    def dense_row(self, i: int) -> np.ndarray:
        """Row i zero-filled to a length-c float64 vector."""
        row = np.zeros(self.c, dtype=np.float64)
        row[self.indices[i]] = self.values[i]
        return row

    def dense(self) -> np.ndarray:
        """All rows zero-filled, shape (n, c) float64."""
        out = np.zeros((self.n, self.c), dtype=np.float64)
        np.put_along_axis(out, self.indices.astype(np.int64), self.values, axis=1)
        return out

    def rows_sum(self, row_ids: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Weighted sum of zero-filled rows, float64 accumulation."""
        row_ids = np.asarray(row_ids, dtype=np.int64)
        contrib = self.values[row_ids].astype(np.float64)
        contrib *= np.asarray(weights, dtype=np.float64)[:, None]
        if self.m == self.c:
            # full-width rows are index-sorted, hence already dense
            return contrib.sum(axis=0)
        out = np.zeros(self.c, dtype=np.float64)
        np.add.at(out, self.indices[row_ids].reshape(-1).astype(np.int64), contrib.reshape(-1))
        return out


def dense_residuals(logits: np.ndarray, labels: np.ndarray, T: float) -> np.ndarray:
    """onehot(label) - softmax(logits / T) per row, cast to float32."""
    probs = softmax_temp(logits, T)
    r = -probs
    r[np.arange(r.shape[0]), np.asarray(labels, dtype=np.int64)] += 1.0
    return r.astype(np.float32)


# dense rows by default; very wide label spaces fall back to a truncated
# store unless the caller picks m explicitly
DENSE_DEFAULT_LIMIT = 256


def default_top_m(c: int) -> int:
    return c if c <= DENSE_DEFAULT_LIMIT else DENSE_DEFAULT_LIMIT


def compute_residuals(ds, T: float, m: Optional[int] = None) -> SparseResidualStore:
    """Build the residual store from a dataset carrying logits and labels.

    m defaults to c (dense) up to 256 classes, then caps at 256. Selection
    happens on the stored float32 values, so the kept entries are exactly
    the m largest stored magnitudes.
    """
    if ds.logits is None or ds.labels is None:
        raise ShapeMismatch("compute_residuals requires logits and labels")
    c = ds.c
    if m is None:
        m = default_top_m(c)
    if not 1 <= m <= c:
        raise ShapeMismatch(f"m must lie in [1, {c}], got {m}")

    r = dense_residuals(ds.logits, ds.labels, T)
    return build_store(r, m, T)


def build_store(dense: np.ndarray, m: int, T: float) -> SparseResidualStore:
    """Truncate dense float32 residual rows to their top-m entries."""
    dense = np.ascontiguousarray(dense, dtype=np.float32)
    n, c = dense.shape
    cols = np.broadcast_to(np.arange(c, dtype=np.int64), (n, c))
    # primary key: magnitude descending; secondary: class index ascending
    order = np.lexsort((cols, -np.abs(dense)), axis=1)
    keep = order[:, :m]
    keep.sort(axis=1)  # rows stored by ascending class index
    values = np.take_along_axis(dense, keep, axis=1)
    return SparseResidualStore(keep.astype(np.uint32), values, c, T)


def save_store(store: SparseResidualStore, path) -> None:
    """Write an RRES v1 file."""
    pairs = np.empty((store.n, store.m), dtype=_PAIR)
    pairs["idx"] = store.indices
    pairs["val"] = store.values
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, store.n, store.c, store.m, store.temperature))
        fh.write(pairs.tobytes())


def load_store(path) -> SparseResidualStore:
    """Read an RRES v1 file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise BadMagic(f"{path}: file shorter than the RRES header")
    magic, version, n, c, m, T = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported")
    expected = _HEADER.size + n * m * _PAIR.itemsize
    if len(raw) != expected:
        raise ShapeMismatch(f"{path}: file holds {len(raw)} bytes, header declares {expected}")
    pairs = np.frombuffer(raw, dtype=_PAIR, count=n * m, offset=_HEADER.size).reshape(n, m)
    return SparseResidualStore(pairs["idx"].copy(), pairs["val"].copy(), int(c), T)
