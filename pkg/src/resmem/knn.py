"""Top-k L2 neighbor search over embeddings and the soft-kNN residual regressor.

Two index kinds share one query interface: an exact full scan, and an
inverted-file index whose coarse quantizer is k-means with farthest-point
seeding. Queries probing every list reproduce the exact result set.

Index file layout (RIVF v1, little-endian; embeddings are not stored, the
loader takes them as an argument):

    magic "RIVF" | version u32 | n u64 | d u64 | n_list u64
    centroids (n_list*d f32) | list lengths (n_list u64) | row ids (n u32)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from resmem import _kernels
from resmem.errors import (
    BadMagic,
    EmptyMatrix,
    ShapeMismatch,
    VersionUnsupported,
)
from resmem.residual import HyperParams, SparseResidualStore

MAGIC = b"RIVF"
VERSION = 1

_HEADER = struct.Struct("<4sIQQQ")


@dataclass(frozen=True)
class NeighborSet:
    """Rows sorted by ascending L2 distance, ties toward the lower row index."""

    indices: np.ndarray    # (k,) int64
    distances: np.ndarray  # (k,) float64

    def __len__(self) -> int:
        return self.indices.shape[0]


class ExactIndex:
    """Full-scan index over a float32 embedding matrix."""

    kind = "exact"

    def __init__(self, embeddings: np.ndarray):
        Z = np.ascontiguousarray(embeddings, dtype=np.float32)
        if Z.ndim != 2 or Z.shape[0] < 1:
            raise EmptyMatrix("index needs at least one embedding row")
        if not np.isfinite(Z).all():
            raise ShapeMismatch("embeddings contain NaN or Inf")
        self.embeddings = Z

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def scan(self, query: np.ndarray, n_probe: int) -> Tuple[np.ndarray, np.ndarray]:
        """Candidate row ids and squared distances (here: every row)."""
        d2 = _kernels.sqdist_to_rows(self.embeddings, query)
        return np.arange(self.n, dtype=np.int64), d2


class IvfIndex:
    """Inverted-file index: points bucketed under their nearest centroid."""

    kind = "ivf"

    def __init__(self, embeddings: np.ndarray, centroids: np.ndarray, lists: List[np.ndarray]):
        Z = np.ascontiguousarray(embeddings, dtype=np.float32)
        C = np.ascontiguousarray(centroids, dtype=np.float32)
        if Z.ndim != 2 or Z.shape[0] < 1:
            raise EmptyMatrix("index needs at least one embedding row")
        if not np.isfinite(C).all():
            raise ShapeMismatch("centroids contain NaN or Inf")
        if C.shape[1] != Z.shape[1]:
            raise ShapeMismatch("centroid dimension differs from embeddings")
        covered = np.sort(np.concatenate([np.asarray(l, dtype=np.int64) for l in lists]))
        if covered.shape[0] != Z.shape[0] or not np.array_equal(covered, np.arange(Z.shape[0])):
            raise ShapeMismatch("posting lists must partition the row range")
        self.embeddings = Z
        self.centroids = C
        self.lists = [np.ascontiguousarray(l, dtype=np.int64) for l in lists]

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def n_list(self) -> int:
        return self.centroids.shape[0]

    def scan(self, query: np.ndarray, n_probe: int) -> Tuple[np.ndarray, np.ndarray]:
        """Candidate row ids and squared distances within the probed lists."""
        if not 1 <= n_probe <= self.n_list:
            raise ShapeMismatch(f"n_probe must lie in [1, {self.n_list}]")
        cd2 = _kernels.sqdist_to_rows(self.centroids, query)
        probe = np.lexsort((np.arange(self.n_list), cd2))[:n_probe]
        cand = np.concatenate([self.lists[i] for i in probe])
        d2 = _kernels.sqdist_to_rows(self.embeddings[cand], query)
        return cand, d2


def build_exact_index(Z: np.ndarray) -> ExactIndex:
    return ExactIndex(Z)


def _nearest_assignments(Z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Per-row nearest centroid, ties toward the lower centroid index."""
    d2 = _kernels.sqdist_matrix(Z, centroids)
    return np.argmin(d2, axis=1)


def _farthest_point_seeds(Z: np.ndarray, n_list: int, seed: int) -> np.ndarray:
    """Deterministic seeding: random first point, then repeated farthest point."""
    n = Z.shape[0]
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    min_d2 = _kernels.sqdist_to_rows(Z, Z[chosen[0]])
    while len(chosen) < n_list:
        nxt = int(np.argmax(min_d2))  # argmax takes the first max: lowest index wins ties
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, _kernels.sqdist_to_rows(Z, Z[nxt]))
    return np.asarray(chosen, dtype=np.int64)


def build_ivf_index(Z: np.ndarray, n_list: int, iters: int = 10, seed: int = 0) -> IvfIndex:
    """k-means coarse quantizer with `iters` Lloyd steps, then posting lists."""
    Z = np.ascontiguousarray(Z, dtype=np.float32)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise EmptyMatrix("index needs at least one embedding row")
    n = Z.shape[0]
    if not 1 <= n_list <= n:
        raise ShapeMismatch(f"n_list must lie in [1, {n}]")

    seeds = _farthest_point_seeds(Z, n_list, seed)
    centroids = Z[seeds].astype(np.float64)

    for _ in range(iters):
        assign = _nearest_assignments(Z, centroids.astype(np.float32))
        sums = np.zeros((n_list, Z.shape[1]), dtype=np.float64)
        np.add.at(sums, assign, Z.astype(np.float64))
        counts = np.bincount(assign, minlength=n_list)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            # re-seed each empty cluster with the point farthest from its centroid
            d2own = _kernels.sqdist_matrix(Z, centroids.astype(np.float32))[
                np.arange(n), assign
            ]
            taken = set()
            for cluster in empty:
                far_order = np.argsort(-d2own, kind="stable")
                for cand in far_order:
                    if int(cand) not in taken:
                        taken.add(int(cand))
                        centroids[cluster] = Z[cand].astype(np.float64)
                        break

    centroids32 = centroids.astype(np.float32)
    assign = _nearest_assignments(Z, centroids32)
    lists = [np.flatnonzero(assign == i).astype(np.int64) for i in range(n_list)]
    return IvfIndex(Z, centroids32, lists)


def query_topk(index, query: np.ndarray, k: int, n_probe: int = 1) -> NeighborSet:
    """Top-k L2 neighbors; exact over all rows or within the probed lists."""
    if k < 1:
        raise ShapeMismatch("k must be >= 1")
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (index.d,):
        raise ShapeMismatch(f"query shape {query.shape} != ({index.d},)")
    cand, d2 = index.scan(query, n_probe)
    order = np.lexsort((cand, d2))[: min(k, cand.shape[0])]
    return NeighborSet(indices=cand[order], distances=np.sqrt(d2[order]))


def soft_weights(neighbors: NeighborSet, sigma: float, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Kernel weights exp(-distance/sigma) thresholded at the k-th largest.

    Every entry tied with the k-th raw weight is kept; kept weights are
    normalized to sum to 1. The shared factor exp(-d_min/sigma) is divided
    out before exponentiation, which leaves the normalized weights unchanged
    but keeps the leading weight representable for tiny sigma.

    Returns (row indices, weights) in ascending-distance order.
    """
    if len(neighbors) == 0:
        raise ShapeMismatch("neighbor set must be nonempty")
    if not sigma > 0.0:
        raise ShapeMismatch("sigma must be positive")
    d = neighbors.distances
    e = np.exp(-(d - d[0]) / sigma)
    if k < len(neighbors):
        keep = e >= e[k - 1]
    else:
        keep = np.ones(len(neighbors), dtype=bool)
    w = e[keep]
    return neighbors.indices[keep], w / w.sum()


def knn_residual(
    index, store: SparseResidualStore, query: np.ndarray, hp: HyperParams, n_probe: int = 1
) -> np.ndarray:
    """Weighted sum of neighbor residual rows; every entry lies in (-1, 1)."""
    if store.n != index.n:
        raise ShapeMismatch(f"store rows {store.n} != index rows {index.n}")
    neighbors = query_topk(index, query, hp.k, n_probe)
    rows, weights = soft_weights(neighbors, hp.sigma, hp.k)
    return store.rows_sum(rows, weights)


def save_ivf(index: IvfIndex, path) -> None:
    """Write an RIVF v1 file (centroids and posting lists only)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, index.n, index.d, index.n_list))
        fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
        lengths = np.array([l.shape[0] for l in index.lists], dtype="<u8")
        fh.write(lengths.tobytes())
        for l in index.lists:
            fh.write(np.ascontiguousarray(l, dtype="<u4").tobytes())


def load_ivf(path, embeddings: np.ndarray) -> IvfIndex:
    """Read an RIVF v1 file and attach it to the given embedding matrix."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise BadMagic(f"{path}: file shorter than the RIVF header")
    magic, version, n, d, n_list = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported")
    Z = np.ascontiguousarray(embeddings, dtype=np.float32)
    if Z.shape != (n, d):
        raise ShapeMismatch(f"{path}: embeddings shape {Z.shape} != ({n}, {d})")
    expected = _HEADER.size + n_list * d * 4 + n_list * 8 + n * 4
    if len(raw) != expected:
        raise ShapeMismatch(f"{path}: file holds {len(raw)} bytes, header declares {expected}")
    off = _HEADER.size
    centroids = np.frombuffer(raw, dtype="<f4", count=n_list * d, offset=off).reshape(n_list, d)
    off += n_list * d * 4
    lengths = np.frombuffer(raw, dtype="<u8", count=n_list, offset=off).astype(np.int64)
    off += n_list * 8
    if int(lengths.sum()) != n:
        raise ShapeMismatch(f"{path}: posting list lengths sum to {lengths.sum()}, expected {n}")
    lists = []
    for ln in lengths:
        lists.append(np.frombuffer(raw, dtype="<u4", count=int(ln), offset=off).astype(np.int64))
        off += int(ln) * 4
    return IvfIndex(Z, centroids.copy(), lists)
