"""Binary dataset container for embedding / logits / label triples.

File layout (RMEM v1, little-endian, row-major):

    magic "RMEM" | version u32 | flags u32 | n u64 | d u64 | c u64
    [embeddings n*d f32] [logits n*c f32] [labels n u32]

flags bit0 = embeddings present, bit1 = logits present, bit2 = labels
present. Embeddings are mandatory in this toolkit; the flag bit exists so
the layout is self-describing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from resmem.errors import (
    BadMagic,
    EmptySplit,
    NonFiniteValue,
    ShapeMismatch,
    VersionUnsupported,
)

MAGIC = b"RMEM"
VERSION = 1

_HEADER = struct.Struct("<4sIIQQQ")

FLAG_EMBEDDINGS = 1
FLAG_LOGITS = 2
FLAG_LABELS = 4


@dataclass(frozen=True)
class EmbeddingDataset:
    """Immutable set of n examples: embedding rows plus optional logits/labels.

    The embeddings slot doubles as the raw-feature matrix when a dataset is
    used to train the base model from scratch.
    """

    embeddings: np.ndarray            # (n, d) float32
    c: int                            # number of classes (0 if untyped)
    logits: Optional[np.ndarray] = None   # (n, c) float32
    labels: Optional[np.ndarray] = None   # (n,) uint32

    def __post_init__(self):
        emb = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        object.__setattr__(self, "embeddings", emb)
        if emb.ndim != 2 or emb.shape[0] < 1 or emb.shape[1] < 1:
            raise ShapeMismatch(f"embeddings must be (n>=1, d>=1), got {emb.shape}")
        if not np.isfinite(emb).all():
            raise NonFiniteValue("embeddings contain NaN or Inf")
        n = emb.shape[0]
        if self.logits is not None or self.labels is not None:
            if self.c < 2:
                raise ShapeMismatch("c must be >= 2 when logits or labels present")
        if self.logits is not None:
            lg = np.ascontiguousarray(self.logits, dtype=np.float32)
            object.__setattr__(self, "logits", lg)
            if lg.shape != (n, self.c):
                raise ShapeMismatch(f"logits shape {lg.shape} != ({n}, {self.c})")
            if not np.isfinite(lg).all():
                raise NonFiniteValue("logits contain NaN or Inf")
        if self.labels is not None:
            lb = np.ascontiguousarray(self.labels, dtype=np.uint32)
            object.__setattr__(self, "labels", lb)
            if lb.shape != (n,):
                raise ShapeMismatch(f"labels shape {lb.shape} != ({n},)")
            if lb.size and int(lb.max()) >= self.c:
                raise ShapeMismatch(f"label {int(lb.max())} out of range for c={self.c}")

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def subset(self, indices: np.ndarray) -> "EmbeddingDataset":
        """New dataset holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingDataset(
            embeddings=self.embeddings[idx],
            c=self.c,
            logits=None if self.logits is None else self.logits[idx],
            labels=None if self.labels is None else self.labels[idx],
        )


@dataclass(frozen=True)
class SplitSpec:
    """Fractions (train, val, test) summing to 1, plus a shuffle seed."""

    fractions: Tuple[float, float, float]
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if len(fr) != 3:
            raise ShapeMismatch("exactly three split fractions required")
        if any(f < 0.0 or f > 1.0 for f in fr):
            raise ShapeMismatch("split fractions must lie in [0, 1]")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ShapeMismatch(f"split fractions sum to {sum(fr)}, expected 1")


def save_dataset(ds: EmbeddingDataset, path) -> None:
    """Write the dataset in the RMEM v1 layout."""
    flags = FLAG_EMBEDDINGS
    if ds.logits is not None:
        flags |= FLAG_LOGITS
    if ds.labels is not None:
        flags |= FLAG_LABELS
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, ds.n, ds.d, ds.c))
        fh.write(np.ascontiguousarray(ds.embeddings, dtype="<f4").tobytes())
        if ds.logits is not None:
            fh.write(np.ascontiguousarray(ds.logits, dtype="<f4").tobytes())
        if ds.labels is not None:
            fh.write(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())


def load_dataset(path) -> EmbeddingDataset:
    """Read an RMEM v1 file, validating magic, version, shapes and finiteness."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise BadMagic(f"{path}: file shorter than the RMEM header")
    magic, version, flags, n, d, c = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported")
    if flags & ~(FLAG_EMBEDDINGS | FLAG_LOGITS | FLAG_LABELS):
        raise ShapeMismatch(f"{path}: unknown flag bits {flags:#x}")
    if not flags & FLAG_EMBEDDINGS:
        raise ShapeMismatch(f"{path}: embeddings flag not set")
    if n < 1 or d < 1:
        raise ShapeMismatch(f"{path}: invalid sizes n={n}, d={d}")

    expected = _HEADER.size + n * d * 4
    if flags & FLAG_LOGITS:
        expected += n * c * 4
    if flags & FLAG_LABELS:
        expected += n * 4
    if len(raw) != expected:
        raise ShapeMismatch(
            f"{path}: file holds {len(raw)} bytes, header declares {expected}"
        )

    off = _HEADER.size
    emb = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += n * d * 4
    logits = None
    if flags & FLAG_LOGITS:
        logits = np.frombuffer(raw, dtype="<f4", count=n * c, offset=off).reshape(n, c)
        off += n * c * 4
    labels = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off)
    return EmbeddingDataset(embeddings=emb, c=int(c), logits=logits, labels=labels)


def split_indices(labels: np.ndarray, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified index partition of [0, n) into (train, val, test).

    Per class: shuffle, then floor(fraction * count) rows go to each split in
    (train, val, test) order. Leftover rows spill, in class order, to the
    first split still strictly below its exact global share fraction * n;
    this keeps the global split sizes on target when the floors round a small
    class to zero. Raises EmptySplit if a split with a positive fraction ends
    up with no rows at all.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    fr = spec.fractions
    rng = np.random.default_rng(spec.seed)

    parts = [[], [], []]
    leftovers = []
    for cls in np.unique(labels):
        cls_idx = np.flatnonzero(labels == cls)
        cls_idx = cls_idx[rng.permutation(cls_idx.shape[0])]
        count = cls_idx.shape[0]
        start = 0
        for s in range(3):
            take = int(np.floor(fr[s] * count))
            parts[s].append(cls_idx[start:start + take])
            start += take
        leftovers.extend(cls_idx[start:])

    sizes = [sum(a.shape[0] for a in parts[s]) for s in range(3)]
    for idx in leftovers:
        for s in range(3):
            if sizes[s] < fr[s] * n:
                parts[s].append(np.array([idx], dtype=np.int64))
                sizes[s] += 1
                break
        else:  # all splits at/above share; put it in the largest fraction
            s = int(np.argmax(fr))
            parts[s].append(np.array([idx], dtype=np.int64))
            sizes[s] += 1

    out = []
    for s in range(3):
        if fr[s] > 0.0 and sizes[s] == 0:
            raise EmptySplit(f"split {s} has fraction {fr[s]} but received no rows")
        merged = np.concatenate(parts[s]) if parts[s] else np.empty(0, dtype=np.int64)
        out.append(np.sort(merged.astype(np.int64)))
    return out[0], out[1], out[2]


def split(ds: EmbeddingDataset, spec: SplitSpec):
    """Stratified (train, val, test) datasets; deterministic given the seed."""
    if ds.labels is None:
        raise ShapeMismatch("split requires labels")
    tr, va, te = split_indices(ds.labels, spec)

    def take(idx):
        if idx.shape[0] == 0:
            # zero-row datasets are not representable; callers check sizes first
            return None
        return ds.subset(idx)

    return take(tr), take(va), take(te)
