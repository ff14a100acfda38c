"""Seeded Gaussian-mixture classification data at desk scale."""

from __future__ import annotations

import numpy as np

from resmem.datastore import EmbeddingDataset
from resmem.errors import ShapeMismatch


def demo_synthetic(seed: int, n: int, d: int, c: int) -> EmbeddingDataset:
    """Balanced c-class mixture: means uniform on the radius-3 sphere in R^d,
    unit-variance isotropic noise. Rows are grouped by class, class sizes
    differing by at most one."""
    if c < 2:
        raise ShapeMismatch("c must be >= 2")
    if n < c:
        raise ShapeMismatch("n must be >= c so every class appears")
    if d < 1:
        raise ShapeMismatch("d must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((c, d))
    means = 3.0 * g / np.linalg.norm(g, axis=1, keepdims=True)

    base, extra = divmod(n, c)
    counts = np.full(c, base, dtype=np.int64)
    counts[:extra] += 1
    labels = np.repeat(np.arange(c, dtype=np.uint32), counts)
    X = means[labels] + rng.standard_normal((n, d))
    return EmbeddingDataset(embeddings=X.astype(np.float32), c=c, labels=labels)
