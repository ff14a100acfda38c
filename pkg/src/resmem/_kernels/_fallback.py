"""NumPy implementation of the distance kernel.

The accumulation loops over the feature axis in ascending order with float64
operands, which keeps it bit-identical to the compiled kernel (same IEEE
operations in the same order).
"""

import numpy as np

BACKEND = "numpy"


def sqdist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared L2 distances, shape (a.rows, b.rows), float64."""
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch between query and data matrices")
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    out = np.zeros((a64.shape[0], b64.shape[0]), dtype=np.float64)
    for t in range(a64.shape[1]):
        diff = a64[:, t, None] - b64[None, :, t]
        out += diff * diff
    return out
