"""Distance kernels: compiled core with a NumPy fallback.

The squared-L2 scan between rows of two matrices dominates the runtime of
neighbor queries, index builds and the Monte-Carlo trials, so it is the one
piece implemented twice: a Cython extension (``_core``) and a pure NumPy
version (``_fallback``). Both accumulate in float64 over float32 or float64
inputs and are interchangeable; the compiled one is picked at import when
available. Set ``RESMEM_FORCE_FALLBACK=1`` to force the NumPy path.
"""

import os

if os.environ.get("RESMEM_FORCE_FALLBACK"):
    from resmem._kernels import _fallback as _impl
else:
    try:
        from resmem._kernels import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from resmem._kernels import _fallback as _impl

BACKEND: str = _impl.BACKEND
sqdist_matrix = _impl.sqdist_matrix


def sqdist_to_rows(rows, query):
    """Squared L2 distance from one query vector to every row of a matrix."""
    return sqdist_matrix(query.reshape(1, -1), rows)[0]
