"""Compiled and NumPy distance kernels must agree bit for bit."""

import numpy as np
import pytest

from resmem import _kernels
from resmem._kernels import _fallback

try:
    from resmem._kernels import _core
except ImportError:
    _core = None


def naive_sqdist(a, b):
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            acc = 0.0
            for t in range(a.shape[1]):
                diff = float(a[i, t]) - float(b[j, t])
                acc += diff * diff
            out[i, j] = acc
    return out


class TestFallback:
    def test_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        for dtype in (np.float32, np.float64):
            a = rng.standard_normal((7, 5)).astype(dtype)
            b = rng.standard_normal((9, 5)).astype(dtype)
            np.testing.assert_array_equal(_fallback.sqdist_matrix(a, b), naive_sqdist(a, b))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            _fallback.sqdist_matrix(np.zeros((2, 3)), np.zeros((2, 4)))


@pytest.mark.skipif(_core is None, reason="compiled kernel not built")
class TestCompiled:
    def test_bitwise_equal_to_fallback(self):
        rng = np.random.default_rng(1)
        for dtype in (np.float32, np.float64):
            for m, n, d in ((1, 1, 1), (3, 17, 4), (20, 33, 64)):
                a = (rng.standard_normal((m, d)) * 100).astype(dtype)
                b = (rng.standard_normal((n, d)) * 100).astype(dtype)
                np.testing.assert_array_equal(
                    _core.sqdist_matrix(a, b), _fallback.sqdist_matrix(a, b)
                )

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((6, 3)).astype(np.float32)
        b = rng.standard_normal((4, 3)).astype(np.float32)
        np.testing.assert_array_equal(_core.sqdist_matrix(a, b), naive_sqdist(a, b))


def test_selected_backend_exposes_helpers():
    rng = np.random.default_rng(3)
    rows = rng.standard_normal((5, 2)).astype(np.float32)
    q = rows[2]
    d2 = _kernels.sqdist_to_rows(rows, q)
    assert d2.shape == (5,)
    assert d2[2] == 0.0
