"""Hot inner loops, each with a numba-compiled and a plain numpy version.

The compiled path is used unless ``VKDLAB_DISABLE_NUMBA=1`` is set before
import (or numba is missing). Both versions are importable by name so tests
and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("VKDLAB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def lcs_length_numpy(a: np.ndarray, b: np.ndarray) -> int:
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        return 0
    prev = np.zeros(n + 1, dtype=np.int64)
    for i in range(m):
        match = np.where(b == a[i], prev[:-1] + 1, 0)
        cur = np.zeros(n + 1, dtype=np.int64)
        # cur[j+1] = max(match[j], prev[j+1], cur[j]); the cur[j] dependency is a running max
        cur[1:] = np.maximum(match, prev[1:])
        cur = np.maximum.accumulate(cur)
        prev = cur
    return int(prev[n])


def fisher_accumulate_numpy(delta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum over samples of the squared per-sample weight gradient ``outer(delta_i, x_i)``."""
    return (delta * delta).T @ (x * x)


if HAVE_NUMBA:

    @njit(cache=True)
    def lcs_length_numba(a, b):
        m = a.shape[0]
        n = b.shape[0]
        prev = np.zeros(n + 1, dtype=np.int64)
        cur = np.zeros(n + 1, dtype=np.int64)
        for i in range(m):
            cur[0] = 0
            for j in range(n):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            prev, cur = cur, prev
        return prev[n]

    @njit(cache=True)
    def fisher_accumulate_numba(delta, x):
        n, n_out = delta.shape
        n_in = x.shape[1]
        out = np.zeros((n_out, n_in))
        for s in range(n):
            for r in range(n_out):
                d = delta[s, r]
                if d == 0.0:
                    continue
                for c in range(n_in):
                    g = d * x[s, c]
                    out[r, c] += g * g
        return out

else:  # pragma: no cover
    lcs_length_numba = None
    fisher_accumulate_numba = None


def lcs_length(a, b) -> int:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if USE_NUMBA:
        return int(lcs_length_numba(a, b))
    return lcs_length_numpy(a, b)


def fisher_accumulate(delta, x) -> np.ndarray:
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return fisher_accumulate_numba(delta, x)
    return fisher_accumulate_numpy(delta, x)
