import os
import subprocess
import sys

import numpy as np
import pytest

from vkdlab import _kernels as K

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")


def lcs_oracle(a, b):
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a)):
        for j in range(len(b)):
            dp[i + 1][j + 1] = dp[i][j] + 1 if a[i] == b[j] else max(dp[i][j + 1], dp[i + 1][j])
    return dp[-1][-1]


@pytest.mark.parametrize("impl", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_lcs_matches_oracle(impl):
    fn = getattr(K, f"lcs_length_{impl}")
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = rng.integers(0, 4, rng.integers(0, 15))
        b = rng.integers(0, 4, rng.integers(0, 15))
        assert fn(a, b) == lcs_oracle(a.tolist(), b.tolist())


@pytest.mark.parametrize("impl", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_fisher_matches_loop(impl):
    fn = getattr(K, f"fisher_accumulate_{impl}")
    rng = np.random.default_rng(1)
    delta, x = rng.standard_normal((7, 3)), rng.standard_normal((7, 4))
    expected = sum(np.outer(d, v) ** 2 for d, v in zip(delta, x))
    np.testing.assert_allclose(fn(delta, x), expected, rtol=1e-12)


@needs_numba
def test_paths_agree():
    rng = np.random.default_rng(2)
    delta, x = rng.standard_normal((50, 6)), rng.standard_normal((50, 9))
    np.testing.assert_allclose(K.fisher_accumulate_numba(delta, x), K.fisher_accumulate_numpy(delta, x),
                               rtol=1e-12)
    a, b = rng.integers(0, 5, 40), rng.integers(0, 5, 33)
    assert K.lcs_length_numba(a, b) == K.lcs_length_numpy(a, b)


def test_env_flag_selects_numpy():
    code = "from vkdlab import _kernels as K; print(K.USE_NUMBA, K.lcs_length([1, 2, 3], [1, 3]))"
    env = dict(os.environ, VKDLAB_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "2"]
