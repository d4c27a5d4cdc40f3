import os
import subprocess
import sys

import numpy as np
import pytest

from sapgen import kernels


def lcs_oracle(a, b):
    """Classic full-table DP, kept independent of the shipped kernels."""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[n][m]


def find_repeat_oracle(codes, min_window):
    n = len(codes)
    for w in range(min_window, n // 2 + 1):
        for i in range(n - 2 * w + 1):
            if list(codes[i : i + w]) == list(codes[i + w : i + 2 * w]):
                return i + w
    return -1


def all_impls(name):
    impls = [getattr(kernels, f"{name}_numpy")]
    if kernels.HAVE_NUMBA:
        impls.append(getattr(kernels, f"{name}_numba"))
    return impls


@pytest.mark.parametrize("impl", all_impls("lcs_length"), ids=lambda f: f.__name__)
def test_lcs_matches_full_table_oracle(impl):
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.integers(0, 5, size=rng.integers(0, 15))
        b = rng.integers(0, 5, size=rng.integers(0, 15))
        assert impl(a, b) == lcs_oracle(list(a), list(b))


@pytest.mark.parametrize("impl", all_impls("lcs_length"), ids=lambda f: f.__name__)
def test_lcs_known_cases(impl):
    cases = [
        ([1, 2, 3], [1, 2, 3], 3),
        ([1, 2, 3], [3, 2, 1], 1),
        ([1, 2, 3, 4], [2, 4], 2),
        ([], [1, 2], 0),
        ([7], [], 0),
    ]
    for a, b, want in cases:
        got = impl(np.array(a, dtype=np.int64), np.array(b, dtype=np.int64))
        assert got == want


@pytest.mark.parametrize("impl", all_impls("greedy_match"), ids=lambda f: f.__name__)
def test_greedy_match_matches_the_definition(impl):
    rng = np.random.default_rng(1)
    for _ in range(50):
        cand = rng.normal(size=(rng.integers(1, 8), 6))
        ref = rng.normal(size=(rng.integers(1, 8), 6))
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        ref /= np.linalg.norm(ref, axis=1, keepdims=True)
        p, r = impl(cand, ref)
        sim = cand @ ref.T
        assert p == pytest.approx(sim.max(axis=1).mean(), abs=1e-12)
        assert r == pytest.approx(sim.max(axis=0).mean(), abs=1e-12)


@pytest.mark.parametrize("impl", all_impls("greedy_match"), ids=lambda f: f.__name__)
def test_greedy_match_empty_inputs(impl):
    empty = np.zeros((0, 3))
    some = np.eye(3)
    assert impl(empty, some) == (0.0, 0.0)
    assert impl(some, empty) == (0.0, 0.0)


@pytest.mark.parametrize("impl", all_impls("find_repeat"), ids=lambda f: f.__name__)
def test_find_repeat_matches_brute_force(impl):
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(0, 14))
        codes = rng.integers(0, 3, size=n).astype(np.int64)
        for mw in (1, 2, 3):
            assert impl(codes, mw) == find_repeat_oracle(list(codes), mw)


@pytest.mark.parametrize("impl", all_impls("find_repeat"), ids=lambda f: f.__name__)
def test_find_repeat_prefers_smallest_window_then_earliest_start(impl):
    # window 1 at i=4 beats window 2 at i=0
    codes = np.array([1, 2, 1, 2, 3, 3], dtype=np.int64)
    assert impl(codes, 1) == 5
    # with min_window 2 the (1,2)(1,2) repeat wins instead
    assert impl(codes, 2) == 2
    # no repeat long enough
    assert impl(codes, 3) == -1


def test_numpy_and_numba_paths_agree_on_random_inputs():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba not active in this process")
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = rng.integers(0, 6, size=rng.integers(0, 30))
        b = rng.integers(0, 6, size=rng.integers(0, 30))
        assert kernels.lcs_length_numba(a, b) == kernels.lcs_length_numpy(a, b)
        codes = rng.integers(0, 4, size=rng.integers(0, 30)).astype(np.int64)
        assert kernels.find_repeat_numba(codes, 2) == kernels.find_repeat_numpy(
            codes, 2
        )


def test_env_flag_forces_the_numpy_path():
    code = (
        "from sapgen import kernels\n"
        "import numpy as np\n"
        "assert not kernels.HAVE_NUMBA\n"
        "assert kernels.lcs_length is kernels.lcs_length_numpy\n"
        "assert kernels.find_repeat is kernels.find_repeat_numpy\n"
        "assert kernels.greedy_match is kernels.greedy_match_numpy\n"
        "a = np.array([1, 2, 3, 1, 2, 3], dtype=np.int64)\n"
        "assert kernels.lcs_length(a, a) == 6\n"
        "assert kernels.find_repeat(a, 1) == 3\n"
        "print('fallback ok')\n"
    )
    env = dict(os.environ, SAPGEN_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    assert "fallback ok" in out.stdout
