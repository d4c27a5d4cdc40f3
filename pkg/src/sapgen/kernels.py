"""Array kernels behind the metric and scoring hot paths.

Each kernel ships in two versions: a numba-compiled one and a pure-numpy
fallback. The numba path is used when numba imports cleanly; setting the
environment variable ``SAPGEN_NO_NUMBA=1`` forces the numpy path. Both
versions are importable directly (``lcs_length_numba`` / ``lcs_length_numpy``)
so the benchmark script can compare them. ``greedy_match`` is the exception:
its numpy version rides on BLAS and wins, so it is always the default.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("SAPGEN_NO_NUMBA", "") == "1"

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled via SAPGEN_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# Longest common subsequence length (token codes -> LCS length).

def lcs_length_numpy(a: np.ndarray, b: np.ndarray) -> int:
    """Row-vectorized LCS: each row update is a prefix maximum.

    Uses the relaxed recurrence dp[i][j] = max(dp[i-1][j], dp[i][j-1],
    dp[i-1][j-1] + match), whose left-neighbor term unrolls to a running max.
    """
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        match = (b == a[i]).astype(np.int64)
        g = np.maximum(prev[1:], prev[:-1] + match)
        np.maximum.accumulate(g, out=g)
        cur[1:] = g
        prev, cur = cur, prev
    return int(prev[-1])


if HAVE_NUMBA:

    @njit(cache=True)
    def _lcs_length_nb(a, b):  # pragma: no cover - exercised via wrapper
        n = a.shape[0]
        m = b.shape[0]
        prev = np.zeros(m + 1, dtype=np.int64)
        cur = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            ai = a[i]
            for j in range(m):
                if ai == b[j]:
                    v = prev[j] + 1
                else:
                    v = prev[j + 1]
                    if cur[j] > v:
                        v = cur[j]
                cur[j + 1] = v
            for j in range(m + 1):
                prev[j] = cur[j]
        return prev[m]

    def lcs_length_numba(a: np.ndarray, b: np.ndarray) -> int:
        return int(_lcs_length_nb(np.ascontiguousarray(a), np.ascontiguousarray(b)))

    lcs_length = lcs_length_numba
else:
    lcs_length = lcs_length_numpy


# ---------------------------------------------------------------------------
# Greedy token matching: mean of row maxima / column maxima of C @ R.T.

def greedy_match_numpy(cand: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """Precision/recall of greedy matching over normalized embedding rows."""
    if cand.shape[0] == 0 or ref.shape[0] == 0:
        return 0.0, 0.0
    sim = cand @ ref.T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    return precision, recall


if HAVE_NUMBA:

    @njit(cache=True)
    def _greedy_match_nb(cand, ref):  # pragma: no cover - exercised via wrapper
        n = cand.shape[0]
        m = ref.shape[0]
        d = cand.shape[1]
        colbest = np.full(m, -1e300)
        psum = 0.0
        for i in range(n):
            rowbest = -1e300
            for j in range(m):
                s = 0.0
                for k in range(d):
                    s += cand[i, k] * ref[j, k]
                if s > rowbest:
                    rowbest = s
                if s > colbest[j]:
                    colbest[j] = s
            psum += rowbest
        rsum = 0.0
        for j in range(m):
            rsum += colbest[j]
        return psum / n, rsum / m

    def greedy_match_numba(cand: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
        if cand.shape[0] == 0 or ref.shape[0] == 0:
            return 0.0, 0.0
        p, r = _greedy_match_nb(np.ascontiguousarray(cand), np.ascontiguousarray(ref))
        return float(p), float(r)


# The jitted loop cannot beat the BLAS matmul behind the numpy version
# (see benchmarks/bench_kernels.py), so the numpy path is always the default.
greedy_match = greedy_match_numpy


# ---------------------------------------------------------------------------
# First repeated adjacent window: smallest window w >= min_window, earliest
# start i with codes[i:i+w] == codes[i+w:i+2w]. Returns the keep-length i+w,
# or -1 when no such repeat exists.

def find_repeat_numpy(codes: np.ndarray, min_window: int) -> int:
    n = codes.shape[0]
    for w in range(min_window, n // 2 + 1):
        eq = codes[: n - w] == codes[w:]
        if not eq.any():
            continue
        run = np.cumsum(eq)
        # window sums of eq over [i, i+w); full runs mark repeat starts
        sums = run[w - 1 :].copy()
        sums[1:] -= run[: sums.shape[0] - 1]
        starts = np.nonzero(sums == w)[0]
        if starts.shape[0]:
            return int(starts[0]) + w
    return -1


if HAVE_NUMBA:

    @njit(cache=True)
    def _find_repeat_nb(codes, min_window):  # pragma: no cover - via wrapper
        n = codes.shape[0]
        for w in range(min_window, n // 2 + 1):
            for i in range(n - 2 * w + 1):
                ok = True
                for k in range(w):
                    if codes[i + k] != codes[i + w + k]:
                        ok = False
                        break
                if ok:
                    return i + w
        return -1

    def find_repeat_numba(codes: np.ndarray, min_window: int) -> int:
        return int(_find_repeat_nb(np.ascontiguousarray(codes), min_window))

    find_repeat = find_repeat_numba
else:
    find_repeat = find_repeat_numpy
