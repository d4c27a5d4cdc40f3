import numpy as np
import pytest

from sapgen import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Compile any jitted kernels up front so timed tests measure steady state.
    a = np.array([1, 2, 3], dtype=np.int64)
    kernels.lcs_length(a, a)
    kernels.find_repeat(np.array([1, 2, 1, 2], dtype=np.int64), 1)
    vecs = np.eye(2)
    kernels.greedy_match(vecs, vecs)
