import itertools
import math

import numpy as np
import pytest

from secest.model import LinearSystem


def circular_permutation(n):
    """Cyclic shift A with C = I: every sensor sees a rotated copy of the state."""
    A = np.roll(np.eye(n), 1, axis=0)
    return LinearSystem.autonomous(A, np.eye(n))


def brute_force_q_max(system, T):
    """Largest q such that removing any 2q sensors keeps the stacked observability rank n."""
    n, p = system.n, system.p
    blocks = [system.C]
    for _ in range(T - 1):
        blocks.append(blocks[-1] @ system.A)
    O3 = np.stack(blocks)
    for s in range(p + 1):
        for K in itertools.combinations(range(p), s):
            keep = [i for i in range(p) if i not in K]
            M = O3[:, keep, :].reshape(-1, n)
            if M.shape[0] == 0 or np.linalg.matrix_rank(M) < n:
                return max(0, math.ceil(s / 2 - 1)) if s > 0 else -1
    return math.ceil((p + 1) / 2 - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
