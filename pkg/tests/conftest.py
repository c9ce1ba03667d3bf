import itertools

import numpy as np
import pytest


def leibniz_det(M):
    """Determinant by the permutation expansion (no LU), for small matrices."""
    n = M.shape[0]
    total = 0.0
    for perm in itertools.permutations(range(n)):
        inversions = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        prod = 1.0
        for i, p in enumerate(perm):
            prod *= M[i, p]
        total += -prod if inversions % 2 else prod
    return total


def minors_oracle(A, k):
    """Compound matrix built from itertools subsets and Leibniz determinants."""
    n, m = A.shape
    rows = list(itertools.combinations(range(n), k))
    cols = list(itertools.combinations(range(m), k))
    out = np.empty((len(rows), len(cols)))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            out[i, j] = leibniz_det(A[np.ix_(r, c)])
    return out


def richardson_additive(A, k, h=1e-3):
    """d/de (I + eA)^(k) at e = 0 by a Richardson-extrapolated central difference."""
    n = A.shape[0]
    eye = np.eye(n)

    def central(step):
        plus = minors_oracle(eye + step * A, k)
        minus = minors_oracle(eye - step * A, k)
        return (plus - minus) / (2 * step)

    return (4 * central(h / 2) - central(h)) / 3


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
