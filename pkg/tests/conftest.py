import itertools

import numpy as np
import pytest

from statfuse.frame import SampleFrame


def random_frames(rng, n1, n2, p=2, q=2, r=2, n12=0, onehot=False):
    """Recipient/donor frames with ``n12`` shared units and lognormal weights."""
    N = n1 + n2 - n12
    x = rng.normal(size=(N, p)) * rng.uniform(0.5, 3, size=p) + rng.normal(size=p)
    if onehot:
        y = np.eye(q)[rng.integers(q, size=N)]
        z = np.eye(r)[rng.integers(r, size=N)]
    else:
        y = x @ rng.normal(size=(p, q)) + rng.normal(size=(N, q))
        z = x @ rng.normal(size=(p, r)) + rng.normal(size=(N, r))
    ids = [f"u{i}" for i in range(N)]
    s1 = list(range(n1))
    s2 = list(range(n1 - n12, N))
    v1 = rng.lognormal(1.0, 0.4, size=n1)
    v2 = rng.lognormal(0.5, 0.4, size=n2)
    rec = SampleFrame([ids[i] for i in s1], x[s1], y[s1], v1, "recipient")
    don = SampleFrame([ids[i] for i in s2], x[s2], z[s2], v2, "donor")
    return rec, don


def brute_force_transport(c, a, b):
    """Minimum over all basic feasible solutions, by enumerating cell subsets.

    A basis is any set of ``m + n - 1`` cells forming a spanning tree of the
    bipartite graph; its flows are the unique solution of the marginal
    equations restricted to those cells.
    """
    m, n = c.shape
    cells = [(i, j) for i in range(m) for j in range(n)]
    rhs = np.concatenate([a, b])
    best = np.inf
    for subset in itertools.combinations(range(m * n), m + n - 1):
        mat = np.zeros((m + n, m + n - 1))
        for t, s in enumerate(subset):
            i, j = cells[s]
            mat[i, t] = 1
            mat[m + j, t] = 1
        if np.linalg.matrix_rank(mat) < m + n - 1:
            continue
        f, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        if f.min() < -1e-10 or np.abs(mat @ f - rhs).max() > 1e-9:
            continue
        obj = sum(f[t] * c[cells[s]] for t, s in enumerate(subset))
        best = min(best, obj)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
