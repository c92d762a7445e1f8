"""Row-routing kernels shared by trees, forests and the evolutionary fitter.

A tree is passed as flat arrays: feature[i] is the split column of node i or
-1 for a leaf, with left/right child ids. Node 0 is the root and routing goes
left on x[feature] <= threshold. A numba fast path is used when available.
"""

from __future__ import annotations

import numpy as np


def _route_rows_numpy(feature, threshold, left, right, x):
    n = x.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        nd = node[idx]
        go_left = x[idx, feature[nd]] <= threshold[nd]
        node[idx] = np.where(go_left, left[nd], right[nd])
        active[idx] = feature[node[idx]] >= 0
    return node


try:  # pragma: no cover - exercised indirectly through route_rows
    from numba import njit

    @njit(cache=True)
    def _route_rows_numba(feature, threshold, left, right, x):
        n = x.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            node = 0
            f = feature[0]
            while f >= 0:
                if x[i, f] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
                f = feature[node]
            out[i] = node
        return out

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def route_rows(feature, threshold, left, right, x) -> np.ndarray:
    """Leaf node id for every row of x."""
    if HAVE_NUMBA:
        return _route_rows_numba(feature, threshold, left, right, x)
    return _route_rows_numpy(feature, threshold, left, right, x)
