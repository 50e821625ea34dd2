"""Pure-Python (NumPy/SciPy) fallback for the query kernels.

scipy's cKDTree does the heavy lifting; a postprocess enforces the backend
contract that neighbor lists are ordered by (squared distance, point index)
so results are bit-identical to the compiled kernels, ties included.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

# Relative slack used when re-querying by radius to recover tie candidates.
# Much larger than any float64 rounding discrepancy between scipy's metric
# and ours, much smaller than any genuine distance gap it could bridge.
_TIE_SLACK = 1e-9


def backend_name():
    return "pure"


def fnv1a64(data) -> int:
    """FNV-1a 64-bit hash of a byte buffer (plain Python loop)."""
    h = 0xCBF29CE484222325
    for b in bytes(data):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class PureIndex:
    def __init__(self, points: np.ndarray):
        self._pts = np.ascontiguousarray(points, dtype=np.float64)
        self._tree = cKDTree(self._pts)

    def _sqdist(self, query: np.ndarray, idx: np.ndarray) -> np.ndarray:
        d = query - self._pts[idx]
        return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]

    def knn(self, queries: np.ndarray, k: int):
        n = self._pts.shape[0]
        m = queries.shape[0]
        idx_out = np.empty((m, k), dtype=np.int64)
        d2_out = np.empty((m, k), dtype=np.float64)
        if k == n:
            for qi in range(m):
                d2 = self._sqdist(queries[qi], np.arange(n))
                order = np.lexsort((np.arange(n), d2))
                idx_out[qi] = order
                d2_out[qi] = d2[order]
            return idx_out, np.sqrt(d2_out, out=d2_out)

        # Ask for one extra neighbor to detect ties straddling the k-th rank.
        dist, idx = self._tree.query(queries, k=k + 1)
        boundary_gap = dist[:, k] > dist[:, k - 1] * (1.0 + _TIE_SLACK)
        for qi in range(m):
            if boundary_gap[qi]:
                cand = idx[qi, :k]
            else:
                # Possible tie at the boundary: gather every candidate within
                # a slightly inflated k-th distance and re-rank exactly.
                r = dist[qi, k - 1] * (1.0 + _TIE_SLACK)
                cand = np.asarray(
                    self._tree.query_ball_point(queries[qi], r), dtype=np.int64
                )
            d2 = self._sqdist(queries[qi], cand)
            order = np.lexsort((cand, d2))[:k]
            idx_out[qi] = cand[order]
            d2_out[qi] = d2[order]
        return idx_out, np.sqrt(d2_out, out=d2_out)

    def radius(self, queries: np.ndarray, r: float):
        lists = self._tree.query_ball_point(queries, r * (1.0 + _TIE_SLACK))
        counts = np.empty(len(lists), dtype=np.int64)
        idx_parts = []
        d2_parts = []
        r2 = r * r
        for qi, cand in enumerate(lists):
            cand = np.asarray(cand, dtype=np.int64)
            d2 = self._sqdist(queries[qi], cand)
            keep = d2 <= r2
            counts[qi] = int(np.count_nonzero(keep))
            idx_parts.append(cand[keep])
            d2_parts.append(d2[keep])
        if idx_parts:
            idx = np.concatenate(idx_parts)
            d2 = np.concatenate(d2_parts)
        else:
            idx = np.empty(0, dtype=np.int64)
            d2 = np.empty(0, dtype=np.float64)
        return counts, idx, d2
