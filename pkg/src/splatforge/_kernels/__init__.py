"""Query kernel backends.

Two implementations of the same contract live here: a Cython extension
(_core) and a NumPy/SciPy fallback (pure). Both order neighbors by
(squared distance, point index) so every downstream result is identical
regardless of which one is active.

Selection: the SPLATFORGE_BACKEND environment variable may be "auto"
(default; compiled if importable), "compiled", or "pure".
"""

from __future__ import annotations

import os

import numpy as np

from splatforge.errors import EmptyInput, InvalidInput

from . import pure as _pure
from .tree import build_tree

try:
    from . import _core as _compiled
except ImportError:  # extension not built; the fallback covers everything
    _compiled = None


def available_backends() -> tuple[str, ...]:
    return ("compiled", "pure") if _compiled is not None else ("pure",)


def _resolve(name: str | None) -> str:
    if name is None:
        name = os.environ.get("SPLATFORGE_BACKEND", "auto")
    if name == "auto":
        return "compiled" if _compiled is not None else "pure"
    if name == "compiled":
        if _compiled is None:
            raise InvalidInput("compiled backend requested but extension not built")
        return "compiled"
    if name == "pure":
        return "pure"
    raise InvalidInput(f"unknown backend {name!r}")


def active_backend() -> str:
    """Backend the current environment selects by default."""
    return _resolve(None)


def content_hash64(data, backend: str | None = None) -> int:
    """FNV-1a 64-bit hash of a bytes-like buffer."""
    if _resolve(backend) == "compiled":
        return int(_compiled.fnv1a64(np.frombuffer(bytes(data), dtype=np.uint8)))
    return _pure.fnv1a64(data)


CONTENT_HASH_NAME = "fnv1a64"


def _as_queries(queries: np.ndarray) -> tuple[np.ndarray, bool]:
    q = np.ascontiguousarray(queries, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != 3:
        raise InvalidInput(f"queries must be (M, 3), got {q.shape}")
    return q, single


class KernelIndex:
    """Nearest-neighbor index over an (N, 3) point array.

    knn(queries, k) -> (indices (M, k), distances (M, k)), rows ordered by
    (squared distance, index). radius(queries, r) -> CSR-style
    (indptr (M+1,), indices, distances) with the same per-row ordering and
    a closed ball (d <= r).
    """

    def __init__(self, points: np.ndarray, backend: str | None = None):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInput(f"points must be (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyInput("cannot index an empty point set")
        self.backend = _resolve(backend)
        self._n = pts.shape[0]
        if self.backend == "compiled":
            self._tree = build_tree(pts)
        else:
            self._impl = _pure.PureIndex(pts)

    def __len__(self) -> int:
        return self._n

    def knn(self, queries: np.ndarray, k: int):
        if not 1 <= k <= self._n:
            raise InvalidInput(f"k must be in [1, {self._n}], got {k}")
        q, single = _as_queries(queries)
        if self.backend == "compiled":
            t = self._tree
            idx, dist = _compiled.knn(
                t["pts"], t["perm"], t["split_dim"], t["split_val"],
                t["left"], t["right"], t["start"], t["end"], q, k,
            )
        else:
            idx, dist = self._impl.knn(q, k)
        if single:
            return idx[0], dist[0]
        return idx, dist

    def radius(self, queries: np.ndarray, r: float):
        if not (np.isfinite(r) and r >= 0):
            raise InvalidInput(f"radius must be finite and >= 0, got {r}")
        q, _ = _as_queries(queries)
        if self.backend == "compiled":
            t = self._tree
            counts, idx, d2 = _compiled.radius_collect(
                t["pts"], t["perm"], t["split_dim"], t["split_val"],
                t["left"], t["right"], t["start"], t["end"], q, r,
            )
        else:
            counts, idx, d2 = self._impl.radius(q, r)
        qid = np.repeat(np.arange(q.shape[0], dtype=np.int64), counts)
        order = np.lexsort((idx, d2, qid))
        indptr = np.zeros(q.shape[0] + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return indptr, idx[order], np.sqrt(d2[order])
