"""Median-split k-d tree construction shared by the compiled backend.

The tree is stored as flat arrays so the traversal kernels stay allocation
free. Splits use the widest dimension (lowest index on ties) and a stable
argsort, which makes the structure deterministic for any input, duplicates
included.
"""

from __future__ import annotations

import numpy as np

LEAF_SIZE = 16


def build_tree(points: np.ndarray, leaf_size: int = LEAF_SIZE) -> dict:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    split_dim: list[int] = []
    split_val: list[float] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    end: list[int] = []
    perm = np.empty(n, dtype=np.int32)
    cursor = 0

    def build(idx: np.ndarray) -> int:
        nonlocal cursor
        node = len(split_dim)
        split_dim.append(-1)
        split_val.append(0.0)
        left.append(-1)
        right.append(-1)
        start.append(0)
        end.append(0)
        if idx.size <= leaf_size:
            start[node] = cursor
            end[node] = cursor + idx.size
            perm[cursor : cursor + idx.size] = idx
            cursor += idx.size
            return node
        sub = pts[idx]
        extent = sub.max(axis=0) - sub.min(axis=0)
        dim = int(np.argmax(extent))
        order = np.argsort(sub[:, dim], kind="stable")
        mid = idx.size // 2
        split_dim[node] = dim
        split_val[node] = float(sub[order[mid], dim])
        left[node] = build(idx[order[:mid]])
        right[node] = build(idx[order[mid:]])
        return node

    build(np.arange(n, dtype=np.int32))
    return {
        "pts": np.ascontiguousarray(pts[perm]),
        "perm": perm,
        "split_dim": np.asarray(split_dim, dtype=np.int32),
        "split_val": np.asarray(split_val, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int32),
        "right": np.asarray(right, dtype=np.int32),
        "start": np.asarray(start, dtype=np.int32),
        "end": np.asarray(end, dtype=np.int32),
    }
