# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled query kernels: k-d tree search and 64-bit content hashing.

The tree layout is built in Python (see _kernels.tree); this module only
walks it. Both kernels follow the same tie-break contract as the pure
backend: neighbors are ordered by (squared distance, point index).
"""

from libc.stdlib cimport free, malloc, realloc

import numpy as np


def backend_name():
    return "compiled"


# ---------------------------------------------------------------------------
# FNV-1a 64
# ---------------------------------------------------------------------------

def fnv1a64(const unsigned char[::1] data):
    """FNV-1a 64-bit hash of a byte buffer."""
    cdef unsigned long long h = 0xcbf29ce484222325ULL
    cdef Py_ssize_t i, n = data.shape[0]
    for i in range(n):
        h ^= <unsigned long long>data[i]
        h *= 0x100000001b3ULL
    return h


# ---------------------------------------------------------------------------
# k-d tree traversal
# ---------------------------------------------------------------------------

cdef inline double _sqdist(const double[:, ::1] pts, Py_ssize_t row,
                           const double* q) nogil:
    cdef double dx = q[0] - pts[row, 0]
    cdef double dy = q[1] - pts[row, 1]
    cdef double dz = q[2] - pts[row, 2]
    return dx * dx + dy * dy + dz * dz


cdef inline bint _worse(double d_a, long long i_a, double d_b, long long i_b) nogil:
    # True when (d_a, i_a) orders after (d_b, i_b).
    if d_a != d_b:
        return d_a > d_b
    return i_a > i_b


cdef void _heap_sift_down(double* hd, long long* hi, Py_ssize_t size) nogil:
    # Max-heap keyed by (distance, index); root holds the worst neighbor.
    cdef Py_ssize_t pos = 0, child
    cdef double dv = hd[0]
    cdef long long iv = hi[0]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _worse(hd[child + 1], hi[child + 1],
                                       hd[child], hi[child]):
            child += 1
        if _worse(hd[child], hi[child], dv, iv):
            hd[pos] = hd[child]
            hi[pos] = hi[child]
            pos = child
        else:
            break
    hd[pos] = dv
    hi[pos] = iv


cdef void _heap_push(double* hd, long long* hi, Py_ssize_t size,
                     double d, long long i) nogil:
    cdef Py_ssize_t pos = size
    cdef Py_ssize_t parent
    hd[pos] = d
    hi[pos] = i
    while pos > 0:
        parent = (pos - 1) // 2
        if _worse(hd[pos], hi[pos], hd[parent], hi[parent]):
            hd[parent], hd[pos] = hd[pos], hd[parent]
            hi[parent], hi[pos] = hi[pos], hi[parent]
            pos = parent
        else:
            break


def knn(const double[:, ::1] pts, const int[::1] perm,
        const int[::1] split_dim, const double[::1] split_val,
        const int[::1] left, const int[::1] right,
        const int[::1] start, const int[::1] end,
        const double[:, ::1] queries, int k):
    """k nearest neighbors for each query row.

    Returns (indices (M, k) int64, distances (M, k) float64), each row sorted
    ascending by (squared distance, index).
    """
    cdef Py_ssize_t m = queries.shape[0]
    idx_out = np.empty((m, k), dtype=np.int64)
    dist_out = np.empty((m, k), dtype=np.float64)
    cdef long long[:, ::1] idx_v = idx_out
    cdef double[:, ::1] dist_v = dist_out

    cdef double* hd = <double*>malloc(k * sizeof(double))
    cdef long long* hi = <long long*>malloc(k * sizeof(long long))
    cdef int* node_stack = <int*>malloc(2048 * sizeof(int))
    cdef double* dist_stack = <double*>malloc(2048 * sizeof(double))
    if hd == NULL or hi == NULL or node_stack == NULL or dist_stack == NULL:
        free(hd); free(hi); free(node_stack); free(dist_stack)
        raise MemoryError()

    cdef Py_ssize_t qi, j, size, sp
    cdef int node, near, far, d
    cdef double q[3]
    cdef double diff, dd, plane_d2
    try:
        for qi in range(m):
            q[0] = queries[qi, 0]
            q[1] = queries[qi, 1]
            q[2] = queries[qi, 2]
            size = 0
            sp = 0
            node_stack[sp] = 0
            dist_stack[sp] = 0.0
            sp += 1
            while sp > 0:
                sp -= 1
                node = node_stack[sp]
                plane_d2 = dist_stack[sp]
                # Prune: the far subtree cannot beat the current worst
                # neighbor, including on index tie-breaks, only when the
                # plane distance strictly exceeds it.
                if size == k and plane_d2 > hd[0]:
                    continue
                while split_dim[node] >= 0:
                    d = split_dim[node]
                    diff = q[d] - split_val[node]
                    if diff < 0:
                        near = left[node]
                        far = right[node]
                    else:
                        near = right[node]
                        far = left[node]
                    if size < k or diff * diff <= hd[0]:
                        node_stack[sp] = far
                        dist_stack[sp] = diff * diff
                        sp += 1
                    node = near
                for j in range(start[node], end[node]):
                    dd = _sqdist(pts, j, q)
                    if size < k:
                        _heap_push(hd, hi, size, dd, <long long>perm[j])
                        size += 1
                    elif dd < hd[0] or (dd == hd[0] and <long long>perm[j] < hi[0]):
                        hd[0] = dd
                        hi[0] = <long long>perm[j]
                        _heap_sift_down(hd, hi, size)
            # Pop the heap worst-first to emit ascending order.
            for j in range(size - 1, -1, -1):
                dist_v[qi, j] = hd[0]
                idx_v[qi, j] = hi[0]
                hd[0] = hd[j]
                hi[0] = hi[j]
                _heap_sift_down(hd, hi, j)
    finally:
        free(hd)
        free(hi)
        free(node_stack)
        free(dist_stack)
    return idx_out, np.sqrt(dist_out, out=dist_out)


def radius_collect(const double[:, ::1] pts, const int[::1] perm,
                   const int[::1] split_dim, const double[::1] split_val,
                   const int[::1] left, const int[::1] right,
                   const int[::1] start, const int[::1] end,
                   const double[:, ::1] queries, double r):
    """All neighbors within distance r (closed ball) of each query.

    Returns (counts (M,) int64, indices int64, sqdists float64); segment
    ordering is finalized by the shared postprocess in the package __init__.
    """
    cdef Py_ssize_t m = queries.shape[0]
    counts_out = np.zeros(m, dtype=np.int64)
    cdef long long[::1] counts = counts_out

    cdef Py_ssize_t cap = 1024
    cdef Py_ssize_t total = 0
    cdef long long* buf_i = <long long*>malloc(cap * sizeof(long long))
    cdef double* buf_d = <double*>malloc(cap * sizeof(double))
    cdef int* node_stack = <int*>malloc(2048 * sizeof(int))
    cdef long long* tmp_i
    cdef double* tmp_d
    if buf_i == NULL or buf_d == NULL or node_stack == NULL:
        free(buf_i); free(buf_d); free(node_stack)
        raise MemoryError()

    cdef double r2 = r * r
    cdef Py_ssize_t qi, j, sp
    cdef int node, d
    cdef double q[3]
    cdef double diff, dd
    try:
        for qi in range(m):
            q[0] = queries[qi, 0]
            q[1] = queries[qi, 1]
            q[2] = queries[qi, 2]
            sp = 0
            node_stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = node_stack[sp]
                while split_dim[node] >= 0:
                    d = split_dim[node]
                    diff = q[d] - split_val[node]
                    if diff * diff <= r2:
                        node_stack[sp] = right[node] if diff < 0 else left[node]
                        sp += 1
                        node = left[node] if diff < 0 else right[node]
                    else:
                        node = left[node] if diff < 0 else right[node]
                for j in range(start[node], end[node]):
                    dd = _sqdist(pts, j, q)
                    if dd <= r2:
                        if total == cap:
                            cap *= 2
                            tmp_i = <long long*>realloc(buf_i, cap * sizeof(long long))
                            if tmp_i == NULL:
                                raise MemoryError()
                            buf_i = tmp_i
                            tmp_d = <double*>realloc(buf_d, cap * sizeof(double))
                            if tmp_d == NULL:
                                raise MemoryError()
                            buf_d = tmp_d
                        buf_i[total] = <long long>perm[j]
                        buf_d[total] = dd
                        total += 1
                        counts[qi] += 1
        idx_out = np.empty(total, dtype=np.int64)
        d2_out = np.empty(total, dtype=np.float64)
        cdef_copy(idx_out, d2_out, buf_i, buf_d, total)
    finally:
        free(buf_i)
        free(buf_d)
        free(node_stack)
    return counts_out, idx_out, d2_out


cdef void cdef_copy(long long[::1] idx_out, double[::1] d2_out,
                    long long* buf_i, double* buf_d, Py_ssize_t total):
    cdef Py_ssize_t i
    for i in range(total):
        idx_out[i] = buf_i[i]
        d2_out[i] = buf_d[i]
