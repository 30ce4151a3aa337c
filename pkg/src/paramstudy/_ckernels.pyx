# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for mask labeling and run intersection.

Same contract as ``_pykernels``; ``kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline int _find(int[::1] parent, int x) noexcept nogil:
    cdef int root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


cdef inline void _union(int[::1] parent, int a, int b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label(mask, int connectivity=8):
    """Connected components of ``mask != 0``; ids 1..n in raster-scan order."""
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask != 0, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    cdef Py_ssize_t y, x
    cdef int[:, ::1] lab = np.zeros((h, w), dtype=np.int32)
    # a new provisional label needs background (or the border) on its left,
    # so a row holds at most ceil(w / 2) of them
    cdef int[::1] parent = np.zeros(h * ((w + 1) // 2) + 2, dtype=np.int32)
    cdef int nxt = 1, cur, nb
    cdef bint eight = connectivity == 8

    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")

    with nogil:
        for y in range(h):
            for x in range(w):
                if m[y, x] == 0:
                    continue
                cur = 0
                if x > 0 and m[y, x - 1]:
                    cur = lab[y, x - 1]
                if y > 0:
                    if m[y - 1, x]:
                        nb = lab[y - 1, x]
                        if cur == 0:
                            cur = nb
                        elif nb != cur:
                            _union(parent, cur, nb)
                    if eight:
                        if x > 0 and m[y - 1, x - 1]:
                            nb = lab[y - 1, x - 1]
                            if cur == 0:
                                cur = nb
                            elif nb != cur:
                                _union(parent, cur, nb)
                        if x + 1 < w and m[y - 1, x + 1]:
                            nb = lab[y - 1, x + 1]
                            if cur == 0:
                                cur = nb
                            elif nb != cur:
                                _union(parent, cur, nb)
                if cur == 0:
                    parent[nxt] = nxt
                    cur = nxt
                    nxt += 1
                lab[y, x] = cur

    cdef int[::1] final = np.zeros(nxt, dtype=np.int32)
    cdef int count = 0, root
    with nogil:
        for y in range(h):
            for x in range(w):
                cur = lab[y, x]
                if cur == 0:
                    continue
                root = _find(parent, cur)
                if final[root] == 0:
                    count += 1
                    final[root] = count
                lab[y, x] = final[root]
    return np.asarray(lab), count


def component_runs(labels, int count):
    """Horizontal runs as an ``(m, 4)`` array: label, row, col, length.

    Sorted by label, then row, then column.
    """
    cdef int[:, ::1] lab = np.ascontiguousarray(labels, dtype=np.int32)
    cdef Py_ssize_t h = lab.shape[0], w = lab.shape[1]
    cdef Py_ssize_t y, x, start, total = 0, i
    cdef int v
    cdef cnp.int64_t[::1] per = np.zeros(count + 1, dtype=np.int64)

    for y in range(h):
        x = 0
        while x < w:
            v = lab[y, x]
            if v == 0:
                x += 1
                continue
            start = x
            while x < w and lab[y, x] == v:
                x += 1
            per[v] += 1
            total += 1

    cdef cnp.int64_t[::1] offs = np.zeros(count + 2, dtype=np.int64)
    for i in range(1, count + 1):
        offs[i + 1] = offs[i] + per[i]
    out_arr = np.empty((total, 4), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef cnp.int64_t pos
    for y in range(h):
        x = 0
        while x < w:
            v = lab[y, x]
            if v == 0:
                x += 1
                continue
            start = x
            while x < w and lab[y, x] == v:
                x += 1
            pos = offs[v + 1] - per[v]
            per[v] -= 1
            out[pos, 0] = v
            out[pos, 1] = y
            out[pos, 2] = start
            out[pos, 3] = x - start
    return out_arr


def intersect_runs(a, b):
    """Pixel count shared by two run lists (row, col, length), each row-major sorted."""
    cdef cnp.int64_t[:, ::1] ra = np.ascontiguousarray(a, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] rb = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t i = 0, j = 0, na = ra.shape[0], nb = rb.shape[0]
    cdef cnp.int64_t total = 0, lo, hi, ea, eb
    with nogil:
        while i < na and j < nb:
            if ra[i, 0] < rb[j, 0]:
                i += 1
                continue
            if rb[j, 0] < ra[i, 0]:
                j += 1
                continue
            ea = ra[i, 1] + ra[i, 2]
            eb = rb[j, 1] + rb[j, 2]
            lo = ra[i, 1] if ra[i, 1] > rb[j, 1] else rb[j, 1]
            hi = ea if ea < eb else eb
            if hi > lo:
                total += hi - lo
            if ea < eb:
                i += 1
            else:
                j += 1
    return int(total)
