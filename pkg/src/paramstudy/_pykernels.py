"""Pure Python/numpy versions of the compiled kernels in ``_ckernels``."""
from __future__ import annotations

import numpy as np


def _row_runs(row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start and end (exclusive) columns of the foreground runs in one row."""
    padded = np.concatenate(([0], row.astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return edges[0::2], edges[1::2]


def _find(parent: list[int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def _runs_and_roots(mask: np.ndarray, connectivity: int):
    m = np.asarray(mask) != 0
    reach = 1 if connectivity == 8 else 0
    parent: list[int] = []
    runs: list[tuple[int, int, int]] = []  # row, start, end
    prev: list[int] = []
    for y in range(m.shape[0]):
        starts, ends = _row_runs(m[y])
        cur = []
        j = 0
        for s, e in zip(starts.tolist(), ends.tolist()):
            rid = len(runs)
            runs.append((y, s, e))
            parent.append(rid)
            cur.append(rid)
            # previous-row runs overlapping [s - reach, e + reach)
            while j < len(prev) and runs[prev[j]][2] + reach <= s:
                j += 1
            jj = j
            while jj < len(prev) and runs[prev[jj]][1] < e + reach:
                a, b = _find(parent, rid), _find(parent, prev[jj])
                if a != b:
                    parent[max(a, b)] = min(a, b)
                jj += 1
        prev = cur
    return runs, parent


def label(mask, connectivity: int = 8):
    """Connected components of ``mask != 0``; ids 1..n in raster-scan order."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    mask = np.asarray(mask)
    runs, parent = _runs_and_roots(mask, connectivity)
    lab = np.zeros(mask.shape, dtype=np.int32)
    final: dict[int, int] = {}
    for rid, (y, s, e) in enumerate(runs):
        root = _find(parent, rid)
        if root not in final:
            final[root] = len(final) + 1
        lab[y, s:e] = final[root]
    return lab, len(final)


def component_runs(labels, count: int) -> np.ndarray:
    """Horizontal runs as an ``(m, 4)`` array: label, row, col, length."""
    lab = np.asarray(labels)
    out = []
    for y in range(lab.shape[0]):
        row = lab[y]
        change = np.flatnonzero(np.diff(row)) + 1
        bounds = np.concatenate(([0], change, [row.size]))
        for s, e in zip(bounds[:-1].tolist(), bounds[1:].tolist()):
            v = int(row[s])
            if v:
                out.append((v, y, s, e - s))
    if not out:
        return np.zeros((0, 4), dtype=np.int64)
    arr = np.array(out, dtype=np.int64)
    return arr[np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))]


def intersect_runs(a, b) -> int:
    """Pixel count shared by two run lists (row, col, length), each row-major sorted."""
    ra = np.asarray(a).tolist()
    rb = np.asarray(b).tolist()
    i = j = total = 0
    while i < len(ra) and j < len(rb):
        ya, sa, la = ra[i]
        yb, sb, lb = rb[j]
        if ya < yb:
            i += 1
            continue
        if yb < ya:
            j += 1
            continue
        ea, eb = sa + la, sb + lb
        overlap = min(ea, eb) - max(sa, sb)
        if overlap > 0:
            total += overlap
        if ea < eb:
            i += 1
        else:
            j += 1
    return total
