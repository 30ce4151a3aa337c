"""Object extraction from masks, an STR-packed R-tree, mask metrics and KNN.

Objects are kept as exact run-length pixel sets, so every area-based measure
is exact.  Masks are 8-bit rasters where any nonzero pixel is foreground.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ShapeError, UndefinedMetricError

Box = tuple[int, int, int, int]  # xmin, ymin, xmax, ymax (inclusive)


@dataclass(frozen=True)
class SegObject:
    id: int
    runs: np.ndarray  # (m, 3): row, col, length; row-major order
    area: int
    mbb: Box
    centroid: tuple[float, float]

    def pixels(self) -> set[tuple[int, int]]:
        return {(int(y), int(x)) for y, x0, n in self.runs for x in range(x0, x0 + n)}


@dataclass
class ObjectMask:
    pixels: np.ndarray
    objects: list[SegObject]
    connectivity: int = 8
    labels: np.ndarray | None = field(default=None, repr=False)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def foreground(self) -> np.ndarray:
        return self.pixels != 0

    def object(self, oid: int) -> SegObject:
        return self.objects[oid - 1]


def extract_objects(raster: np.ndarray, connectivity: int = 8) -> ObjectMask:
    """Label the foreground and describe every connected component."""
    raster = np.asarray(raster)
    if raster.ndim != 2 or raster.size == 0:
        raise ShapeError("raster must be a nonempty 2-D array")
    labels, n = kernels.label(raster, connectivity)
    runs = kernels.component_runs(labels, n)
    objects = []
    if n:
        bounds = np.searchsorted(runs[:, 0], np.arange(1, n + 2))
        for oid in range(1, n + 1):
            r = runs[bounds[oid - 1] : bounds[oid], 1:]
            rows, cols, lens = r[:, 0], r[:, 1], r[:, 2]
            area = int(lens.sum())
            cy = float((rows * lens).sum()) / area
            cx = float((lens * cols + lens * (lens - 1) / 2).sum()) / area
            mbb = (int(cols.min()), int(rows.min()), int((cols + lens - 1).max()), int(rows.max()))
            objects.append(SegObject(oid, np.ascontiguousarray(r), area, mbb, (cx, cy)))
    return ObjectMask(raster, objects, connectivity, labels)


def boxes_intersect(a: Box, b: Box) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


class _Node:
    __slots__ = ("box", "children", "leaf")

    def __init__(self, box, children, leaf):
        self.box = box
        self.children = children
        self.leaf = leaf


def _union_box(boxes: Iterable[Box]) -> Box:
    b = list(boxes)
    return (min(x[0] for x in b), min(x[1] for x in b), max(x[2] for x in b), max(x[3] for x in b))


class RTree:
    """Static R-tree bulk-loaded with sort-tile-recursive packing."""

    def __init__(self, entries: Sequence[tuple[Box, int]], capacity: int = 16):
        if capacity < 2:
            raise ValueError("node capacity must be >= 2")
        self.capacity = capacity
        self.size = len(entries)
        level = [_Node(tuple(box), oid, True) for box, oid in entries]
        if not level:
            self.root = None
            return
        while len(level) > 1 or level[0].leaf:
            level = self._pack(level)
        self.root = level[0]

    def _pack(self, nodes: list[_Node]) -> list[_Node]:
        M = self.capacity
        n_groups = math.ceil(len(nodes) / M)
        n_slices = math.ceil(math.sqrt(n_groups))
        per_slice = n_slices * M
        by_x = sorted(nodes, key=lambda nd: (nd.box[0] + nd.box[2], nd.box[1] + nd.box[3]))
        out = []
        for s in range(0, len(by_x), per_slice):
            chunk = sorted(by_x[s : s + per_slice], key=lambda nd: (nd.box[1] + nd.box[3], nd.box[0] + nd.box[2]))
            for g in range(0, len(chunk), M):
                kids = chunk[g : g + M]
                out.append(_Node(_union_box(k.box for k in kids), kids, False))
        return out

    def query(self, window: Box) -> list[int]:
        """Ids of entries whose box intersects ``window`` (closed boxes), sorted."""
        if self.root is None:
            return []
        hits = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not boxes_intersect(node.box, window):
                continue
            if node.leaf:
                hits.append(node.children)
            else:
                stack.extend(node.children)
        return sorted(hits)

    def depth(self) -> int:
        d, node = 0, self.root
        while node is not None and not node.leaf:
            d += 1
            node = node.children[0]
        return d


def build_index(mask: ObjectMask, capacity: int = 16) -> RTree:
    return RTree([(o.mbb, o.id) for o in mask.objects], capacity)


def _check_shapes(a, b) -> None:
    sa = a.pixels.shape if isinstance(a, ObjectMask) else np.shape(a)
    sb = b.pixels.shape if isinstance(b, ObjectMask) else np.shape(b)
    if sa != sb:
        raise ShapeError(f"mask shapes differ: {sa} vs {sb}")


def spatial_join(a: ObjectMask, b: ObjectMask, with_stats: bool = False):
    """Overlapping object pairs ``(id_a, id_b, intersection_area)``.

    Filter: R-tree over ``b``'s bounding boxes.  Refine: exact run
    intersection.  Pairs whose refined area is zero are dropped.  Output is
    sorted by ``(id_a, id_b)``.
    """
    _check_shapes(a, b)
    index = build_index(b)
    out = []
    candidates = 0
    for oa in a.objects:
        for bid in index.query(oa.mbb):
            candidates += 1
            area = kernels.intersect_runs(oa.runs, b.object(bid).runs)
            if area > 0:
                out.append((oa.id, bid, area))
    if with_stats:
        return out, {"candidates": candidates, "refined": len(out)}
    return out


@dataclass(frozen=True)
class MetricValue:
    kind: str
    value: float

    def __float__(self) -> float:
        return float(self.value)


def _fg(m) -> np.ndarray:
    return m.foreground if isinstance(m, ObjectMask) else np.asarray(m) != 0


def _areas(a, b) -> tuple[int, int, int]:
    _check_shapes(a, b)
    fa, fb = _fg(a), _fg(b)
    return int(fa.sum()), int(fb.sum()), int(np.count_nonzero(fa & fb))


def dice(a, b) -> MetricValue:
    na, nb, inter = _areas(a, b)
    if na + nb == 0:
        return MetricValue("dice", 1.0)
    return MetricValue("dice", 2.0 * inter / (na + nb))


def jaccard(a, b) -> MetricValue:
    na, nb, inter = _areas(a, b)
    union = na + nb - inter
    if union == 0:
        return MetricValue("jaccard", 1.0)
    return MetricValue("jaccard", inter / union)


def overlap_ratio(test, reference) -> MetricValue:
    """Intersection area divided by the reference area."""
    _, nref, inter = _areas(test, reference)
    if nref == 0:
        raise UndefinedMetricError("reference mask has no foreground")
    return MetricValue("overlap-area-ratio", inter / nref)


def pixel_diff(a, b) -> MetricValue:
    """Number of pixels labeled differently (symmetric difference)."""
    _check_shapes(a, b)
    return MetricValue("pixel-diff", int(np.count_nonzero(_fg(a) != _fg(b))))


METRICS = {
    "dice": dice,
    "jaccard": jaccard,
    "overlap": overlap_ratio,
    "overlap-area-ratio": overlap_ratio,
    "pixel-diff": pixel_diff,
}


def knn(
    query: SegObject | tuple[float, float],
    candidates: ObjectMask | Sequence[SegObject],
    k: int | None = None,
    radius: float | None = None,
    exclude: Iterable[int] = (),
) -> list[tuple[SegObject, float]]:
    """Nearest objects by centroid distance, ties broken by object id."""
    if k is None and radius is None:
        raise ValueError("give k, radius, or both")
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    qx, qy = query.centroid if isinstance(query, SegObject) else query
    objs = candidates.objects if isinstance(candidates, ObjectMask) else list(candidates)
    skip = set(exclude)
    ranked = sorted(
        ((o, math.hypot(o.centroid[0] - qx, o.centroid[1] - qy)) for o in objs if o.id not in skip),
        key=lambda t: (t[1], t[0].id),
    )
    if radius is not None:
        ranked = [t for t in ranked if t[1] <= radius]
    return ranked if k is None else ranked[:k]


def write_pgm(path: str | os.PathLike, raster: np.ndarray) -> None:
    arr = np.asarray(raster)
    if arr.ndim != 2:
        raise ShapeError("PGM raster must be 2-D")
    if arr.dtype != np.uint8:
        if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
            raise ValueError("PGM values must be in 0..255")
        arr = arr.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
