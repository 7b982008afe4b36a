"""Superpixel over-segmentation (SLIC), similarity merging and DBSCAN clustering."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .fusion import rgb_to_lab
from .raster_io import HeightRaster, RgbRaster

__all__ = [
    "NOISE",
    "ClusterAssignment",
    "SlicParams",
    "SuperpixelMap",
    "dbscan",
    "merge_similar",
    "slic",
    "superpixel_stats",
]

NOISE = -1

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SlicParams:
    k: int = 2000
    compactness: float = 10.0
    iterations: int = 10
    merge_threshold: float = 8.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.compactness > 0:
            raise ValueError("compactness must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.merge_threshold < 0:
            raise ValueError("merge_threshold must be >= 0")


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    """Per-pixel superpixel ids ``0..n-1`` plus per-superpixel statistics.

    ``centroid`` is ``(x, y)`` in pixels.  ``mean_height`` is NaN for
    superpixels without any valid DSM cell; ``height_support`` counts the
    valid cells behind each mean.  ``edges`` lists each adjacent pair once as
    ``(a, b)`` with ``a < b``.
    """

    labels: np.ndarray
    centroid: np.ndarray
    mean_lab: np.ndarray
    mean_height: np.ndarray
    size: np.ndarray
    height_support: np.ndarray
    edges: np.ndarray

    @property
    def count(self) -> int:
        return len(self.size)

    def neighbors(self, i: int) -> set[int]:
        e = self.edges
        return set(e[e[:, 0] == i, 1].tolist()) | set(e[e[:, 1] == i, 0].tolist())

    def adjacency(self) -> np.ndarray:
        n = self.count
        adj = np.zeros((n, n), dtype=bool)
        adj[self.edges[:, 0], self.edges[:, 1]] = True
        adj[self.edges[:, 1], self.edges[:, 0]] = True
        return adj


def _label_edges(labels: np.ndarray) -> np.ndarray:
    pairs = []
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        pairs.append(np.stack([a[diff], b[diff]], axis=1))
    p = np.concatenate(pairs)
    if len(p) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    p = np.sort(p, axis=1)
    return np.unique(p, axis=0).astype(np.int64)


def superpixel_stats(labels: np.ndarray, lab: np.ndarray, heights: HeightRaster) -> SuperpixelMap:
    """Compute statistics for a consecutive 0..n-1 label image."""
    n = int(labels.max()) + 1
    flat = labels.ravel()
    size = np.bincount(flat, minlength=n).astype(np.int64)
    h, w = labels.shape
    ys, xs = np.indices((h, w))
    cx = np.bincount(flat, weights=xs.ravel(), minlength=n) / size
    cy = np.bincount(flat, weights=ys.ravel(), minlength=n) / size
    mean_lab = np.stack(
        [np.bincount(flat, weights=lab[..., c].ravel(), minlength=n) / size for c in range(3)],
        axis=1,
    )
    valid = heights.valid.ravel()
    support = np.bincount(flat[valid], minlength=n).astype(np.int64)
    hsum = np.bincount(flat[valid], weights=heights.values.ravel()[valid].astype(np.float64), minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_h = np.where(support > 0, hsum / np.maximum(support, 1), np.nan)
    return SuperpixelMap(
        labels=labels,
        centroid=np.stack([cx, cy], axis=1),
        mean_lab=mean_lab,
        mean_height=mean_h,
        size=size,
        height_support=support,
        edges=_label_edges(labels),
    )


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------


def _seed_grid(w: int, h: int, k: int) -> np.ndarray:
    nx = max(1, min(w, math.ceil(math.sqrt(k * w / h))))
    ny = max(1, min(h, round(k / nx)))
    sx, sy = w / nx, h / ny
    xs = (np.arange(nx) + 0.5) * sx - 0.5
    ys = (np.arange(ny) + 0.5) * sy - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _perturb_to_low_gradient(seeds: np.ndarray, lab: np.ndarray) -> np.ndarray:
    h, w = lab.shape[:2]
    grad = np.zeros((h, w))
    grad[1:-1, :] += ((lab[2:, :] - lab[:-2, :]) ** 2).sum(-1)
    grad[:, 1:-1] += ((lab[:, 2:] - lab[:, :-2]) ** 2).sum(-1)
    out = seeds.copy()
    for i, (x, y) in enumerate(seeds):
        cx, cy = int(round(x)), int(round(y))
        best = (grad[cy, cx], 0, 0) if 0 <= cy < h and 0 <= cx < w else None
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = cy + dy, cx + dx
                if 0 <= yy < h and 0 <= xx < w and (best is None or grad[yy, xx] < best[0]):
                    best = (grad[yy, xx], dy, dx)
        if best is not None and (best[1] or best[2]):
            out[i] = (cx + best[2], cy + best[1])
    return out


@numba.njit(cache=True)
def _components(labels):
    """4-connected components of equal label, numbered in raster order of first pixel."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    owner = np.empty(h * w, dtype=np.int64)
    size = np.zeros(h * w, dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    n = 0
    for y in range(h):
        for x in range(w):
            if comp[y, x] >= 0:
                continue
            lbl = labels[y, x]
            comp[y, x] = n
            top = 0
            stack[0] = y * w + x
            top = 1
            cnt = 0
            while top > 0:
                top -= 1
                yy = stack[top] // w
                xx = stack[top] % w
                cnt += 1
                for k in range(4):
                    ny = yy + (k == 0) - (k == 1)
                    nx = xx + (k == 2) - (k == 3)
                    if 0 <= ny < h and 0 <= nx < w and comp[ny, nx] < 0 and labels[ny, nx] == lbl:
                        comp[ny, nx] = n
                        stack[top] = ny * w + nx
                        top += 1
            owner[n] = lbl
            size[n] = cnt
            n += 1
    return comp, owner[:n].copy(), size[:n].copy()


@numba.njit(cache=True)
def _absorb_orphans(comp, resolved, size, sp_size):
    """Give every unresolved component the owner of its largest resolved neighbor.

    ``resolved[c]`` is the superpixel id of component ``c`` or -1.  Sweeps
    repeat until every component is resolved; within a sweep candidates are
    ranked by the neighbor superpixel size at the start of the sweep.
    """
    h, w = comp.shape
    n = resolved.shape[0]
    best_owner = np.empty(n, dtype=np.int64)
    best_size = np.empty(n, dtype=np.int64)
    remaining = 0
    for c in range(n):
        if resolved[c] < 0:
            remaining += 1
    while remaining > 0:
        best_owner[:] = -1
        best_size[:] = -1
        for y in range(h):
            for x in range(w):
                c = comp[y, x]
                if resolved[c] >= 0:
                    continue
                for k in range(4):
                    ny = y + (k == 0) - (k == 1)
                    nx = x + (k == 2) - (k == 3)
                    if 0 <= ny < h and 0 <= nx < w:
                        o = resolved[comp[ny, nx]]
                        if o >= 0:
                            s = sp_size[o]
                            if s > best_size[c] or (s == best_size[c] and o < best_owner[c]):
                                best_size[c] = s
                                best_owner[c] = o
        progress = 0
        for c in range(n):
            if resolved[c] < 0 and best_owner[c] >= 0:
                resolved[c] = best_owner[c]
                sp_size[best_owner[c]] += size[c]
                progress += 1
        if progress == 0:
            return False
        remaining -= progress
    return True


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep each label's largest 4-connected piece; absorb the rest into neighbors.

    Unassigned pixels (label -1) are orphans too.  Each orphan piece joins the
    adjacent superpixel with the largest size.  Returns consecutive 0..m-1 ids.
    """
    comp, owner, size = _components(labels)
    n_lbl = int(labels.max()) + 1
    # largest component per label; ties go to the earliest component
    order = np.lexsort((np.arange(len(owner)), -size, owner))
    first_of_owner = np.ones(len(order), dtype=bool)
    first_of_owner[1:] = owner[order][1:] != owner[order][:-1]
    main = order[first_of_owner & (owner[order] >= 0)]
    resolved = np.full(len(owner), -1, dtype=np.int64)
    resolved[main] = owner[main]
    sp_size = np.zeros(max(n_lbl, 1), dtype=np.int64)
    sp_size[owner[main]] = size[main]
    if len(main) < len(owner) and not _absorb_orphans(comp, resolved, size, sp_size):
        raise RuntimeError("connectivity enforcement failed to place orphan pixels")
    out = resolved[comp]
    _, consecutive = np.unique(out, return_inverse=True)
    return consecutive.reshape(labels.shape).astype(np.int32)


@numba.njit(cache=True)
def _assign(lab, cxy, clab, spatial, radius, labels, dist):
    """One SLIC assignment sweep; centers are visited in id order and only a
    strictly smaller distance steals a pixel."""
    h, w = labels.shape
    dist[:, :] = np.inf
    labels[:, :] = -1
    for c in range(cxy.shape[0]):
        x = cxy[c, 0]
        y = cxy[c, 1]
        x0 = max(0, int(math.floor(x - radius)))
        x1 = min(w, int(math.ceil(x + radius)) + 1)
        y0 = max(0, int(math.floor(y - radius)))
        y1 = min(h, int(math.ceil(y + radius)) + 1)
        l0 = clab[c, 0]
        a0 = clab[c, 1]
        b0 = clab[c, 2]
        for yy in range(y0, y1):
            dy = yy - y
            for xx in range(x0, x1):
                dx = xx - x
                d0 = lab[yy, xx, 0] - l0
                d1 = lab[yy, xx, 1] - a0
                d2 = lab[yy, xx, 2] - b0
                d = d0 * d0 + d1 * d1 + d2 * d2 + spatial * (dx * dx + dy * dy)
                if d < dist[yy, xx]:
                    dist[yy, xx] = d
                    labels[yy, xx] = c


def slic(img: RgbRaster, heights: HeightRaster, p: SlicParams = SlicParams()) -> SuperpixelMap:
    """SLIC superpixels on ``img`` (CIELAB), with height statistics from ``heights``.

    The joint distance is ``sqrt(d_lab^2 + (m * d_xy / S)^2)`` with
    ``S = sqrt(w*h/k)``; each center searches a ``2S x 2S`` window.  Pixels
    equidistant to two centers go to the lower center id.
    """
    if img.dims != heights.dims:
        raise ValueError(f"image {img.dims} and heights {heights.dims} are not aligned")
    h, w = img.height, img.width
    if p.k > w * h:
        raise ValueError(f"k={p.k} exceeds the pixel count {w * h}")
    lab = rgb_to_lab(img.pixels)
    if p.k == 1:
        labels = np.zeros((h, w), dtype=np.int32)
        return superpixel_stats(labels, lab, heights)

    step = math.sqrt(w * h / p.k)
    seeds = _perturb_to_low_gradient(_seed_grid(w, h, p.k), lab)
    n = len(seeds)
    cxy = seeds.astype(np.float64)
    ci = np.clip(np.round(cxy).astype(int), 0, [w - 1, h - 1])
    clab = lab[ci[:, 1], ci[:, 0]].copy()
    spatial = (p.compactness / step) ** 2
    radius = int(math.ceil(step))

    labels = np.full((h, w), -1, dtype=np.int64)
    dist = np.empty((h, w))
    for _ in range(p.iterations):
        _assign(lab, cxy, clab, spatial, radius, labels, dist)

        assigned = labels >= 0
        flat = labels[assigned]
        cnt = np.bincount(flat, minlength=n)
        has = cnt > 0
        yy, xx = np.nonzero(assigned)
        sx = np.bincount(flat, weights=xx, minlength=n)
        sy = np.bincount(flat, weights=yy, minlength=n)
        cxy[has, 0] = sx[has] / cnt[has]
        cxy[has, 1] = sy[has] / cnt[has]
        for ch in range(3):
            sl = np.bincount(flat, weights=lab[..., ch][assigned], minlength=n)
            clab[has, ch] = sl[has] / cnt[has]

    final = _enforce_connectivity(labels)
    return superpixel_stats(final, lab, heights)


# ---------------------------------------------------------------------------
# Similarity merging
# ---------------------------------------------------------------------------


def _merge_distance(lab_a, lab_b, h_a, h_b, lambda_h):
    d = float(np.linalg.norm(lab_a - lab_b))
    if not (math.isnan(h_a) or math.isnan(h_b)):
        d += lambda_h * abs(h_a - h_b)
    return d


def merge_similar(sp: SuperpixelMap, theta: float, lambda_h: float = 10.0) -> SuperpixelMap:
    """Union adjacent superpixels whose combined distance is below ``theta``.

    The distance is ``||lab_a - lab_b|| + lambda_h * |h_a - h_b|``.  Edges are
    processed in ascending distance (ties by ``(min id, max id)``) and statistics
    are recomputed after each union, so the result matches repeatedly merging
    the globally closest adjacent pair until none is below ``theta``.
    """
    n = sp.count
    if n <= 1 or theta <= 0:
        return sp
    size = sp.size.astype(np.float64).copy()
    cen = sp.centroid.copy()
    lab = sp.mean_lab.copy()
    support = sp.height_support.astype(np.float64).copy()
    hgt = np.where(support > 0, sp.mean_height, 0.0)
    alive = np.ones(n, dtype=bool)
    version = np.zeros(n, dtype=np.int64)
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b in sp.edges.tolist():
        nbrs[a].add(b)
        nbrs[b].add(a)

    def height(i):
        return hgt[i] if support[i] > 0 else math.nan

    def dist(a, b):
        return _merge_distance(lab[a], lab[b], height(a), height(b), lambda_h)

    heap = []
    for a, b in sp.edges.tolist():
        heapq.heappush(heap, (dist(a, b), a, b, 0, 0))

    parent = np.arange(n)
    while heap:
        d, a, b, va, vb = heapq.heappop(heap)
        if d >= theta:
            break
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        # b is folded into a (a < b)
        tot = size[a] + size[b]
        cen[a] = (cen[a] * size[a] + cen[b] * size[b]) / tot
        lab[a] = (lab[a] * size[a] + lab[b] * size[b]) / tot
        hs = support[a] + support[b]
        if hs > 0:
            hgt[a] = (hgt[a] * support[a] + hgt[b] * support[b]) / hs
        support[a] = hs
        size[a] = tot
        alive[b] = False
        parent[b] = a
        version[a] += 1
        nbrs[a] |= nbrs[b]
        nbrs[a] -= {a, b}
        for c in nbrs[b]:
            if c != a:
                nbrs[c].discard(b)
                nbrs[c].add(a)
        nbrs[b] = set()
        for c in nbrs[a]:
            lo, hi = (a, c) if a < c else (c, a)
            heapq.heappush(heap, (dist(lo, hi), lo, hi, version[lo], version[hi]))

    if alive.all():
        return sp

    def root(i):
        while parent[i] != i:
            i = parent[i]
        return i

    roots = np.array([root(i) for i in range(n)])
    survivors = np.flatnonzero(alive)
    remap = np.full(n, -1, dtype=np.int64)
    remap[survivors] = np.arange(len(survivors))
    new_of_old = remap[roots]
    labels = new_of_old[sp.labels].astype(np.int32)
    mean_h = np.where(support[survivors] > 0, hgt[survivors], np.nan)
    return SuperpixelMap(
        labels=labels,
        centroid=cen[survivors],
        mean_lab=lab[survivors],
        mean_height=mean_h,
        size=size[survivors].astype(np.int64),
        height_support=support[survivors].astype(np.int64),
        edges=_label_edges(labels),
    )


# ---------------------------------------------------------------------------
# DBSCAN
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterAssignment:
    """``cluster_of[i]`` is the cluster id of item ``i`` or :data:`NOISE`."""

    cluster_of: np.ndarray
    epsilon: float
    min_pts: int

    @property
    def n_clusters(self) -> int:
        return int(self.cluster_of.max()) + 1 if len(self.cluster_of) else 0

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of == cluster)


def dbscan(
    items: Sequence[Sequence[float]] | np.ndarray,
    epsilon: float,
    min_pts: int,
    lambda_h: float = 1.0,
) -> ClusterAssignment:
    """Density-based clustering of ``(x, y, h)`` items.

    Distances are Euclidean over ``(x, y, lambda_h * h)``; a point's
    neighborhood includes itself and every point at distance ``<= epsilon``.
    Cluster ids follow discovery order and a border point belongs to the first
    cluster that reaches it.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(items, dtype=np.float64).reshape(-1, 3).copy()
    pts[:, 2] *= lambda_h
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return ClusterAssignment(labels, epsilon, min_pts)

    eps2 = epsilon * epsilon
    tree = cKDTree(pts)
    cand = tree.query_ball_point(pts, r=epsilon * (1 + 1e-9) + 1e-12)
    neighbors = []
    for i, c in enumerate(cand):
        c = np.asarray(sorted(c), dtype=np.int64)
        diff = pts[c] - pts[i]
        d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        neighbors.append(c[d2 <= eps2])
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        queue = deque([i])
        visited[i] = True
        labels[i] = cluster
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for q in neighbors[j]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                if not visited[q]:
                    visited[q] = True
                    queue.append(q)
        cluster += 1
    return ClusterAssignment(labels, epsilon, min_pts)
