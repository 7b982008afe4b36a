"""Candidate object regions: height and area selection, closing, connectivity, HBBs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .boxes import Hbb
from .raster_io import HeightRaster, RgbRaster
from .segmentation import NOISE, ClusterAssignment, SuperpixelMap

__all__ = [
    "Mask",
    "Region",
    "SelectionParams",
    "area_filter",
    "close_region",
    "ground_level",
    "harris_response",
    "height_filter",
    "region_to_hbb",
    "split_connected",
]

_FOUR = ndimage.generate_binary_structure(2, 1)

VEHICLE_FOOTPRINT_M2 = 10.0  # 2 m x 5 m


@dataclass(frozen=True, eq=False)
class Mask:
    """A set of pixels stored as a boolean grid anchored at ``(row0, col0)``."""

    row0: int
    col0: int
    grid: np.ndarray

    @classmethod
    def from_pixels(cls, pixels: Iterable[tuple[int, int]]) -> "Mask":
        pts = np.asarray(list(pixels), dtype=np.int64).reshape(-1, 2)
        if len(pts) == 0:
            return cls(0, 0, np.zeros((0, 0), dtype=bool))
        r0, c0 = pts.min(axis=0)
        r1, c1 = pts.max(axis=0)
        grid = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
        grid[pts[:, 0] - r0, pts[:, 1] - c0] = True
        return cls(int(r0), int(c0), grid)

    @classmethod
    def from_bool(cls, full: np.ndarray, row0: int = 0, col0: int = 0) -> "Mask":
        """Crop a boolean array to its bounding box."""
        rows = np.flatnonzero(full.any(axis=1))
        if len(rows) == 0:
            return cls(0, 0, np.zeros((0, 0), dtype=bool))
        cols = np.flatnonzero(full.any(axis=0))
        grid = full[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].copy()
        return cls(row0 + int(rows[0]), col0 + int(cols[0]), grid)

    @property
    def area(self) -> int:
        return int(self.grid.sum())

    def pixels(self) -> set[tuple[int, int]]:
        rr, cc = np.nonzero(self.grid)
        return set(zip((rr + self.row0).tolist(), (cc + self.col0).tolist()))

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        rr, cc = np.nonzero(self.grid)
        return rr + self.row0, cc + self.col0

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.pixels() == other.pixels()


def _as_mask(mask) -> Mask:
    return mask if isinstance(mask, Mask) else Mask.from_pixels(mask)


@dataclass(frozen=True)
class Region:
    mask: Mask
    avg_height: float
    source_cluster: int

    @property
    def area(self) -> int:
        return self.mask.area


@dataclass(frozen=True)
class SelectionParams:
    """Height interval (meters, relative to ground) and area bounds (pixels).

    ``area_th`` / ``area_floor`` default to 5x and 0.2x a 10 m^2 vehicle
    footprint at the given GSD.
    """

    height_low: float = 0.8
    height_high: float = 3.5
    area_th: float | None = None
    area_floor: float | None = None
    kernel: int = 1

    def __post_init__(self):
        if not self.height_low < self.height_high:
            raise ValueError("height_low must be < height_high")
        if self.kernel < 0:
            raise ValueError("kernel half-width must be >= 0")
        if self.area_th is not None and self.area_floor is not None:
            if not 0 < self.area_floor < self.area_th:
                raise ValueError("need 0 < area_floor < area_th")

    def area_bounds(self, gsd: float) -> tuple[float, float]:
        footprint = VEHICLE_FOOTPRINT_M2 / (gsd * gsd)
        th = self.area_th if self.area_th is not None else 5.0 * footprint
        floor = self.area_floor if self.area_floor is not None else 0.2 * footprint
        if not 0 < floor < th:
            raise ValueError(f"need 0 < area_floor < area_th, got floor={floor}, th={th}")
        return th, floor


def ground_level(dsm: HeightRaster) -> float:
    """Pseudo-ground: median of the valid DSM cells."""
    vals = dsm.values[dsm.valid]
    if len(vals) == 0:
        raise ValueError("DSM has no valid cells")
    return float(np.median(vals))


def _cluster_mask(sp: SuperpixelMap, members: np.ndarray, slices) -> Mask:
    r0 = min(slices[m][0].start for m in members)
    r1 = max(slices[m][0].stop for m in members)
    c0 = min(slices[m][1].start for m in members)
    c1 = max(slices[m][1].stop for m in members)
    sub = np.isin(sp.labels[r0:r1, c0:c1], members)
    return Mask.from_bool(sub, r0, c0)


def height_filter(
    clusters: ClusterAssignment,
    sp: SuperpixelMap,
    interval: tuple[float, float],
    ground: float | None = None,
) -> list[Region]:
    """One region per cluster whose mean height above ``ground`` lies in ``interval``.

    The cluster height is the support-weighted mean of its superpixel heights.
    When ``ground`` is omitted, the size-weighted median superpixel height is
    used.  Clusters without valid heights are dropped.
    """
    low, high = interval
    if ground is None:
        ok = sp.height_support > 0
        order = np.argsort(sp.mean_height[ok], kind="stable")
        cum = np.cumsum(sp.size[ok][order])
        ground = float(sp.mean_height[ok][order][np.searchsorted(cum, cum[-1] / 2.0)])
    slices = ndimage.find_objects(sp.labels + 1)
    out = []
    for cid in range(clusters.n_clusters):
        members = clusters.members(cid)
        support = sp.height_support[members]
        if support.sum() == 0:
            continue
        heights = np.where(support > 0, sp.mean_height[members], 0.0)
        avg = float((heights * support).sum() / support.sum())
        rel = avg - ground
        if low <= rel <= high:
            out.append(Region(_cluster_mask(sp, members, slices), rel, cid))
    return out


def area_filter(regions: Sequence[Region], th: float, floor: float) -> list[Region]:
    """Keep regions with ``floor <= area < th``, largest first."""
    if not 0 < floor < th:
        raise ValueError("need 0 < floor < th")
    kept = [r for r in regions if floor <= r.area < th]
    return sorted(kept, key=lambda r: -r.area)


def close_region(mask, kernel: int) -> Mask:
    """Morphological closing with a ``(2*kernel+1)`` square; never removes pixels."""
    m = _as_mask(mask)
    if m.grid.size == 0 or kernel == 0:
        return m
    pad = 2 * kernel
    grid = np.pad(m.grid, pad)
    se = np.ones((2 * kernel + 1, 2 * kernel + 1), dtype=bool)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(grid, se), se)
    closed |= grid
    return Mask.from_bool(closed, m.row0 - pad, m.col0 - pad)


def split_connected(mask, avg_height: float = float("nan"), source_cluster: int = NOISE) -> list[Region]:
    """Split a mask into 4-connected components, in raster order of first pixel."""
    m = _as_mask(mask)
    if m.grid.size == 0:
        return []
    comp, n = ndimage.label(m.grid, structure=_FOUR)
    return [
        Region(Mask.from_bool(comp == i, m.row0, m.col0), avg_height, source_cluster)
        for i in range(1, n + 1)
    ]


# ---------------------------------------------------------------------------
# Corner-based HBB
# ---------------------------------------------------------------------------


def harris_response(gray: np.ndarray, k: float = 0.04, sigma: float = 1.0) -> np.ndarray:
    """Harris corner measure ``det(M) - k * trace(M)^2`` of a float image."""
    g = np.asarray(gray, dtype=np.float64)
    ix = ndimage.sobel(g, axis=1, mode="nearest")
    iy = ndimage.sobel(g, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _corner_points(resp: np.ndarray, allowed: np.ndarray, rel_threshold: float) -> np.ndarray:
    masked = np.where(allowed, resp, -np.inf)
    peak = masked.max() if allowed.any() else -np.inf
    if not np.isfinite(peak) or peak <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    local_max = masked == ndimage.maximum_filter(masked, size=3, mode="constant", cval=-np.inf)
    keep = local_max & allowed & (masked >= rel_threshold * peak) & (masked > 0)
    rr, cc = np.nonzero(keep)
    strength = masked[rr, cc]
    order = np.lexsort((cc, rr, -strength))
    return np.stack([rr[order], cc[order]], axis=1)


def region_to_hbb(
    region: Region,
    img: RgbRaster,
    harris_k: float = 0.04,
    rel_threshold: float = 0.01,
    max_corners: int = 8,
) -> Hbb:
    """Horizontal box for a region from its two strongest, mutually farthest corners.

    Harris corners are searched inside the region dilated by one pixel; among
    the ``max_corners`` strongest, the farthest-apart pair spans the box
    diagonal.  The box is then grown to cover every mask pixel, so it always
    contains the whole region.  With fewer than two corners the tight mask
    bounding box is returned.
    """
    m = region.mask
    rows, cols = m.coords()
    if len(rows) == 0:
        raise ValueError("empty region")
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())

    pad = 3
    wr0, wr1 = max(0, r0 - pad), min(img.height, r1 + pad + 1)
    wc0, wc1 = max(0, c0 - pad), min(img.width, c1 + pad + 1)
    window = img.pixels[wr0:wr1, wc0:wc1].astype(np.float64)
    gray = window @ np.array([0.299, 0.587, 0.114])
    allowed = np.zeros(gray.shape, dtype=bool)
    allowed[rows - wr0, cols - wc0] = True
    allowed = ndimage.binary_dilation(allowed, structure=np.ones((3, 3), dtype=bool))

    corners = _corner_points(harris_response(gray, harris_k), allowed, rel_threshold)[:max_corners]
    if len(corners) >= 2:
        diff = corners[:, None, :] - corners[None, :, :]
        d2 = (diff**2).sum(-1)
        i, j = np.unravel_index(np.argmax(d2), d2.shape)
        (ra, ca), (rb, cb) = corners[i] + (wr0, wc0), corners[j] + (wr0, wc0)
        r0, r1 = min(r0, ra, rb), max(r1, ra, rb)
        c0, c1 = min(c0, ca, cb), max(c1, ca, cb)
    return Hbb.from_pixel_extent(c0, r0, c1, r1)
