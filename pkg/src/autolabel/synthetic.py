"""Synthetic VIS/DSM scenes with exact vehicle ground truth, and a stub detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .boxes import Hbb
from .evaluation import DetectionSet, GroundTruthSet, stitch, tile
from .raster_io import HeightRaster, RgbRaster

__all__ = ["SyntheticScene", "generate_synthetic", "stub_detect"]

VEHICLE_SIZE_M = (2.0, 5.0)
VEHICLE_HEIGHT_M = 1.8

# roof colors; the olive entry is deliberately close to the grass
VEHICLE_COLORS = np.array(
    [
        (232, 232, 228),
        (182, 184, 188),
        (34, 34, 38),
        (172, 32, 30),
        (38, 62, 142),
        (92, 92, 98),
        (196, 160, 40),
        (84, 104, 62),
    ],
    dtype=np.float64,
)
ROOF_COLORS = np.array([(150, 84, 70), (168, 168, 162), (120, 118, 126)], dtype=np.float64)
GRASS = np.array([72.0, 112.0, 52.0])


@dataclass(frozen=True)
class SyntheticScene:
    vis: RgbRaster
    dsm: HeightRaster
    gts: GroundTruthSet
    seed: int
    image_id: str = "scene"
    buildings: tuple[Hbb, ...] = ()


def _place(rng, occupied: np.ndarray, h: int, w: int, gap: int, margin: int, tries: int):
    H, W = occupied.shape
    for _ in range(tries):
        r = int(rng.integers(margin, H - margin - h + 1)) if H - 2 * margin - h >= 0 else -1
        c = int(rng.integers(margin, W - margin - w + 1)) if W - 2 * margin - w >= 0 else -1
        if r < 0 or c < 0:
            return None
        if not occupied[max(0, r - gap) : r + h + gap, max(0, c - gap) : c + w + gap].any():
            occupied[r : r + h, c : c + w] = True
            return r, c
    return None


def generate_synthetic(
    seed: int,
    n_vehicles: int = 30,
    n_buildings: int = 5,
    dims: tuple[int, int] = (1024, 1024),
    gsd: float = 0.1,
    image_id: str = "scene",
    max_tries: int = 2000,
) -> SyntheticScene:
    """Render a grass scene with parked vehicles and tall buildings.

    Vehicles are 2 m x 5 m rectangles (random orientation) about 1.8 m above
    ground with a dark windshield band; buildings are 10-20 m blocks 6-15 m
    tall.  Objects never touch: rejection sampling keeps a 1 m gap.
    """
    if n_vehicles < 0 or n_buildings < 0:
        raise ValueError("object counts must be >= 0")
    W, H = dims
    if W < 128 or H < 128:
        raise ValueError("synthetic scenes must be at least 128x128")
    rng = np.random.default_rng(seed)

    coarse = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (H, W)), 24.0)
    coarse /= max(coarse.std(), 1e-9)
    fine = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (H, W, 3)), (0.8, 0.8, 0))
    fine /= max(fine.std(), 1e-9)
    rgb = GRASS + 6.0 * coarse[..., None] + 4.0 * fine
    heights = ndimage.gaussian_filter(rng.normal(0.0, 0.03, (H, W)), 1.5)

    occupied = np.zeros((H, W), dtype=bool)
    gap = max(1, int(round(1.0 / gsd)))
    margin = 2
    buildings = []
    for _ in range(n_buildings):
        bh = int(round(rng.uniform(10.0, 20.0) / gsd))
        bw = int(round(rng.uniform(10.0, 20.0) / gsd))
        spot = _place(rng, occupied, bh, bw, gap, margin, max_tries)
        if spot is None:
            raise RuntimeError("could not place building: scene too crowded")
        r, c = spot
        roof = ROOF_COLORS[rng.integers(len(ROOF_COLORS))]
        rgb[r : r + bh, c : c + bw] = roof + rng.normal(0.0, 3.0, (bh, bw, 3))
        heights[r : r + bh, c : c + bw] = rng.uniform(6.0, 15.0) + rng.normal(0.0, 0.05, (bh, bw))
        buildings.append(Hbb.from_pixel_extent(c, r, c + bw - 1, r + bh - 1, label="building"))

    short = int(round(VEHICLE_SIZE_M[0] / gsd))
    long = int(round(VEHICLE_SIZE_M[1] / gsd))
    boxes = []
    for _ in range(n_vehicles):
        vertical = bool(rng.integers(2))
        vh, vw = (long, short) if vertical else (short, long)
        spot = _place(rng, occupied, vh, vw, gap, margin, max_tries)
        if spot is None:
            raise RuntimeError("could not place vehicle: scene too crowded")
        r, c = spot
        color = VEHICLE_COLORS[rng.integers(len(VEHICLE_COLORS))]
        body = np.broadcast_to(color, (vh, vw, 3)) + rng.normal(0.0, 2.0, (vh, vw, 3))
        # windshield and rear window bands across the short axis
        front = bool(rng.integers(2))
        ws = max(1, int(round(0.18 * long)))
        rear = max(1, int(round(0.1 * long)))
        pos_ws = int(round(0.22 * long))
        pos_rear = int(round(0.78 * long))
        if not front:
            pos_ws, pos_rear = long - pos_ws - ws, long - pos_rear - rear
        glass = np.array([38.0, 44.0, 56.0])
        inset = max(1, short // 8)
        if vertical:
            body[pos_ws : pos_ws + ws, inset : vw - inset] = glass
            body[pos_rear : pos_rear + rear, inset : vw - inset] = glass
        else:
            body[inset : vh - inset, pos_ws : pos_ws + ws] = glass
            body[inset : vh - inset, pos_rear : pos_rear + rear] = glass
        rgb[r : r + vh, c : c + vw] = body
        top = VEHICLE_HEIGHT_M + rng.uniform(-0.05, 0.05)
        heights[r : r + vh, c : c + vw] = top + rng.normal(0.0, 0.02, (vh, vw))
        boxes.append(Hbb.from_pixel_extent(c, r, c + vw - 1, r + vh - 1, label="vehicle"))

    pixels = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)
    vis = RgbRaster(pixels, gsd=gsd)
    dsm = HeightRaster(heights.astype(np.float32), gsd=gsd)
    return SyntheticScene(vis, dsm, {image_id: boxes}, seed, image_id, tuple(buildings))


def stub_detect(
    gts: GroundTruthSet,
    dims: tuple[int, int],
    fraction: float = 0.5,
    jitter: float = 1.0,
    seed: int = 0,
    window: int = 608,
    stride: int = 304,
) -> DetectionSet:
    """Pretend detector: reports a seeded ``fraction`` of the ground-truth boxes.

    Each reported box is shifted by up to ``jitter`` pixels and scored in
    [0.6, 0.99].  Detection runs per tile (a box is seen by every tile that
    fully contains it) and tiles are stitched back together.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    chosen: dict[str, list[Hbb]] = {}
    for image_id in sorted(gts):
        for g in gts[image_id]:
            keep = rng.random() < fraction
            dx, dy = rng.uniform(-jitter, jitter, 2)
            score = float(rng.uniform(0.6, 0.99))
            if keep:
                chosen.setdefault(image_id, []).append(
                    Hbb(g.x_c + dx, g.y_c + dy, g.w, g.h, score=round(score, 4), label="vehicle")
                )
    W, H = dims
    per_tile = []
    for ox, oy in tile(dims, window, stride):
        x1, y1 = min(ox + window, W), min(oy + window, H)
        local = {}
        for image_id, boxes in chosen.items():
            inside = [
                b.translate(-ox, -oy)
                for b in boxes
                if b.x0 >= ox - 0.5 and b.x1 <= x1 - 0.5 and b.y0 >= oy - 0.5 and b.y1 <= y1 - 0.5
            ]
            if inside:
                local[image_id] = inside
        per_tile.append(((ox, oy), local))
    return stitch(per_tile)
