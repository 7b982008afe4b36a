"""Horizontal bounding boxes.

Pixel ``(row, col)`` covers the continuous square ``[col-0.5, col+0.5] x
[row-0.5, row+0.5]``, so a box spanning columns ``c0..c1`` has
``x_c = (c0 + c1) / 2`` and ``w = c1 - c0 + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

__all__ = ["Hbb", "collapse_duplicates", "iou", "tight_box"]


@dataclass(frozen=True)
class Hbb:
    x_c: float
    y_c: float
    w: float
    h: float
    score: float | None = None
    label: str | None = None

    def __post_init__(self):
        # plain floats keep repr() stable in written files
        for name in ("x_c", "y_c", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.score is not None:
            object.__setattr__(self, "score", float(self.score))
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box dimensions must be non-negative, got w={self.w}, h={self.h}")

    @classmethod
    def from_pixel_extent(cls, col0, row0, col1, row1, score=None, label=None) -> "Hbb":
        """Box covering the inclusive pixel ranges ``col0..col1`` x ``row0..row1``."""
        return cls(
            (col0 + col1) / 2.0,
            (row0 + row1) / 2.0,
            float(col1 - col0 + 1),
            float(row1 - row0 + 1),
            score,
            label,
        )

    @property
    def x0(self) -> float:
        return self.x_c - self.w / 2.0

    @property
    def x1(self) -> float:
        return self.x_c + self.w / 2.0

    @property
    def y0(self) -> float:
        return self.y_c - self.h / 2.0

    @property
    def y1(self) -> float:
        return self.y_c + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def pixel_extent(self) -> tuple[int, int, int, int]:
        """Inclusive ``(col0, row0, col1, row1)`` of pixels whose centers lie in ``[x0, x1)``."""
        col0 = math.ceil(self.x0 - 1e-9)
        row0 = math.ceil(self.y0 - 1e-9)
        col1 = math.ceil(self.x1 - 1e-9) - 1
        row1 = math.ceil(self.y1 - 1e-9) - 1
        return col0, row0, col1, row1

    def contains_pixel(self, row: int, col: int) -> bool:
        return self.x0 <= col - 0.5 and col + 0.5 <= self.x1 and self.y0 <= row - 0.5 and row + 0.5 <= self.y1

    def translate(self, dx: float, dy: float) -> "Hbb":
        return replace(self, x_c=self.x_c + dx, y_c=self.y_c + dy)

    def clip(self, width: int, height: int) -> "Hbb | None":
        """Clip to the raster ``[-0.5, width-0.5] x [-0.5, height-0.5]``; None if nothing is left."""
        x0 = max(self.x0, -0.5)
        y0 = max(self.y0, -0.5)
        x1 = min(self.x1, width - 0.5)
        y1 = min(self.y1, height - 0.5)
        if x1 <= x0 or y1 <= y0:
            return None
        if (x0, y0, x1, y1) == (self.x0, self.y0, self.x1, self.y1):
            return self
        return replace(self, x_c=(x0 + x1) / 2, y_c=(y0 + y1) / 2, w=x1 - x0, h=y1 - y0)

    def with_score(self, score: float) -> "Hbb":
        return replace(self, score=score)


def iou(a: Hbb, b: Hbb) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def _collapse_key(box: Hbb):
    score = box.score if box.score is not None else 1.0
    return (-score, box.x_c, box.y_c, box.w, box.h)


def collapse_duplicates(boxes: Iterable[Hbb], iou_thr: float = 0.7) -> list[Hbb]:
    """Greedy duplicate suppression.

    Boxes are visited by descending score (ties by coordinates, so the result
    does not depend on input order); a box is dropped when its IoU with an
    already kept box exceeds ``iou_thr``.
    """
    kept: list[Hbb] = []
    for box in sorted(boxes, key=_collapse_key):
        if all(iou(box, k) <= iou_thr for k in kept):
            kept.append(box)
    return kept


def tight_box(rows: Sequence[int], cols: Sequence[int]) -> Hbb:
    return Hbb.from_pixel_extent(min(cols), min(rows), max(cols), max(rows))
