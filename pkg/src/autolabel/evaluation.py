"""Detection files, tiling/stitching, branch merging and detection metrics.

Detections file lines: ``<image-id> <label> <score> <x_c> <y_c> <w> <h>``.
Ground-truth file lines: ``<image-id> <label> <x_c> <y_c> <w> <h>``.
Metrics are micro-averaged: TP/FP/FN are summed over images first.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .boxes import Hbb, collapse_duplicates, iou
from .classify import SelectionResult

__all__ = [
    "DetectionSet",
    "GroundTruthSet",
    "MatchResult",
    "PrPoint",
    "average_precision",
    "evaluate",
    "f1_score",
    "format_detections",
    "iou",
    "load_detections",
    "load_ground_truth",
    "match",
    "merge_branches",
    "pr_curve",
    "prf1",
    "save_detections",
    "save_ground_truth",
    "stitch",
    "tile",
    "write_pr_csv",
]

DetectionSet = dict[str, list[Hbb]]
GroundTruthSet = dict[str, list[Hbb]]

DUPLICATE_IOU = 0.7


class PrPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float


@dataclass
class MatchResult:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    pairs: list[tuple[Hbb, Hbb]] = field(default_factory=list)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.pairs + other.pairs)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _parse_lines(path, n_fields: int, scored: bool):
    out: dict[str, list[Hbb]] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != n_fields:
            raise ValueError(f"{path}:{lineno}: expected {n_fields} fields, found {len(parts)}")
        try:
            nums = [float(v) for v in parts[2:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
        if scored:
            score, x, y, w, h = nums
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{path}:{lineno}: score {score} outside [0, 1]")
        else:
            score = None
            x, y, w, h = nums
        if w < 0 or h < 0:
            raise ValueError(f"{path}:{lineno}: negative box dimensions")
        out.setdefault(parts[0], []).append(Hbb(x, y, w, h, score=score, label=parts[1]))
    return out


def load_detections(path: str | Path) -> DetectionSet:
    return _parse_lines(path, 7, scored=True)


def load_ground_truth(path: str | Path) -> GroundTruthSet:
    return _parse_lines(path, 6, scored=False)


def format_detections(dets: Mapping[str, Sequence[Hbb]]) -> str:
    lines = []
    for image_id in sorted(dets):
        for b in dets[image_id]:
            score = b.score if b.score is not None else 1.0
            lines.append(f"{image_id} {b.label or 'vehicle'} {score!r} {b.x_c!r} {b.y_c!r} {b.w!r} {b.h!r}\n")
    return "".join(lines)


def save_detections(dets: Mapping[str, Sequence[Hbb]], path: str | Path) -> None:
    Path(path).write_text(format_detections(dets))


def save_ground_truth(gts: Mapping[str, Sequence[Hbb]], path: str | Path) -> None:
    lines = []
    for image_id in sorted(gts):
        for b in gts[image_id]:
            lines.append(f"{image_id} {b.label or 'vehicle'} {b.x_c!r} {b.y_c!r} {b.w!r} {b.h!r}\n")
    Path(path).write_text("".join(lines))


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------


def _axis_origins(dim: int, window: int, stride: int) -> list[int]:
    if dim <= window:
        return [0]
    origins = list(range(0, dim - window + 1, stride))
    if origins[-1] + window < dim:
        origins.append(dim - window)
    return origins


def tile(dims: tuple[int, int], window: int = 608, stride: int = 304) -> list[tuple[int, int]]:
    """Window origins ``(x, y)`` covering a ``(w, h)`` raster, row-major.

    Origins step by ``stride``; the last origin on each axis is clamped so the
    window ends at the image edge.  Images smaller than the window get one
    origin at ``(0, 0)``.
    """
    if stride < 1 or window < 1:
        raise ValueError("window and stride must be >= 1")
    w, h = dims
    xs = _axis_origins(w, window, stride)
    ys = _axis_origins(h, window, stride)
    return [(x, y) for y in ys for x in xs]


def stitch(
    per_tile: Iterable[tuple[tuple[int, int], Mapping[str, Sequence[Hbb]]]],
    iou_thr: float = DUPLICATE_IOU,
) -> DetectionSet:
    """Translate tile-local boxes to global coordinates and collapse duplicates."""
    merged: dict[str, list[Hbb]] = {}
    for (ox, oy), dets in per_tile:
        for image_id, boxes in dets.items():
            merged.setdefault(image_id, []).extend(b.translate(ox, oy) for b in boxes)
    return {k: collapse_duplicates(v, iou_thr) for k, v in sorted(merged.items())}


def merge_branches(
    detections: Mapping[str, Sequence[Hbb]],
    selected: SelectionResult | None,
    iou_thr: float = DUPLICATE_IOU,
) -> DetectionSet:
    """Union detector output with selected candidates; duplicates keep the higher score."""
    pool: dict[str, list[Hbb]] = {k: list(v) for k, v in detections.items()}
    if selected is not None:
        for c in selected.selected:
            box = c.box if c.box.label else Hbb(c.box.x_c, c.box.y_c, c.box.w, c.box.h, c.box.score, "vehicle")
            pool.setdefault(c.patch.source_image, []).append(box)
    return {k: collapse_duplicates(v, iou_thr) for k, v in sorted(pool.items())}


# ---------------------------------------------------------------------------
# Matching and metrics
# ---------------------------------------------------------------------------


def _score(b: Hbb) -> float:
    return b.score if b.score is not None else 1.0


def _greedy(detections: Sequence[Hbb], gts: Sequence[Hbb], iou_thr: float) -> list[tuple[int, int]]:
    order = sorted(range(len(detections)), key=lambda i: -_score(detections[i]))
    used = [False] * len(gts)
    pairs = []
    for i in order:
        d = detections[i]
        best, best_iou = -1, iou_thr
        for j, g in enumerate(gts):
            if used[j]:
                continue
            v = iou(d, g)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            pairs.append((i, best))
    return pairs


def match(detections: Sequence[Hbb], gts: Sequence[Hbb], iou_thr: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching by descending score (ties keep input order).

    Each detection takes the still-unmatched ground truth with the highest
    IoU, provided it reaches ``iou_thr``.
    """
    pairs = [(detections[i], gts[j]) for i, j in _greedy(detections, gts, iou_thr)]
    tp = len(pairs)
    return MatchResult(tp, len(detections) - tp, len(gts) - tp, pairs)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf1(m: MatchResult) -> tuple[float, float, float]:
    """Precision, recall and F1; any 0/0 is taken as 0."""
    p = m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0
    r = m.tp / (m.tp + m.fn) if m.tp + m.fn else 0.0
    return p, r, f1_score(p, r)


def _as_sets(detections, gts):
    if isinstance(detections, Mapping) or isinstance(gts, Mapping):
        dets = dict(detections) if isinstance(detections, Mapping) else {"": list(detections)}
        gt = dict(gts) if isinstance(gts, Mapping) else {"": list(gts)}
        return dets, gt
    return {"": list(detections)}, {"": list(gts)}


def evaluate(detections, gts, iou_thr: float = 0.5, score_thr: float = 0.0) -> MatchResult:
    """Micro-averaged match over all images, keeping detections scoring ``>= score_thr``."""
    dets, gt = _as_sets(detections, gts)
    total = MatchResult()
    for image_id in sorted(set(dets) | set(gt)):
        kept = [b for b in dets.get(image_id, []) if _score(b) >= score_thr]
        total = total + match(kept, gt.get(image_id, []), iou_thr)
    return total


def pr_curve(detections, gts, iou_thr: float = 0.5) -> list[PrPoint]:
    """Precision/recall at every distinct detection score, highest threshold first.

    Greedy matching in score order is prefix-stable, so one matching pass
    yields the TP count for every threshold.
    """
    dets, gt = _as_sets(detections, gts)
    n_gt = sum(len(v) for v in gt.values())
    scored = []  # (score, is_tp)
    for image_id in sorted(set(dets) | set(gt)):
        ds = dets.get(image_id, [])
        matched = {i for i, _ in _greedy(ds, gt.get(image_id, []), iou_thr)}
        for i, d in enumerate(ds):
            scored.append((_score(d), i in matched))
    scored.sort(key=lambda t: -t[0])
    curve = []
    tp = fp = 0
    i = 0
    while i < len(scored):
        thr = scored[i][0]
        while i < len(scored) and scored[i][0] == thr:
            if scored[i][1]:
                tp += 1
            else:
                fp += 1
            i += 1
        precision = tp / (tp + fp)
        recall = tp / n_gt if n_gt else 0.0
        curve.append(PrPoint(thr, precision, recall))
    return curve


def average_precision(curve: Sequence[PrPoint]) -> float:
    """``sum_k P(k) * (R(k) - R(k-1))`` over the curve in threshold order, ``R(0) = 0``."""
    ap = 0.0
    prev_r = 0.0
    for pt in curve:
        ap += pt.precision * (pt.recall - prev_r)
        prev_r = pt.recall
    return ap


def write_pr_csv(curve: Sequence[PrPoint], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall"])
    for pt in curve:
        w.writerow([repr(pt.threshold), repr(pt.precision), repr(pt.recall)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
