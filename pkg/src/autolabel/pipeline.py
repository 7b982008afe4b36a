"""End-to-end auto-labeling: detector output + segmentation candidates + active selection.

Modes:

``finetune-only``
    evaluate the external detections as they are.
``seg-attention-only``
    segmentation candidates filtered by the classifier, no detector input.
``vis-aft``
    all branches, but segmentation sees VIS only (fusion weight 1).
``ms-aft``
    all branches with VIS/DSM fusion.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .boxes import Hbb
from .classify import (
    BaselineLinear,
    Candidate,
    Classifier,
    LabeledSample,
    SelectionResult,
    extract_patch,
    save_manual_labels,
    select_high_quality,
    train_baseline,
    update_training_set,
)
from .evaluation import (
    DetectionSet,
    GroundTruthSet,
    average_precision,
    evaluate,
    format_detections,
    merge_branches,
    pr_curve,
    prf1,
    write_pr_csv,
)
from .fusion import FusionConfig, fuse, normalize_dsm
from .raster_io import HeightRaster, RgbRaster, resample, validate_alignment
from .regions import (
    Region,
    SelectionParams,
    area_filter,
    close_region,
    ground_level,
    height_filter,
    region_to_hbb,
    split_connected,
)
from .segmentation import ClusterAssignment, SlicParams, SuperpixelMap, dbscan, merge_similar, slic
from .synthetic import generate_synthetic

__all__ = [
    "MODES",
    "CandidateTrace",
    "ConfigError",
    "PipelineConfig",
    "PipelineResult",
    "build_reference_set",
    "find_candidates",
    "resolution_study",
    "run_pipeline",
    "run_scene",
]

log = logging.getLogger(__name__)

MODES = ("finetune-only", "seg-attention-only", "vis-aft", "ms-aft")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "ms-aft"
    rounds: int = 1
    seed: int = 0
    gsd: float = 0.1
    image_id: str = "scene"
    fusion: FusionConfig = FusionConfig()
    slic: SlicParams = SlicParams()
    lambda_h: float = 10.0
    dbscan_epsilon: float = 3.0
    dbscan_min_pts: int = 1
    select: SelectionParams = SelectionParams()
    tau: float = 0.9
    lr: float = 1.0
    epochs: int = 500
    classify_seed: int = 0
    eval_iou: float = 0.5
    eval_score_thr: float = 0.6
    tile_window: int = 608
    tile_stride: int = 304

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not self.gsd > 0:
            raise ConfigError("gsd must be > 0")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("classify.tau must lie in [0, 1]")

    # dotted config key -> (attribute, nested field or None, type)
    _KEYS = {
        "pipeline.mode": ("mode", None, str),
        "pipeline.rounds": ("rounds", None, int),
        "pipeline.seed": ("seed", None, int),
        "pipeline.gsd": ("gsd", None, float),
        "pipeline.image_id": ("image_id", None, str),
        "fusion.weight_vis": ("fusion", "weight_vis", float),
        "slic.k": ("slic", "k", int),
        "slic.compactness": ("slic", "compactness", float),
        "slic.iterations": ("slic", "iterations", int),
        "seg.merge_threshold": ("slic", "merge_threshold", float),
        "seg.lambda_h": ("lambda_h", None, float),
        "dbscan.epsilon": ("dbscan_epsilon", None, float),
        "dbscan.min_pts": ("dbscan_min_pts", None, int),
        "select.height_low": ("select", "height_low", float),
        "select.height_high": ("select", "height_high", float),
        "select.area_th": ("select", "area_th", float),
        "select.area_floor": ("select", "area_floor", float),
        "select.kernel": ("select", "kernel", int),
        "classify.tau": ("tau", None, float),
        "classify.lr": ("lr", None, float),
        "classify.epochs": ("epochs", None, int),
        "classify.seed": ("classify_seed", None, int),
        "eval.iou": ("eval_iou", None, float),
        "eval.score_thr": ("eval_score_thr", None, float),
        "tile.window": ("tile_window", None, int),
        "tile.stride": ("tile_stride", None, int),
    }

    def with_overrides(self, values: dict[str, str]) -> "PipelineConfig":
        """Apply ``{"section.key": "text"}`` settings."""
        top: dict = {}
        nested: dict[str, dict] = {}
        for key, text in values.items():
            if key not in self._KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            attr, sub, typ = self._KEYS[key]
            try:
                value = typ(text)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {text!r}") from None
            if sub is None:
                top[attr] = value
            else:
                nested.setdefault(attr, {})[sub] = value
        try:
            for attr, subs in nested.items():
                top[attr] = replace(getattr(self, attr), **subs)
            return replace(self, **top)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_ini(cls, path: str | Path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values = {f"{sec}.{k}": v for sec in parser.sections() for k, v in parser[sec].items()}
        return (base or cls()).with_overrides(values)

    def to_dict(self) -> dict[str, object]:
        out = {}
        for key, (attr, sub, _) in self._KEYS.items():
            v = getattr(self, attr)
            out[key] = getattr(v, sub) if sub is not None else v
        return out


@dataclass
class PipelineResult:
    labels: DetectionSet
    candidates: list[Candidate] = field(default_factory=list)
    selection: SelectionResult | None = None
    training_set: list[LabeledSample] = field(default_factory=list)
    n_clusters: int = 0
    n_superpixels: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    ap: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    pr: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Branch II: segmentation candidates
# ---------------------------------------------------------------------------


@dataclass
class CandidateTrace:
    """Intermediate products of the segmentation branch, kept for inspection."""

    boxes: list[Hbb]
    superpixels: SuperpixelMap
    clusters: ClusterAssignment
    ground: float
    height_regions: list[Region]
    area_regions: list[Region]


def find_candidates(
    vis: RgbRaster, dsm: HeightRaster, cfg: PipelineConfig, fusion: FusionConfig | None = None
) -> CandidateTrace:
    """Fuse, segment, cluster and select regions, then box each connected part."""
    report = validate_alignment(vis, dsm)
    if not report.aligned:
        raise ValueError(report.message)
    fusion = fusion or cfg.fusion
    fused = fuse(vis, normalize_dsm(dsm), fusion)
    sp = slic(fused, dsm, cfg.slic)
    sp = merge_similar(sp, cfg.slic.merge_threshold, cfg.lambda_h)

    ok = sp.height_support > 0
    items = np.column_stack(
        [sp.centroid[:, 0] * cfg.gsd, sp.centroid[:, 1] * cfg.gsd, np.where(ok, sp.mean_height, 0.0)]
    )
    clusters = dbscan(items, cfg.dbscan_epsilon, cfg.dbscan_min_pts, cfg.lambda_h)
    # superpixels without any height cannot be placed in an interval
    if not ok.all():
        labels = clusters.cluster_of.copy()
        labels[~ok] = -1
        clusters = replace(clusters, cluster_of=labels)

    sel = cfg.select
    ground = ground_level(dsm)
    by_height = height_filter(clusters, sp, (sel.height_low, sel.height_high), ground)
    th, floor = sel.area_bounds(cfg.gsd)
    regions = area_filter(by_height, th, floor)

    boxes = []
    for region in regions:
        closed = close_region(region.mask, sel.kernel)
        for part in split_connected(closed, region.avg_height, region.source_cluster):
            if part.area < floor:
                continue
            boxes.append(region_to_hbb(part, vis))
    return CandidateTrace(boxes, sp, clusters, ground, by_height, regions)


# ---------------------------------------------------------------------------
# Branch III: training set and classifier
# ---------------------------------------------------------------------------


def _random_background_boxes(rng, occupied: np.ndarray, n: int, gsd: float, max_tries: int = 5000):
    H, W = occupied.shape
    out = []
    tries = 0
    while len(out) < n and tries < max_tries:
        tries += 1
        w = int(round(rng.uniform(1.5, 6.0) / gsd))
        h = int(round(rng.uniform(1.5, 6.0) / gsd))
        if w >= W or h >= H:
            continue
        c = int(rng.integers(0, W - w))
        r = int(rng.integers(0, H - h))
        if occupied[r : r + h, c : c + w].any():
            continue
        out.append(Hbb.from_pixel_extent(c, r, c + w - 1, r + h - 1))
    return out


def build_reference_set(cfg: PipelineConfig, n_vehicles: int = 40, n_negatives: int = 160) -> list[LabeledSample]:
    """Labeled patches from a synthetic reference scene (stand-in for a public dataset).

    Positives are the scene's vehicles; negatives are ground windows and
    crops of building roofs.
    """
    seed = cfg.seed + 7919
    scene = generate_synthetic(seed, n_vehicles, 3, (768, 768), cfg.gsd, image_id="reference")
    vis = scene.vis
    rng = np.random.default_rng(seed)
    samples = [
        LabeledSample(extract_patch(vis, b, "reference"), 1, "reference-set") for b in scene.gts["reference"]
    ]
    occupied = np.zeros((vis.height, vis.width), dtype=bool)
    for b in list(scene.gts["reference"]) + list(scene.buildings):
        c0, r0, c1, r1 = b.pixel_extent()
        occupied[max(r0 - 2, 0) : r1 + 3, max(c0 - 2, 0) : c1 + 3] = True
    ground_share = n_negatives - 3 * (n_negatives // 8)
    for b in _random_background_boxes(rng, occupied, ground_share, cfg.gsd):
        samples.append(LabeledSample(extract_patch(vis, b, "reference"), 0, "reference-set"))
    for bld in scene.buildings:
        for _ in range(n_negatives // 8):
            w = rng.uniform(0.3, 0.9) * bld.w
            h = rng.uniform(0.3, 0.9) * bld.h
            x = rng.uniform(bld.x0 + w / 2, bld.x1 - w / 2)
            y = rng.uniform(bld.y0 + h / 2, bld.y1 - h / 2)
            samples.append(LabeledSample(extract_patch(vis, Hbb(x, y, w, h), "reference"), 0, "reference-set"))
    return samples


def _target_samples(vis: RgbRaster, image_id: str, detections, manual, score_thr: float) -> list[LabeledSample]:
    out = []
    for b in (detections or {}).get(image_id, []):
        if (b.score if b.score is not None else 1.0) >= score_thr and b.clip(vis.width, vis.height) is not None:
            out.append(LabeledSample(extract_patch(vis, b, image_id), 1, "detected"))
    for img, label, b in manual or []:
        if img == image_id and b.clip(vis.width, vis.height) is not None:
            out.append(LabeledSample(extract_patch(vis, b, image_id), label, "manual"))
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def run_scene(
    cfg: PipelineConfig,
    vis: RgbRaster,
    dsm: HeightRaster | None = None,
    detections: DetectionSet | None = None,
    gts: GroundTruthSet | None = None,
    manual: Sequence[tuple[str, int, Hbb]] | None = None,
    classifier: Classifier | None = None,
    reference: Sequence[LabeledSample] | None = None,
) -> PipelineResult:
    """Run one scene through the configured mode and evaluate against ``gts`` if given."""
    image_id = cfg.image_id
    mode = cfg.mode
    if mode == "finetune-only":
        if detections is None:
            raise ValueError("mode finetune-only needs a detections input")
        result = PipelineResult(labels={k: list(v) for k, v in sorted(detections.items())})
    else:
        if dsm is None:
            raise ValueError(f"mode {mode} needs a DSM input")
        branch_one = detections if mode in ("vis-aft", "ms-aft") else None
        fusion = FusionConfig(1.0, cfg.fusion.dsm_norm) if mode == "vis-aft" else cfg.fusion
        trace = find_candidates(vis, dsm, cfg, fusion)
        boxes = trace.boxes
        candidates = [
            Candidate(b, extract_patch(vis, b, image_id, f"{image_id}:{i}")) for i, b in enumerate(boxes)
        ]
        training = list(reference) if reference is not None else build_reference_set(cfg)
        training += _target_samples(vis, image_id, branch_one, manual, cfg.eval_score_thr)
        clf = classifier
        selection = None
        for round_ in range(cfg.rounds):
            if classifier is None:
                clf = train_baseline(training, cfg.lr, cfg.epochs, cfg.classify_seed + round_)
            selection = select_high_quality(candidates, clf, cfg.tau)
            training = update_training_set(training, selection)
        labels = merge_branches(branch_one or {}, selection)
        result = PipelineResult(
            labels=labels,
            candidates=candidates,
            selection=selection,
            training_set=training,
            n_clusters=trace.clusters.n_clusters,
            n_superpixels=trace.superpixels.count,
        )
    if gts is not None:
        m = evaluate(result.labels, gts, cfg.eval_iou, cfg.eval_score_thr)
        result.precision, result.recall, result.f1 = prf1(m)
        result.tp, result.fp, result.fn = m.tp, m.fp, m.fn
        result.pr = pr_curve(result.labels, gts, cfg.eval_iou)
        result.ap = average_precision(result.pr)
    return result


def metrics_csv(rows: Sequence[tuple[float, float, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["factor", "precision", "recall", "f1"])
    for factor, p, r, f in rows:
        w.writerow([repr(float(factor)), repr(float(p)), repr(float(r)), repr(float(f))])
    return buf.getvalue()


def _training_lines(samples: Sequence[LabeledSample]):
    for s in samples:
        if s.origin == "reference-set" or s.patch.source_box is None:
            continue
        yield (s.patch.source_image, s.label, s.patch.source_box)


def write_outputs(result: PipelineResult, cfg: PipelineConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write labels, augmented training set, metrics and PR curve files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "labels": out / "labels.txt",
        "training_set": out / "training_set.txt",
        "metrics": out / "metrics.csv",
        "pr": out / "pr.csv",
        "summary": out / "summary.json",
    }
    paths["labels"].write_text(format_detections(result.labels))
    save_manual_labels(_training_lines(result.training_set), paths["training_set"])
    paths["metrics"].write_text(metrics_csv([(1.0, result.precision, result.recall, result.f1)]))
    write_pr_csv(result.pr, paths["pr"])
    summary = {
        "mode": cfg.mode,
        "precision": result.precision,
        "recall": result.recall,
        "f1": result.f1,
        "ap": result.ap,
        "tp": result.tp,
        "fp": result.fp,
        "fn": result.fn,
        "candidates": len(result.candidates),
        "selected": len(result.selection.selected) if result.selection else 0,
        "clusters": result.n_clusters,
        "superpixels": result.n_superpixels,
        "config": cfg.to_dict(),
    }
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return paths


def run_pipeline(
    cfg: PipelineConfig,
    vis_path: str | Path,
    out_dir: str | Path,
    dsm_path: str | Path | None = None,
    gt_path: str | Path | None = None,
    detections_path: str | Path | None = None,
    manual_path: str | Path | None = None,
    model_path: str | Path | None = None,
    scores_path: str | Path | None = None,
) -> PipelineResult:
    """File-level wrapper around :func:`run_scene`; writes every report to ``out_dir``."""
    from .classify import load_external_scores, load_manual_labels
    from .evaluation import load_detections, load_ground_truth
    from .raster_io import load_dsm, load_vis

    if cfg.mode == "finetune-only" and detections_path is None:
        raise FileNotFoundError("mode finetune-only needs --detections")
    if cfg.mode != "finetune-only" and dsm_path is None:
        raise FileNotFoundError(f"mode {cfg.mode} needs --dsm")
    vis = load_vis(vis_path, gsd=cfg.gsd)
    dsm = load_dsm(dsm_path, gsd=cfg.gsd) if dsm_path is not None else None
    detections = load_detections(detections_path) if detections_path is not None else None
    gts = load_ground_truth(gt_path) if gt_path is not None else None
    manual = load_manual_labels(manual_path) if manual_path is not None else None
    classifier = None
    if scores_path is not None:
        classifier = load_external_scores(scores_path)
    elif model_path is not None:
        classifier = BaselineLinear.load(model_path)
    result = run_scene(cfg, vis, dsm, detections, gts, manual, classifier)
    write_outputs(result, cfg, out_dir)
    return result


def resolution_study(
    vis: RgbRaster,
    dsm: HeightRaster,
    gts: GroundTruthSet,
    factors: Sequence[float],
    cfg: PipelineConfig,
    detections: DetectionSet | None = None,
    csv_path: str | Path | None = None,
) -> list[tuple[float, float, float, float]]:
    """Degrade both rasters by each factor (down then up), rerun and score.

    The classifier's reference set is built once at full resolution.
    Returns ``(factor, precision, recall, f1)`` rows.
    """
    if any(f < 1 for f in factors):
        raise ValueError("resolution factors must be >= 1")
    reference = build_reference_set(cfg) if cfg.mode != "finetune-only" else None
    rows = []
    for f in factors:
        v = resample(vis, f, "down-then-up")
        d = resample(dsm, f, "down-then-up")
        res = run_scene(cfg, v, d, detections, gts, reference=reference)
        rows.append((float(f), res.precision, res.recall, res.f1))
        log.info("factor %s: P=%.4f R=%.4f F1=%.4f", f, res.precision, res.recall, res.f1)
    if csv_path is not None:
        Path(csv_path).write_text(metrics_csv(rows))
    return rows
