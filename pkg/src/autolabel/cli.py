"""Command-line entry point: ``autolabel <subcommand> [options]``.

Exit codes: 0 success, 2 bad or missing input, 3 bad configuration.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (
    BaselineLinear,
    Candidate,
    extract_patch,
    load_external_scores,
    load_manual_labels,
    select_high_quality,
    train_baseline,
)
from .evaluation import (
    average_precision,
    evaluate,
    load_detections,
    load_ground_truth,
    pr_curve,
    prf1,
    save_detections,
    save_ground_truth,
    write_pr_csv,
)
from .fusion import fuse, normalize_dsm
from .pipeline import (
    MODES,
    ConfigError,
    PipelineConfig,
    _target_samples,
    build_reference_set,
    find_candidates,
    metrics_csv,
    resolution_study,
    run_pipeline,
)
from .raster_io import load_dsm, load_vis, save_dsm, save_vis, validate_alignment
from .segmentation import merge_similar, slic
from .synthetic import generate_synthetic, stub_detect

log = logging.getLogger("autolabel")


class InputError(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_ini(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["pipeline.seed"] = str(args.seed)
    if getattr(args, "mode", None):
        overrides["pipeline.mode"] = args.mode
    if getattr(args, "image_id", None):
        overrides["pipeline.image_id"] = args.image_id
    return cfg.with_overrides(overrides) if overrides else cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _rasters(args, cfg: PipelineConfig):
    vis = load_vis(args.vis, gsd=cfg.gsd)
    dsm = load_dsm(args.dsm, gsd=cfg.gsd)
    report = validate_alignment(vis, dsm)
    if not report.aligned:
        raise InputError(report.message)
    return vis, dsm


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    cfg = _config(args)
    out = _out(args)
    scene = generate_synthetic(
        cfg.seed, args.vehicles, args.buildings, (args.width, args.height), cfg.gsd, cfg.image_id
    )
    save_vis(scene.vis, out / "vis.ppm")
    save_dsm(scene.dsm, out / "dsm.dsm")
    save_ground_truth(scene.gts, out / "gt.txt")
    dets = stub_detect(
        scene.gts, scene.vis.dims, args.stub_fraction, args.stub_jitter, cfg.seed, cfg.tile_window, cfg.tile_stride
    )
    save_detections(dets, out / "detections.txt")
    print(f"wrote {out}/vis.ppm, dsm.dsm, gt.txt, detections.txt ({len(scene.gts[cfg.image_id])} vehicles)")
    return 0


def cmd_fuse(args) -> int:
    cfg = _config(args)
    vis, dsm = _rasters(args, cfg)
    fused = fuse(vis, normalize_dsm(dsm), cfg.fusion)
    out = _out(args)
    save_vis(fused, out / "fused.ppm")
    print(f"wrote {out / 'fused.ppm'}")
    return 0


def cmd_segment(args) -> int:
    cfg = _config(args)
    vis, dsm = _rasters(args, cfg)
    sp = slic(fuse(vis, normalize_dsm(dsm), cfg.fusion), dsm, cfg.slic)
    sp = merge_similar(sp, cfg.slic.merge_threshold, cfg.lambda_h)
    out = _out(args)
    np.save(out / "superpixels.npy", sp.labels)
    with open(out / "superpixels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "L", "a", "b", "height", "size"])
        for i in range(sp.count):
            w.writerow(
                [i, repr(float(sp.centroid[i, 0])), repr(float(sp.centroid[i, 1]))]
                + [repr(float(v)) for v in sp.mean_lab[i]]
                + [repr(float(sp.mean_height[i])), int(sp.size[i])]
            )
    print(f"{sp.count} superpixels -> {out / 'superpixels.npy'}, {out / 'superpixels.csv'}")
    return 0


def cmd_candidates(args) -> int:
    cfg = _config(args)
    vis, dsm = _rasters(args, cfg)
    trace = find_candidates(vis, dsm, cfg)
    out = _out(args)
    dets = {cfg.image_id: [replace(b, score=1.0, label="candidate") for b in trace.boxes]} if trace.boxes else {}
    save_detections(dets, out / "candidates.txt")
    print(
        f"{trace.superpixels.count} superpixels, {trace.clusters.n_clusters} clusters, "
        f"{len(trace.height_regions)} in height interval, {len(trace.boxes)} candidates -> {out / 'candidates.txt'}"
    )
    return 0


def _training_samples(args, cfg: PipelineConfig):
    samples = build_reference_set(cfg)
    if args.vis is not None:
        vis = load_vis(args.vis, gsd=cfg.gsd)
        dets = load_detections(args.detections) if args.detections else None
        manual = load_manual_labels(args.manual) if args.manual else None
        samples += _target_samples(vis, cfg.image_id, dets, manual, cfg.eval_score_thr)
    return samples


def cmd_classify_train(args) -> int:
    cfg = _config(args)
    samples = _training_samples(args, cfg)
    model = train_baseline(samples, cfg.lr, cfg.epochs, cfg.classify_seed)
    out = _out(args)
    model.save(out / "model.json")
    print(
        f"trained on {len(samples)} samples; loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}; "
        f"wrote {out / 'model.json'}"
    )
    return 0


def cmd_select(args) -> int:
    cfg = _config(args)
    vis = load_vis(args.vis, gsd=cfg.gsd)
    boxes = load_detections(args.candidates).get(cfg.image_id, [])
    cands = [Candidate(b, extract_patch(vis, b, cfg.image_id, f"{cfg.image_id}:{i}")) for i, b in enumerate(boxes)]
    if args.scores:
        clf = load_external_scores(args.scores)
    elif args.model:
        clf = BaselineLinear.load(args.model)
    else:
        clf = train_baseline(build_reference_set(cfg), cfg.lr, cfg.epochs, cfg.classify_seed)
    result = select_high_quality(cands, clf, cfg.tau)
    out = _out(args)
    kept = [replace(c.box, label="vehicle") for c in result.selected]
    selected = {cfg.image_id: kept} if kept else {}
    save_detections(selected, out / "selected.txt")
    print(f"{len(result.selected)} of {len(cands)} candidates selected at tau={cfg.tau} -> {out / 'selected.txt'}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run_pipeline(
        cfg,
        args.vis,
        args.out,
        dsm_path=args.dsm,
        gt_path=args.gt,
        detections_path=args.detections,
        manual_path=args.manual,
        model_path=args.model,
        scores_path=args.scores,
    )
    n = sum(len(v) for v in res.labels.values())
    print(f"mode {cfg.mode}: {n} labels; P={res.precision:.4f} R={res.recall:.4f} F1={res.f1:.4f} AP={res.ap:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    dets = load_detections(args.detections)
    gts = load_ground_truth(args.gt)
    m = evaluate(dets, gts, cfg.eval_iou, cfg.eval_score_thr)
    p, r, f = prf1(m)
    out = _out(args)
    (out / "metrics.csv").write_text(metrics_csv([(1.0, p, r, f)]))
    print(f"TP={m.tp} FP={m.fp} FN={m.fn} P={p:.4f} R={r:.4f} F1={f:.4f}")
    return 0


def cmd_pr_curve(args) -> int:
    cfg = _config(args)
    curve = pr_curve(load_detections(args.detections), load_ground_truth(args.gt), cfg.eval_iou)
    out = _out(args)
    write_pr_csv(curve, out / "pr.csv")
    print(f"AP={average_precision(curve):.6f} over {len(curve)} thresholds -> {out / 'pr.csv'}")
    return 0


def cmd_resolution_study(args) -> int:
    cfg = _config(args)
    vis, dsm = _rasters(args, cfg)
    try:
        factors = [float(f) for f in args.factors.split(",")]
    except ValueError:
        raise InputError(f"bad --factors {args.factors!r}") from None
    gts = load_ground_truth(args.gt)
    dets = load_detections(args.detections) if args.detections else None
    out = _out(args)
    rows = resolution_study(vis, dsm, gts, factors, cfg, dets, out / "metrics.csv")
    for f, p, r, f1 in rows:
        print(f"factor {f:g}: P={p:.4f} R={r:.4f} F1={f1:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand-level default from clobbering a global flag
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override pipeline.seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: .)")
    p.add_argument(
        "--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE", help="override one config key"
    )
    p.add_argument("--image-id", default=argparse.SUPPRESS, help="override pipeline.image_id")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="autolabel", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    p = add("gen-synthetic", cmd_gen_synthetic, "render a synthetic VIS/DSM scene with ground truth and stub detections")
    p.add_argument("--vehicles", type=int, default=30)
    p.add_argument("--buildings", type=int, default=5)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=1024)
    p.add_argument("--stub-fraction", type=float, default=0.5)
    p.add_argument("--stub-jitter", type=float, default=1.0)

    for name, func, help_ in (
        ("fuse", cmd_fuse, "fuse VIS with the normalized DSM"),
        ("segment", cmd_segment, "SLIC superpixels followed by similarity merging"),
        ("candidates", cmd_candidates, "segmentation branch: candidate vehicle boxes"),
    ):
        p = add(name, func, help_)
        p.add_argument("--vis", required=True)
        p.add_argument("--dsm", required=True)

    p = add("classify-train", cmd_classify_train, "train the baseline patch classifier")
    p.add_argument("--vis", help="target image for detections/manual samples")
    p.add_argument("--detections")
    p.add_argument("--manual")

    p = add("select", cmd_select, "score candidates and keep those at or above tau")
    p.add_argument("--vis", required=True)
    p.add_argument("--candidates", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="model.json from classify-train")
    g.add_argument("--scores", help="external '<box-id> <probability>' file")

    p = add("run", cmd_run, "full pipeline in one of the ablation modes")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--vis", required=True)
    p.add_argument("--dsm")
    p.add_argument("--gt")
    p.add_argument("--detections")
    p.add_argument("--manual")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model")
    g.add_argument("--scores")

    p = add("evaluate", cmd_evaluate, "precision / recall / F1 of a detections file")
    p.add_argument("--detections", required=True)
    p.add_argument("--gt", required=True)

    p = add("pr-curve", cmd_pr_curve, "precision-recall curve and AP")
    p.add_argument("--detections", required=True)
    p.add_argument("--gt", required=True)

    p = add("resolution-study", cmd_resolution_study, "rerun the pipeline on degraded rasters")
    p.add_argument("--vis", required=True)
    p.add_argument("--dsm", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--detections")
    p.add_argument("--factors", default="1,2,4")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "."), ("set", None), ("image_id", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (InputError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
