"""Acceptance suite: nine end-to-end criteria, each reported as one PASS/FAIL line.

Run under pytest (the lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import filecmp
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from benchmark_triples import ALL_TABLES
from oracles import brute_dbscan, flood_components, same_partition, sweep_ap

from autolabel.boxes import Hbb
from autolabel.classify import N_FEATURES, logistic_loss_and_grad
from autolabel.cli import main as cli_main
from autolabel.evaluation import average_precision, f1_score, pr_curve, save_ground_truth
from autolabel.pipeline import PipelineConfig, build_reference_set, find_candidates, resolution_study, run_scene
from autolabel.raster_io import HeightRaster, RgbRaster, save_dsm, save_vis
from autolabel.segmentation import SlicParams, dbscan, slic
from autolabel.synthetic import generate_synthetic, stub_detect

RESULTS: dict[int, str] = {}

SCENE_SEED = 42
TAU = 0.6


def report(n, title, ok, detail, elapsed, budget=None):
    within = budget is None or elapsed < budget
    line = f"criterion {n}: {'PASS' if ok and within else 'FAIL'} - {title}: {detail} ({elapsed:.2f}s"
    line += f" / budget {budget:g}s)" if budget is not None else ")"
    RESULTS[n] = line
    print(line)
    assert ok, line
    assert within, line


@pytest.fixture(scope="module")
def scene():
    return generate_synthetic(SCENE_SEED, 30, 5, (1024, 1024))


@pytest.fixture(scope="module")
def cfg():
    return PipelineConfig(seed=SCENE_SEED, tau=TAU, eval_iou=0.5)


@pytest.fixture(scope="module")
def reference(cfg):
    return build_reference_set(cfg)


# 1 -------------------------------------------------------------------------------------------


def test_criterion_1_f1_recomputation():
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for table in ALL_TABLES.values():
        for p, r, f1 in table:
            worst = max(worst, abs(f1_score(p, r) - f1))
            n += 1
    exact = f1_score(0.8012, 0.4759)
    ok = worst <= 0.01 and round(exact, 4) == 0.5971
    report(1, "F1 recomputed from published P/R", ok, f"{n} triples, max |dF1|={worst:.4f}",
           time.perf_counter() - t0, 1.0)


# 2 -------------------------------------------------------------------------------------------


def random_ap_instance(rng):
    n_gt = int(rng.integers(0, 21))
    gts = []
    for _ in range(n_gt):
        gts.append((float(rng.uniform(0, 100)), float(rng.uniform(0, 100)),
                    float(rng.uniform(4, 20)), float(rng.uniform(4, 20))))
    dets = []
    for _ in range(int(rng.integers(0, 51))):
        if gts and rng.random() < 0.6:
            x, y, w, h = gts[int(rng.integers(len(gts)))]
            x, y = x + rng.normal(0, 2), y + rng.normal(0, 2)
            w, h = w * rng.uniform(0.8, 1.2), h * rng.uniform(0.8, 1.2)
        else:
            x, y, w, h = rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(4, 20), rng.uniform(4, 20)
        score = float(np.round(rng.uniform(0, 1), 2))  # rounding forces score ties
        dets.append((score, float(x), float(y), float(w), float(h)))
    return dets, gts


def test_criterion_2_ap_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        dets, gts = random_ap_instance(rng)
        boxes = [Hbb(x, y, w, h, score=s) for s, x, y, w, h in dets]
        truth = [Hbb(x, y, w, h) for x, y, w, h in gts]
        got = average_precision(pr_curve(boxes, truth, 0.5))
        worst = max(worst, abs(got - sweep_ap(dets, gts, 0.5)))
    report(2, "AP vs threshold-sweep oracle", worst <= 1e-9, f"100 instances, max |dAP|={worst:.2e}",
           time.perf_counter() - t0, 5.0)


# 3 -------------------------------------------------------------------------------------------


def test_criterion_3_dbscan_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    agree = 0
    for _ in range(100):
        n = int(rng.integers(1, 201))
        centers = rng.uniform(0, 50, (int(rng.integers(1, 6)), 3))
        pts = centers[rng.integers(len(centers), size=n)] + rng.normal(0, 2, (n, 3))
        pts = np.round(pts, 1)
        eps = float(rng.uniform(0.5, 4))
        min_pts = int(rng.integers(1, 6))
        lam = float(rng.choice([1.0, 2.0, 10.0]))
        got = dbscan(pts.tolist(), eps, min_pts, lam).cluster_of.tolist()
        agree += same_partition(got, brute_dbscan(pts.tolist(), eps, min_pts, lam))
    report(3, "DBSCAN vs O(n^2) reference", agree == 100, f"{agree}/100 identical partitions",
           time.perf_counter() - t0, 10.0)


# 4 -------------------------------------------------------------------------------------------


def smooth_random_image(rng, size=256):
    """Blocky colour field plus noise so superpixels have structure to follow."""
    coarse = rng.integers(0, 256, (16, 16, 3))
    img = np.kron(coarse, np.ones((size // 16, size // 16, 1)))
    img = img + rng.normal(0, 12, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def test_criterion_4_slic_invariants():
    t0 = time.perf_counter()
    k, problems, counts = 200, [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        img = RgbRaster(smooth_random_image(rng))
        dsm = HeightRaster(rng.uniform(0, 3, (256, 256)).astype(np.float32))
        sp = slic(img, dsm, SlicParams(k=k))
        counts.append(sp.count)
        lab = sp.labels
        if lab.shape != (256, 256) or lab.min() != 0 or lab.max() != sp.count - 1:
            problems.append(f"seed {seed}: ids not 0..n-1")
        if np.bincount(lab.ravel(), minlength=sp.count).tolist() != sp.size.tolist() or sp.size.sum() != 256 * 256:
            problems.append(f"seed {seed}: sizes do not partition the image")
        if not 0.8 * k <= sp.count <= 1.2 * k:
            problems.append(f"seed {seed}: {sp.count} superpixels")
        for i in range(sp.count):
            ys, xs = np.nonzero(lab == i)
            window = lab[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1] == i
            if len(flood_components(window)) != 1:
                problems.append(f"seed {seed}: superpixel {i} disconnected")
    report(4, "SLIC partition / connectivity / count", not problems,
           f"counts {min(counts)}-{max(counts)} for k={k}" + (f"; {problems[:3]}" if problems else ""),
           time.perf_counter() - t0, 30.0)


# 5 -------------------------------------------------------------------------------------------


def test_criterion_5_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 30))
        X = rng.uniform(0, 1, (m, N_FEATURES))
        y = rng.integers(0, 2, m).astype(float)
        w = rng.normal(0, 1, N_FEATURES + 1)
        _, g = logistic_loss_and_grad(w, X, y)
        num = np.empty_like(w)
        step = 1e-6
        for j in range(len(w)):
            e = np.zeros_like(w)
            e[j] = step
            num[j] = (logistic_loss_and_grad(w + e, X, y)[0] - logistic_loss_and_grad(w - e, X, y)[0]) / (2 * step)
        rel = np.linalg.norm(g - num) / max(np.linalg.norm(g), np.linalg.norm(num), 1e-12)
        worst = max(worst, rel)
    report(5, "analytic vs finite-difference gradient", worst <= 1e-4, f"50 draws, max rel err={worst:.2e}",
           time.perf_counter() - t0)


# 6 -------------------------------------------------------------------------------------------


def overlaps(mask, box):
    c0, r0, c1, r1 = box.pixel_extent()
    g = mask.grid
    rs = slice(max(r0 - mask.row0, 0), max(min(r1 + 1 - mask.row0, g.shape[0]), 0))
    cs = slice(max(c0 - mask.col0, 0), max(min(c1 + 1 - mask.col0, g.shape[1]), 0))
    return bool(g[rs, cs].any())


def test_criterion_6_end_to_end_scene(scene, cfg):
    t0 = time.perf_counter()
    res = run_scene(cfg, scene.vis, scene.dsm, detections=None, gts=scene.gts)
    trace = find_candidates(scene.vis, scene.dsm, cfg)
    leaked = [i for i, b in enumerate(scene.buildings) if any(overlaps(r.mask, b) for r in trace.height_regions)]
    ok = res.precision >= 0.8 and res.recall >= 0.8 and len(scene.buildings) == 5 and not leaked
    ok = ok and len(trace.boxes) < trace.clusters.n_clusters
    detail = (f"P={res.precision:.3f} R={res.recall:.3f}, buildings leaking through height filter: {len(leaked)}/5, "
              f"candidates {len(trace.boxes)} < clusters {trace.clusters.n_clusters}")
    report(6, "ms-aft on seed-42 scene, segmentation path only", ok, detail, time.perf_counter() - t0, 60.0)


# 7 -------------------------------------------------------------------------------------------


def test_criterion_7_ablation_direction(scene, cfg, reference):
    t0 = time.perf_counter()
    dets = stub_detect(scene.gts, scene.vis.dims, seed=SCENE_SEED)
    f1 = {}
    for mode in ("ms-aft", "vis-aft", "seg-attention-only"):
        c = cfg.with_overrides({"pipeline.mode": mode})
        f1[mode] = run_scene(c, scene.vis, scene.dsm, dets, scene.gts, reference=reference).f1
    ok = f1["ms-aft"] >= f1["vis-aft"] and f1["ms-aft"] >= f1["seg-attention-only"]
    report(7, "F1(ms-aft) >= single-branch variants", ok, ", ".join(f"{k}={v:.3f}" for k, v in f1.items()),
           time.perf_counter() - t0)


# 8 -------------------------------------------------------------------------------------------


def test_criterion_8_resolution_study(scene, cfg):
    t0 = time.perf_counter()
    rows = resolution_study(scene.vis, scene.dsm, scene.gts, [1, 2, 4], cfg)
    f1 = [r[3] for r in rows]
    ok = f1[0] >= f1[1] >= f1[2] and f1[2] < f1[0]
    report(8, "F1 vs resolution degradation", ok, "F1 at x1/x2/x4 = " + "/".join(f"{v:.3f}" for v in f1),
           time.perf_counter() - t0)


# 9 -------------------------------------------------------------------------------------------


def test_criterion_9_determinism(scene, tmp_path):
    t0 = time.perf_counter()
    save_vis(scene.vis, tmp_path / "vis.ppm")
    save_dsm(scene.dsm, tmp_path / "dsm.dsm")
    save_ground_truth(scene.gts, tmp_path / "gt.txt")
    codes = []
    for name in ("a", "b"):
        codes.append(cli_main(["run", "--seed", str(SCENE_SEED), "--vis", str(tmp_path / "vis.ppm"),
                               "--dsm", str(tmp_path / "dsm.dsm"), "--gt", str(tmp_path / "gt.txt"),
                               "--out", str(tmp_path / name)]))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    ok = codes == [0, 0] and names and not mismatch and not errors
    report(9, "run twice -> byte-identical outputs", ok, f"{len(match)} files identical: {', '.join(match)}",
           time.perf_counter() - t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
