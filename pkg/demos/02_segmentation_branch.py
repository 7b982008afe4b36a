"""
Walk through the segmentation branch one stage at a time.

fuse -> SLIC superpixels -> merge similar neighbours -> DBSCAN on
(position, height) -> keep clusters in the vehicle height band ->
area filter -> boxes.  The pipeline wraps all of this in
find_candidates(); here we print what each step leaves behind.
"""

import numpy as np

from autolabel import PipelineConfig, fuse, generate_synthetic, merge_similar, normalize_dsm, slic
from autolabel.evaluation import match
from autolabel.pipeline import find_candidates

scene = generate_synthetic(42, 30, 5, (1024, 1024))
cfg = PipelineConfig()

fused = fuse(scene.vis, normalize_dsm(scene.dsm), cfg.fusion)
print("fusion weight on VIS:", cfg.fusion.weight_vis)

sp = slic(fused, scene.dsm, cfg.slic)
print("SLIC: k=%d -> %d superpixels" % (cfg.slic.k, sp.count))

merged = merge_similar(sp, cfg.slic.merge_threshold, cfg.lambda_h)
print("after merging similar neighbours:", merged.count)
print("largest merged superpixel: %d px" % merged.size.max())

# the same thing end to end, keeping the intermediate products
trace = find_candidates(scene.vis, scene.dsm, cfg)
print("DBSCAN clusters:", trace.clusters.n_clusters)
print("ground estimate: %.2f m" % trace.ground)
print("regions in the height band:", len(trace.height_regions))
print("regions after the area filter:", len(trace.area_regions))
print("candidate boxes:", len(trace.boxes))

heights = [r.avg_height for r in trace.height_regions]
print("region heights: %.2f .. %.2f m" % (min(heights), max(heights)))

m = match(trace.boxes, scene.gts["scene"], 0.5)
print("vs ground truth at IoU 0.5: tp=%d fp=%d fn=%d" % (m.tp, m.fp, m.fn))
