"""
Build a synthetic parking-lot scene and write it to disk.

The scene is what every other demo works on: a 1024x1024 VIS image, a
co-registered DSM with vehicles about 1.8 m above the ground and a few
tall buildings, a ground-truth file, and the output of a "stub" detector
that only reports half of the vehicles (standing in for a detector that
was fine-tuned elsewhere).

    python3 demos/01_synthetic_scene.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from autolabel import generate_synthetic, save_dsm, save_vis, stub_detect
from autolabel.evaluation import save_detections, save_ground_truth

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

scene = generate_synthetic(seed=42, n_vehicles=30, n_buildings=5, dims=(1024, 1024))
vehicles = scene.gts["scene"]
print("image:", scene.vis.dims, " vehicles:", len(vehicles), " buildings:", len(scene.buildings))

# the DSM is in meters; the ground sits near zero
h = scene.dsm.values
ground = np.median(h)
print("ground %.2f m, max %.1f m" % (ground, h.max()))

c0, r0, c1, r1 = vehicles[0].pixel_extent()
print("first vehicle: %dx%d px, mean height %.2f m" % (c1 - c0 + 1, r1 - r0 + 1, h[r0:r1 + 1, c0:c1 + 1].mean()))

dets = stub_detect(scene.gts, scene.vis.dims, fraction=0.5, seed=42)
print("stub detector found", len(dets["scene"]), "of", len(vehicles))

save_vis(scene.vis, out / "vis.ppm")
save_dsm(scene.dsm, out / "dsm.dsm")
save_ground_truth(scene.gts, out / "gt.txt")
save_detections(dets, out / "detections.txt")
print("wrote", sorted(p.name for p in out.iterdir()))
