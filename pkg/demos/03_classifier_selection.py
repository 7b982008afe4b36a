"""
Train the linear patch classifier and use it to pick confident candidates.

The reference set comes from a second synthetic scene (vehicle crops plus
ground/building crops).  Each candidate box from the segmentation branch is
cut out as a 60x60 patch, scored, and kept if the score reaches tau.
"""

import numpy as np

from autolabel import (
    Candidate,
    Hbb,
    PipelineConfig,
    extract_patch,
    generate_synthetic,
    select_high_quality,
    train_baseline,
)
from autolabel.pipeline import build_reference_set, find_candidates

cfg = PipelineConfig(tau=0.6)
reference = build_reference_set(cfg)
print("reference samples:", len(reference), " vehicles:", sum(s.label for s in reference))

clf = train_baseline(reference, lr=cfg.lr, epochs=cfg.epochs, seed=cfg.classify_seed)
print("loss: %.4f -> %.4f over %d epochs" % (clf.loss_history[0], clf.loss_history[-1], len(clf.loss_history) - 1))
print("weights:", clf.weights.shape[0])

scene = generate_synthetic(42, 30, 5, (1024, 1024))
boxes = find_candidates(scene.vis, scene.dsm, cfg).boxes
cands = [Candidate(b, extract_patch(scene.vis, b, "scene", f"scene:{i}")) for i, b in enumerate(boxes)]

sel = select_high_quality(cands, clf, cfg.tau)
scores = np.array([c.box.score for c in sel.selected + sel.rejected])
print("candidates:", len(cands), " selected:", len(sel.selected), " rejected:", len(sel.rejected))
print("score range: %.3f .. %.3f" % (scores.min(), scores.max()))

# a patch of plain grass should score low
grass = extract_patch(scene.vis, Hbb(20, 20, 20, 50), "scene")
print("grass patch score: %.3f" % clf.score(grass))
