"""
Score detections against ground truth: matching, P/R/F1, PR curve and AP.

Uses the stub detector output, which has perfect precision but only half
the recall, so the numbers are easy to check by hand.
"""

from autolabel import average_precision, evaluate, generate_synthetic, pr_curve, prf1, stub_detect
from autolabel.evaluation import write_pr_csv

scene = generate_synthetic(42, 30, 5, (1024, 1024))
dets = stub_detect(scene.gts, scene.vis.dims, fraction=0.5, seed=42)

m = evaluate(dets, scene.gts, iou_thr=0.5)
p, r, f1 = prf1(m)
print("tp=%d fp=%d fn=%d" % (m.tp, m.fp, m.fn))
print("P=%.3f R=%.3f F1=%.3f" % (p, r, f1))

curve = pr_curve(dets["scene"], scene.gts["scene"], 0.5)
print("PR points:", len(curve))
print("AP = %.4f" % average_precision(curve))
print(write_pr_csv(curve)[:200])

# a loose box still counts at IoU 0.5 but not at 0.9
g = scene.gts["scene"][0]
loose = g.__class__(g.x_c + 2, g.y_c + 3, g.w, g.h, score=0.9)
for thr in (0.5, 0.9):
    print("shifted box at IoU %.1f -> tp=%d" % (thr, evaluate([loose], [g], iou_thr=thr).tp))
