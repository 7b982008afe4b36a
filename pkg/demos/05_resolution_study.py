"""
How much does coarser imagery hurt?  Degrade VIS and DSM by 1x, 2x and 4x
(downsample then upsample back), rerun the full pipeline and compare F1.
"""

from autolabel import PipelineConfig, generate_synthetic, resolution_study

scene = generate_synthetic(42, 30, 5, (1024, 1024))
cfg = PipelineConfig(seed=42, tau=0.6)

rows = resolution_study(scene.vis, scene.dsm, scene.gts, [1, 2, 4], cfg)
print("factor  precision  recall  f1")
for factor, p, r, f1 in rows:
    print("%5.0fx  %9.3f  %6.3f  %.3f" % (factor, p, r, f1))

loss = rows[0][3] - rows[-1][3]
print("F1 loss at 4x: %.3f (%.0f%%)" % (loss, 100 * loss / rows[0][3]))
