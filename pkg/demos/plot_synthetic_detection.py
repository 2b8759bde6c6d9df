"""
Finding lesions on a synthetic leaf
===================================

Generate a leaf with planted late-blight lesions, train the nearest-centroid
baseline on other synthetic leaves, and follow the search layer by layer.
Overlays and the annotated result are written to ``demo_out/``.
"""

import sys
from pathlib import Path

import numpy as np

from quadleaf import LimitMap, PipelineConfig, detect, localize, save_image, train_baseline
from quadleaf.cli import annotate, overlay
from quadleaf.synthetic import make_leaf, make_suite, training_patches

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# the leaf we will search; its lesion mask is the ground truth
leaf = make_leaf(256, "late_blight", seed=7)
print(f"leaf covers {leaf.leaf_fraction:.0%} of the frame, {len(leaf.lesion_boxes)} lesion(s) planted")

# train on the depth-2 cells of 60 other leaves
train = make_suite(60, seed=99, labels=("late_blight", "early_blight", "healthy"), lesion_radius=(6, 10))
model = train_baseline(training_patches(train, 2))
print(model)

# classify at depth 2, refine late blight by green to depth 3 and by colour after
cfg = PipelineConfig(depth_limit=7, limit_map=LimitMap(2, {"late_blight": 1, "early_blight": 3}))
fmap, trace = detect(leaf.image, cfg, model)

print("\ndepth  segment     examined  surviving  classified")
for row in trace.summary():
    size = f"{row['segment_width']}x{row['segment_height']}"
    print(f"{row['depth']:>5}  {size:<10}  {row['examined']:>8}  {row['surviving']:>9}  {row['classified']:>10}")
    rec = trace.layers[row["depth"]]
    save_image(overlay(leaf.image, rec.surviving), out / f"layer_{row['depth']:02d}.png")

report = localize(fmap, (leaf.image.width, leaf.image.height), "faithful", cfg.digest())
print("\n" + report.to_json())

# how much of the planted lesion area do the boxes cover?
covered = np.zeros_like(leaf.lesion_mask)
for label in report.diseases:
    for box in report.boxes(label):
        covered[box.y1 : box.y2, box.x1 : box.x2] = True
share = (covered & leaf.lesion_mask).sum() / leaf.lesion_mask.sum()
print(f"boxes cover {share:.1%} of lesion pixels")

save_image(annotate(leaf.image, report, cfg.diseases), out / "annotated.png")
print(f"overlays written to {out}/")
