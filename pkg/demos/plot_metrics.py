"""
Image-level metrics
===================

First recompute F1 from a published precision/recall table, then score the
detector on a labelled synthetic set. Boxes become one label per image by
total box area.
"""

from quadleaf import LimitMap, PipelineConfig, train_baseline
from quadleaf.evalbench import evaluate_dataset, f1_score, metrics_table
from quadleaf.synthetic import make_suite, training_patches

published = {
    "PLB": (0.9664, 0.725, 0.8288),
    "PEB": (0.7869, 0.8421, 0.8136),
    "TLB": (0.843, 0.8718, 0.8571),
    "TEB": (0.642, 0.9231, 0.7579),
}
print("class  precision  recall   F1 (printed)  F1 (recomputed)")
for name, (p, r, f1) in published.items():
    print(f"{name:<5}  {p:>9.4f}  {r:>6.4f}  {f1:>12.4f}  {f1_score(p, r):>15.4f}")

# the detector on 45 synthetic leaves, three classes
classes = ("late_blight", "early_blight", "healthy")
model = train_baseline(training_patches(make_suite(60, seed=99, labels=classes, lesion_radius=(6, 10)), 2))
cfg = PipelineConfig(depth_limit=7, limit_map=LimitMap(2, {"late_blight": 1, "early_blight": 3}))
suite = make_suite(45, seed=3, labels=classes)
result = evaluate_dataset([(leaf.image, leaf.label) for leaf in suite], cfg, model)

print("\nconfusion matrix (rows true, columns predicted):", result.confusion.labels)
print(result.confusion.counts)
print()
print(metrics_table(result.per_class))
