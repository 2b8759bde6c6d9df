"""
Plugging in an external classifier
==================================

Any program that reads the patch manifest and prints verdicts as JSON can
replace the baseline model. This one calls a patch late blight when more
than 5% of its pixels are dark brown.
"""

import sys
import tempfile
import textwrap
from pathlib import Path

from quadleaf import LimitMap, PipelineConfig, detect, localize
from quadleaf.pipeline import make_classifier
from quadleaf.synthetic import make_leaf

SCRIPT = textwrap.dedent(
    """
    import json, sys
    import numpy as np
    from PIL import Image

    manifest = json.load(open(sys.argv[1]))
    out = []
    for p in manifest["patches"]:
        px = np.asarray(Image.open(p["png_path"]).convert("RGB")).astype(int)
        r, g, b = px[..., 0], px[..., 1], px[..., 2]
        brown = ((r > g + 20) & (g > b) & (r < 160)).mean()
        label = "late_blight" if brown > 0.05 else "healthy"
        out.append({"id": p["id"], "label": label, "confidence": 0.9})
    print(json.dumps(out))
    """
)

with tempfile.TemporaryDirectory() as tmp:
    script = Path(tmp) / "brown_counter.py"
    script.write_text(SCRIPT)
    cfg = PipelineConfig(
        depth_limit=7,
        limit_map=LimitMap(2, {"late_blight": 1, "early_blight": 3}),
        classifier=f"external:{sys.executable} {script}",
    )
    model = make_classifier(cfg.classifier, labels=["healthy", *cfg.diseases])
    leaf = make_leaf(256, "late_blight", seed=11)
    fmap, trace = detect(leaf.image, cfg, model)
    print(f"external program saw {trace.classifier_invocations} patches in one call")
    print(localize(fmap, (256, 256)).to_json())
    print("planted lesions [y1, x1, y2, x2]:", [[b.y1, b.x1, b.y2, b.x2] for b in leaf.lesion_boxes])
