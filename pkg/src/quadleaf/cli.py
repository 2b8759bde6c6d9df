"""Command-line entry point: ``quadleaf {detect,inspect,eval,bench,train}``.

Settings resolve in three steps, later ones winning: built-in defaults, the
JSON file given with ``--config``, then individual flags. Reports go to
standard output (or ``--output``); logs and diagnostics go to standard error.

Exit codes: 0 success, 2 usage or configuration problem (including
unreadable inputs), 3 classifier failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ClassifyError, ConfigError, QuadleafError
from .evalbench import bench_detect, evaluate_dataset, metrics_table
from .grouping import MODES, DetectionReport, localize
from .imgcore import PixelImage, Segment, load_image, save_image
from .pipeline import PipelineConfig, detect, make_classifier
from .predicates import train_baseline

__all__ = ["main", "build_parser", "annotate", "overlay", "PALETTE", "EXIT_OK", "EXIT_USAGE", "EXIT_CLASSIFIER"]

log = logging.getLogger("quadleaf")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CLASSIFIER = 3

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm")

# assigned to diseases in sorted label order
PALETTE = [
    (255, 0, 0),
    (255, 255, 0),
    (0, 200, 255),
    (255, 0, 255),
    (0, 0, 255),
    (255, 128, 0),
    (255, 255, 255),
    (0, 0, 0),
]
SEGMENT_RGB = (255, 255, 255)


class UsageError(Exception):
    """Bad flag combination or missing path; maps to exit 2."""


# -- drawing ------------------------------------------------------------------


def _outline(px: np.ndarray, box: Segment, rgb, thickness: int = 1) -> None:
    h, w = px.shape[:2]
    x1, y1 = max(box.x1, 0), max(box.y1, 0)
    x2, y2 = min(box.x2, w), min(box.y2, h)
    if x1 >= x2 or y1 >= y2:
        return
    t = max(1, min(thickness, (x2 - x1 + 1) // 2, (y2 - y1 + 1) // 2))
    px[y1 : y1 + t, x1:x2] = rgb
    px[y2 - t : y2, x1:x2] = rgb
    px[y1:y2, x1 : x1 + t] = rgb
    px[y1:y2, x2 - t : x2] = rgb


def disease_colours(diseases: Sequence[str]) -> dict[str, tuple[int, int, int]]:
    return {label: PALETTE[i % len(PALETTE)] for i, label in enumerate(sorted(diseases))}


def annotate(img: PixelImage, report: DetectionReport, diseases: Sequence[str], thickness: int = 2) -> PixelImage:
    """Burn each disease's boxes into a copy of ``img``."""
    px = np.array(img.pixels)
    colours = disease_colours(diseases)
    for label in sorted(report.diseases):
        rgb = colours.get(label, PALETTE[-1])
        for box in report.boxes(label):
            _outline(px, box, rgb, thickness)
    return PixelImage(px)


def overlay(img: PixelImage, segments: Sequence[Segment], dim: float = 0.3) -> PixelImage:
    """Darken everything outside ``segments`` and outline each segment."""
    px = np.array(img.pixels)
    keep = np.zeros(px.shape[:2], dtype=bool)
    for s in segments:
        keep[s.y1 : s.y2, s.x1 : s.x2] = True
    px[~keep] = (px[~keep] * dim).astype(np.uint8)
    for s in segments:
        _outline(px, s, SEGMENT_RGB)
    return PixelImage(px)


# -- config resolution --------------------------------------------------------


def _resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.classifier is not None:
        overrides["classifier"] = args.classifier
    if args.depth_limit is not None:
        overrides["depth_limit"] = args.depth_limit
    if args.confidence is not None:
        overrides["confidence_threshold"] = args.confidence
    if overrides:
        cfg = replace(cfg, **overrides)
    if args.threshold is not None:
        cfg = cfg.with_threshold(args.threshold)
    return cfg.validate()


def _classifier_for(cfg: PipelineConfig):
    labels = [cfg.healthy_label, *cfg.diseases]
    try:
        return make_classifier(cfg.classifier, labels=labels)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load classifier {cfg.classifier!r}: {exc}") from exc


def _read_input(path: str) -> PixelImage:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return load_image(p)


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


# -- subcommands --------------------------------------------------------------


def cmd_detect(args) -> int:
    if args.format in ("image", "both") and not args.annotate:
        raise UsageError(f"--format {args.format} needs --annotate <path>")
    cfg = _resolve_config(args)
    img = _read_input(args.input)
    model = _classifier_for(cfg)
    fmap, trace = detect(img, cfg, model)
    log.info("layers=%d examined=%d classified=%d", len(trace), trace.total_examined, trace.classifier_invocations)
    report = localize(fmap, (img.width, img.height), args.grouping, cfg.digest())
    if args.format in ("report", "both"):
        _emit(report.to_json(), args.output)
    if args.annotate and args.format in ("image", "both"):
        save_image(annotate(img, report, cfg.diseases), args.annotate)
    elif args.annotate:
        log.warning("--annotate ignored with --format report")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _resolve_config(args)
    img = _read_input(args.input)
    model = _classifier_for(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmap, trace = detect(img, cfg, model)
    written = []
    for rec in trace.layers:
        path = out / f"layer_{rec.depth:02d}.png"
        save_image(overlay(img, rec.surviving), path)
        written.append(path.name)
    report = localize(fmap, (img.width, img.height), args.grouping, cfg.digest())
    save_image(annotate(img, report, cfg.diseases), out / "grouped.png")
    written.append("grouped.png")
    doc = {"layers": trace.summary(), "halted_by_size": trace.halted_by_size, "files": written}
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", None)
    return EXIT_OK


def _dataset_samples(root: Path) -> list[tuple[Path, str]]:
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {root}")
    samples = []
    for label_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(label_dir.iterdir()):
            if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
                samples.append((f, label_dir.name))
    if not samples:
        raise UsageError(f"no images under {root}/<label>/")
    return samples


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    samples = _dataset_samples(Path(args.dataset))
    model = _classifier_for(cfg)
    result = evaluate_dataset(samples, cfg, model, mode=args.grouping, collapse=args.collapse)
    for name, err in result.failures:
        print(f"quadleaf: failed to read {name}: {err}", file=sys.stderr)
    if args.table:
        Path(args.table).write_text(metrics_table(result.per_class))
    doc = result.to_dict()
    doc["config_digest"] = cfg.digest()
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise UsageError(f"--reps must be >= 1, got {args.reps}")
    cfg = _resolve_config(args)
    if args.input:
        img = _read_input(args.input)
    else:
        from .synthetic import make_leaf

        img = make_leaf(size=args.size, label="late_blight", seed=args.seed).image
    model = _classifier_for(cfg)
    res = bench_detect(img, cfg, model, args.reps)
    doc = res.to_dict()
    doc["image"] = {"width": img.width, "height": img.height}
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.output)
    return EXIT_OK


def cmd_train(args) -> int:
    if bool(args.dataset) == bool(args.synthetic):
        raise UsageError("train needs exactly one of --dataset or --synthetic")
    if args.dataset:
        # each file is one patch labelled by its directory
        patches = [(load_image(p), label) for p, label in _dataset_samples(Path(args.dataset))]
    else:
        from .synthetic import make_suite, training_patches

        leaves = make_suite(args.synthetic, seed=args.seed, labels=("late_blight", "early_blight", "healthy"),
                            lesion_radius=(6, 10))
        patches = training_patches(leaves, args.depth)
    model = train_baseline(patches)
    model.save(args.out)
    counts = {}
    for _, label in patches:
        counts[label] = counts.get(label, 0) + 1
    _emit(json.dumps({"model": str(args.out), "patches": dict(sorted(counts.items()))}, indent=2) + "\n", None)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--classifier", help="baseline, baseline:<model.json> or external:<command>")
    p.add_argument("--depth-limit", type=int, help="maximum number of layers")
    p.add_argument("--threshold", type=int, help="classification depth B")
    p.add_argument("--confidence", type=float, help="minimum verdict confidence to accept a disease")
    p.add_argument("--log-level", help="overrides QUADLEAF_LOG (DEBUG, INFO, WARNING, ...)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadleaf", description="Localize leaf disease with a conditioned quadtree.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect and localize disease in one image")
    _common(p)
    p.add_argument("--input", required=True, help="PNG or binary PPM image")
    p.add_argument("--output", help="write the report here instead of stdout")
    p.add_argument("--annotate", help="write an annotated copy of the input here (.png/.ppm)")
    p.add_argument("--format", choices=("report", "image", "both"), default=None,
                   help="default: both with --annotate, report otherwise")
    p.add_argument("--grouping", choices=MODES, default="faithful")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("inspect", help="write one overlay per layer plus the grouped result")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grouping", choices=MODES, default="faithful")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("eval", help="image-level metrics over <root>/<label>/<images>")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", help="write the JSON metrics here instead of stdout")
    p.add_argument("--table", help="also write a plain-text metrics table here")
    p.add_argument("--grouping", choices=MODES, default="faithful")
    p.add_argument("--collapse", choices=("area", "count"), default="area",
                   help="how boxes become an image label")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time repeated detection runs")
    _common(p)
    p.add_argument("--input", help="image to time (default: a synthetic leaf)")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--size", type=int, default=1024, help="synthetic leaf size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="fit a baseline nearest-centroid model")
    p.add_argument("--dataset", help="<root>/<label>/<patch images>")
    p.add_argument("--synthetic", type=int, help="train on this many synthetic leaves instead")
    p.add_argument("--depth", type=int, default=2, help="cell depth for synthetic patches")
    p.add_argument("--seed", type=int, default=99)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--log-level")
    p.set_defaults(func=cmd_train)
    return parser


def _setup_logging(flag: Optional[str]) -> None:
    name = (flag or os.environ.get("QUADLEAF_LOG") or "WARNING").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(getattr(args, "log_level", None))
    if getattr(args, "format", "unset") is None:
        args.format = "both" if args.annotate else "report"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"quadleaf: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ClassifyError as exc:
        print(f"quadleaf: classifier failure: {exc}", file=sys.stderr)
        return EXIT_CLASSIFIER
    except (QuadleafError, OSError) as exc:
        print(f"quadleaf: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
