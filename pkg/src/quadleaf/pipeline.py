"""Detection pipeline: green pruning, classifier gating, per-disease refinement.

Layer ``d`` of the search always examines segments of quadtree depth ``d``:

* ``d <= B``: split the green frontier (at ``d = 0`` the frontier is the
  whole image) and keep children that pass the base-green predicate. At
  ``d = B`` the surviving green segments are cropped and classified; diseased
  verdicts above the confidence threshold seed that disease's segment list.
* ``B < d <= limit[k]``: disease ``k`` segments are split and the children
  filtered by base green.
* ``d > limit[k]``: disease ``k`` segments are split and the children
  filtered by the disease's own colour range.

Segments that are one pixel wide or tall cannot split and are carried
forward as they are.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Union

from .errors import ClassifyError, ConfigError
from .imgcore import PixelImage, Segment, crop, root_segment, split_quadrants
from .predicates import (
    DEFAULT_BASE_GREEN,
    DEFAULT_DISEASE_RANGES,
    BaselineModel,
    ColorRange,
    ExternalClassifier,
    HsvIndex,
    default_baseline,
)
from .quadtree import LayerOutcome, LayerTrace, RecursionParams, run_recursion

__all__ = [
    "BASE_COLOUR",
    "FeatureMap",
    "LimitMap",
    "PipelineConfig",
    "DetectionState",
    "detect",
    "base_colour_layer",
    "disease_feature_layer",
    "make_classifier",
    "CONFIG_VERSION",
]

BASE_COLOUR = "base_colour"
CONFIG_VERSION = 1

FeatureMap = dict[str, list[Segment]]


@dataclass(frozen=True)
class LimitMap:
    """Classification depth ``B`` and per-disease offsets ``x_k``.

    Disease ``k`` is refined by base green down to depth ``B + x_k`` and by
    its own colour below that.
    """

    base_colour_threshold: int = 0
    offsets: Mapping[str, int] = field(
        default_factory=lambda: {"late_blight": 1, "early_blight": 3}
    )

    def limit(self, feature: str) -> int:
        return self.base_colour_threshold + self.offsets[feature]

    def limits(self) -> dict[str, int]:
        return {k: self.limit(k) for k in sorted(self.offsets)}


@dataclass(frozen=True)
class PipelineConfig:
    depth_limit: int = 8
    limit_map: LimitMap = field(default_factory=LimitMap)
    base_green: ColorRange = DEFAULT_BASE_GREEN
    disease_ranges: Mapping[str, ColorRange] = field(
        default_factory=lambda: dict(DEFAULT_DISEASE_RANGES)
    )
    classifier: str = "baseline"
    confidence_threshold: float = 0.5
    healthy_label: str = "healthy"
    skip_green_refinement: bool = False

    @property
    def diseases(self) -> list[str]:
        return sorted(self.disease_ranges)

    def validate(self) -> "PipelineConfig":
        lm = self.limit_map
        if self.depth_limit < 0:
            raise ConfigError(f"depth_limit must be >= 0, got {self.depth_limit}")
        if lm.base_colour_threshold < 0:
            raise ConfigError("base_colour_threshold must be >= 0")
        if set(self.disease_ranges) != set(lm.offsets):
            raise ConfigError(
                "disease colour ranges and depth limits name different diseases: "
                f"{sorted(self.disease_ranges)} vs {sorted(lm.offsets)}"
            )
        if self.healthy_label in self.disease_ranges or BASE_COLOUR in self.disease_ranges:
            raise ConfigError("disease labels may not reuse the healthy or base colour label")
        for name, off in lm.offsets.items():
            if off < 0:
                raise ConfigError(f"limit offset for {name!r} must be >= 0")
            if lm.limit(name) >= self.depth_limit:
                raise ConfigError(
                    f"limit for {name!r} is B+{off} = {lm.limit(name)}, "
                    f"which must stay below depth_limit {self.depth_limit}"
                )
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError("confidence_threshold must lie in [0, 1]")
        return self

    def with_threshold(self, b: int) -> "PipelineConfig":
        """Copy with a different classification depth, offsets unchanged."""
        return replace(self, limit_map=replace(self.limit_map, base_colour_threshold=b))

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "depth_limit": self.depth_limit,
            "base_colour_threshold": self.limit_map.base_colour_threshold,
            "limit_offsets": dict(sorted(self.limit_map.offsets.items())),
            "base_green": self.base_green.to_dict(),
            "disease_ranges": {k: self.disease_ranges[k].to_dict() for k in self.diseases},
            "classifier": self.classifier,
            "confidence_threshold": self.confidence_threshold,
            "healthy_label": self.healthy_label,
            "skip_green_refinement": self.skip_green_refinement,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        base = cls()
        try:
            lm = LimitMap(
                int(d.pop("base_colour_threshold", base.limit_map.base_colour_threshold)),
                {k: int(v) for k, v in d.pop("limit_offsets", base.limit_map.offsets).items()},
            )
            green = d.pop("base_green", None)
            ranges = d.pop("disease_ranges", None)
            cfg = cls(
                depth_limit=int(d.pop("depth_limit", base.depth_limit)),
                limit_map=lm,
                base_green=ColorRange.from_dict(green) if green else base.base_green,
                disease_ranges=(
                    {k: ColorRange.from_dict(v) for k, v in ranges.items()}
                    if ranges is not None
                    else dict(base.disease_ranges)
                ),
                classifier=str(d.pop("classifier", base.classifier)),
                confidence_threshold=float(d.pop("confidence_threshold", base.confidence_threshold)),
                healthy_label=str(d.pop("healthy_label", base.healthy_label)),
                skip_green_refinement=bool(d.pop("skip_green_refinement", False)),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        if d:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(d))}")
        return cfg.validate()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def make_classifier(spec: str, labels=None):
    """Build a classifier from ``baseline``, ``baseline:<model.json>`` or
    ``external:<command>``."""
    kind, _, arg = spec.partition(":")
    if kind == "baseline":
        return BaselineModel.load(arg) if arg else default_baseline()
    if kind == "external":
        if not arg:
            raise ConfigError("external classifier needs a command")
        return ExternalClassifier(arg, labels=labels)
    raise ConfigError(f"unknown classifier spec {spec!r}")


@dataclass
class DetectionState:
    image: PixelImage
    index: HsvIndex
    config: PipelineConfig
    model: object
    features: FeatureMap = field(default_factory=dict)
    # per-layer scratch, reset by the layer processor
    examined: list[Segment] = field(default_factory=list)
    classified: int = 0

    def frontier(self) -> list[Segment]:
        out: list[Segment] = []
        for label in sorted(self.features):
            out.extend(self.features[label])
        return out


def _split_all(segs: list[Segment]) -> tuple[list[Segment], list[Segment]]:
    children, frozen = [], []
    for seg in segs:
        if seg.is_divisible():
            children.extend(split_quadrants(seg))
        else:
            frozen.append(seg)
    return children, frozen


def _sorted(segs) -> list[Segment]:
    return sorted(segs, key=lambda s: s.sort_key)


def _classify_frontier(state: DetectionState, frontier: list[Segment]) -> None:
    cfg = state.config
    if not frontier:
        return
    verdicts = state.model.classify_many([crop(state.image, s) for s in frontier])
    if len(verdicts) != len(frontier):
        raise ClassifyError(f"classifier returned {len(verdicts)} verdicts for {len(frontier)} patches")
    state.classified += len(frontier)
    for seg, verdict in zip(frontier, verdicts):
        if verdict.label == cfg.healthy_label or verdict.confidence < cfg.confidence_threshold:
            continue
        if verdict.label not in cfg.disease_ranges:
            raise ClassifyError(f"classifier returned unconfigured label {verdict.label!r}")
        state.features.setdefault(verdict.label, []).append(seg)
    for label in cfg.diseases:
        if label in state.features:
            state.features[label] = _sorted(state.features[label])


def base_colour_layer(state: DetectionState, depth: int) -> DetectionState:
    cfg = state.config
    b = cfg.limit_map.base_colour_threshold
    fm = state.features
    green = cfg.base_green
    if depth <= b:
        if depth == 0:
            candidates = [root_segment(state.image)]
        else:
            children, frozen = _split_all(fm.get(BASE_COLOUR, []))
            candidates = children + frozen
        state.examined.extend(candidates)
        frontier = _sorted(s for s in candidates if state.index.has_feature(s, green))
        if depth == b:
            _classify_frontier(state, frontier)
            frontier = []
        fm[BASE_COLOUR] = frontier
        return state

    for label in cfg.diseases:
        if label not in fm or depth > cfg.limit_map.limit(label):
            continue
        children, frozen = _split_all(fm[label])
        state.examined.extend(children + frozen)
        if not cfg.skip_green_refinement:
            children = [c for c in children if state.index.has_feature(c, green)]
        fm[label] = _sorted(children + frozen)
    return state


def disease_feature_layer(state: DetectionState, depth: int) -> DetectionState:
    cfg = state.config
    fm = state.features
    for label in cfg.diseases:
        if label not in fm or depth <= cfg.limit_map.limit(label):
            continue
        rng = cfg.disease_ranges[label]
        children, frozen = _split_all(fm[label])
        state.examined.extend(children + frozen)
        fm[label] = _sorted([c for c in children if state.index.has_feature(c, rng)] + frozen)
    return state


def _process_layer(state: DetectionState, depth: int) -> LayerOutcome:
    state.examined = []
    state.classified = 0
    base_colour_layer(state, depth)
    disease_feature_layer(state, depth)
    return LayerOutcome(
        state=state,
        examined=tuple(state.examined),
        surviving=tuple(state.frontier()),
        classified=state.classified,
    )


def detect(
    img: PixelImage,
    cfg: Optional[PipelineConfig] = None,
    model=None,
) -> tuple[FeatureMap, LayerTrace]:
    """Run the full search on one image.

    Returns the surviving segments per disease (empty diseases omitted) and
    the per-layer trace.
    """
    cfg = (cfg or PipelineConfig()).validate()
    if model is None:
        model = make_classifier(cfg.classifier)
    labels = getattr(model, "labels", None)
    if labels is not None:
        unknown = sorted(set(labels) - set(cfg.disease_ranges) - {cfg.healthy_label})
        if unknown:
            raise ConfigError(f"classifier labels {unknown} have no colour range or limit")
    state = DetectionState(image=img, index=HsvIndex(img), config=cfg, model=model)
    state, trace = run_recursion(img, RecursionParams(cfg.depth_limit), _process_layer, state)
    fmap = {
        label: list(segs)
        for label, segs in sorted(state.features.items())
        if label != BASE_COLOUR and segs
    }
    return fmap, trace
