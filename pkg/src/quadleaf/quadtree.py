"""Layer-by-layer driver for the conditioned quadtree search.

The engine owns only the loop: depth counting, the depth limit and the
pixel-size stop. Everything that happens inside a layer (splitting,
predicate checks, classification) belongs to a caller-supplied layer
processor, which receives the pipeline state and the current depth and
returns a :class:`LayerOutcome`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .errors import ConfigError
from .imgcore import PixelImage, Segment

__all__ = ["RecursionParams", "LayerOutcome", "LayerRecord", "LayerTrace", "run_recursion"]


@dataclass(frozen=True)
class RecursionParams:
    depth_limit: int
    depth_count: int = 0
    depth_check: int = 0

    def __post_init__(self):
        if self.depth_limit < 0:
            raise ConfigError(f"depth_limit must be >= 0, got {self.depth_limit}")
        if self.depth_check not in (0, 1):
            raise ConfigError("depth_check must be 0 or 1")
        if not 0 <= self.depth_count <= self.depth_limit:
            raise ConfigError("depth_count must lie in [0, depth_limit]")


@dataclass
class LayerOutcome:
    """What a layer processor hands back to the engine."""

    state: Any
    examined: Sequence[Segment] = ()
    surviving: Sequence[Segment] = ()
    classified: int = 0


@dataclass(frozen=True)
class LayerRecord:
    depth: int
    examined: tuple[Segment, ...]
    surviving: tuple[Segment, ...]
    # smallest segment dimensions anywhere in the tree at this depth
    seg_width: int
    seg_height: int
    classified: int = 0

    @property
    def n_examined(self) -> int:
        return len(self.examined)

    @property
    def n_surviving(self) -> int:
        return len(self.surviving)


@dataclass
class LayerTrace:
    layers: list[LayerRecord] = field(default_factory=list)
    halted_by_size: bool = False

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def total_examined(self) -> int:
        return sum(rec.n_examined for rec in self.layers)

    @property
    def classifier_invocations(self) -> int:
        return sum(rec.classified for rec in self.layers)

    @property
    def max_surviving(self) -> int:
        return max((rec.n_surviving for rec in self.layers), default=0)

    def summary(self) -> list[dict]:
        return [
            {
                "depth": rec.depth,
                "examined": rec.n_examined,
                "surviving": rec.n_surviving,
                "segment_width": rec.seg_width,
                "segment_height": rec.seg_height,
                "classified": rec.classified,
            }
            for rec in self.layers
        ]


LayerProcessor = Callable[[Any, int], LayerOutcome]


def run_recursion(
    img: PixelImage,
    params: RecursionParams,
    layer_processor: LayerProcessor,
    state: Any = None,
) -> tuple[Any, LayerTrace]:
    """Run ``layer_processor`` once per layer until a stop condition fires.

    A layer runs while the stop flag is clear and the depth count has not
    reached ``depth_limit``. After each layer the count increments, and the
    stop flag trips as soon as any segment at that depth is one pixel wide or
    tall. The check is global: a single sliver halts the whole search.
    """
    if params.depth_count != 0 or params.depth_check != 0:
        raise ConfigError("recursion must start at depth_count=0, depth_check=0")

    trace = LayerTrace()
    depth_count = params.depth_count
    depth_check = params.depth_check
    while depth_check == 0 and depth_count != params.depth_limit:
        outcome = layer_processor(state, depth_count)
        state = outcome.state
        # floor halving: the narrowest segment at depth d is W // 2**d wide
        seg_w = max(img.width >> depth_count, 1)
        seg_h = max(img.height >> depth_count, 1)
        trace.layers.append(
            LayerRecord(
                depth=depth_count,
                examined=tuple(outcome.examined),
                surviving=tuple(outcome.surviving),
                seg_width=seg_w,
                seg_height=seg_h,
                classified=outcome.classified,
            )
        )
        depth_count += 1
        if seg_w == 1 or seg_h == 1 or any(
            s.width == 1 or s.height == 1 for s in outcome.surviving
        ):
            depth_check = 1
            trace.halted_by_size = True
    return state, trace
