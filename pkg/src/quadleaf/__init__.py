"""Localize plant leaf disease with a colour-conditioned quadtree search.

The image is split layer by layer; only segments holding enough leaf green
survive. At a chosen depth the surviving segments are handed to a
classifier, and diseased ones are refined further, first by leaf green and
then by the disease's own colour, before adjacent segments are merged into
bounding boxes.
"""

from .errors import (
    BoundsError,
    ClassifyError,
    ConfigError,
    DecodeError,
    ExternalClassifierError,
    IndivisibleSegment,
    ProtocolError,
    QuadleafError,
    TrainingError,
    UnsupportedFormat,
)
from .imgcore import (
    HsvPixel,
    PixelImage,
    Segment,
    crop,
    decode_image,
    encode_image,
    load_image,
    rgb_to_hsv,
    save_image,
    split_quadrants,
)
from .quadtree import LayerTrace, RecursionParams, run_recursion
from .predicates import (
    BaselineModel,
    ClassifierVerdict,
    ColorRange,
    ExternalClassifier,
    classify,
    color_fraction,
    default_baseline,
    external_classify,
    has_feature,
    train_baseline,
)
from .pipeline import LimitMap, PipelineConfig, detect
from .grouping import DetectionReport, Roi, group_segments, localize
from .evalbench import (
    ConfusionMatrix,
    ConvStepParams,
    bench_detect,
    class_metrics,
    conv_steps,
    evaluate_dataset,
)

__version__ = "0.1.0"
