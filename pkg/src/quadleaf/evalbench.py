"""Classification metrics, convolution step counts and timing.

Metrics with a zero denominator are reported as ``None`` rather than 0, and
averages skip them (the number skipped is reported alongside).
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, QuadleafError
from .grouping import localize
from .imgcore import PixelImage, decode_image
from .pipeline import FeatureMap, PipelineConfig, detect

__all__ = [
    "ConfusionMatrix",
    "ConvStepParams",
    "EvalResult",
    "BenchResult",
    "f1_score",
    "class_metrics",
    "macro_average",
    "conv_steps",
    "image_label",
    "evaluate_dataset",
    "bench_detect",
    "metrics_table",
]

log = logging.getLogger(__name__)

INT64_MAX = 2**63 - 1
METRIC_NAMES = ("precision", "recall", "f1", "specificity")


class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    def __init__(self, labels: Sequence[str], counts=None):
        self.labels = tuple(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels")
        k = len(self.labels)
        if counts is None:
            self.counts = np.zeros((k, k), dtype=np.int64)
        else:
            self.counts = np.array(counts, dtype=np.int64)
            if self.counts.shape != (k, k):
                raise ValueError(f"counts must be {k}x{k}")
            if (self.counts < 0).any():
                raise ValueError("counts must be non-negative")
        self._pos = {lab: i for i, lab in enumerate(self.labels)}

    @classmethod
    def from_pairs(cls, truths: Iterable[str], preds: Iterable[str], labels: Sequence[str]):
        cm = cls(labels)
        for t, p in zip(truths, preds):
            cm.add(t, p)
        return cm

    def add(self, true: str, pred: str) -> None:
        self.counts[self._pos[true], self._pos[pred]] += 1

    def index(self, label: str) -> int:
        return self._pos[label]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, label: str) -> tuple[int, int, int, int]:
        """``(tp, fp, fn, tn)`` for one class."""
        i = self._pos[label]
        tp = int(self.counts[i, i])
        fp = int(self.counts[:, i].sum()) - tp
        fn = int(self.counts[i, :].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"ConfusionMatrix(labels={self.labels}, total={self.total})"


def _ratio(num: float, den: float) -> Optional[float]:
    return None if den == 0 else num / den


def f1_score(precision: Optional[float], recall: Optional[float]) -> Optional[float]:
    """Harmonic mean of precision and recall; ``None`` if either is absent or both are 0."""
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def class_metrics(cm: ConfusionMatrix, cls: str) -> dict[str, Optional[float]]:
    tp, fp, fn, tn = cm.one_vs_rest(cls)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1_score(precision, recall),
        "specificity": _ratio(tn, tn + fp),
    }


def macro_average(per_class: Mapping[str, Mapping[str, Optional[float]]]) -> dict:
    """Unweighted mean of each metric over classes where it is defined."""
    out: dict = {}
    for name in METRIC_NAMES:
        vals = [m[name] for m in per_class.values() if m.get(name) is not None]
        out[name] = sum(vals) / len(vals) if vals else None
        out[f"{name}_skipped"] = len(per_class) - len(vals)
    return out


# -- convolution cost ---------------------------------------------------------


@dataclass(frozen=True)
class ConvStepParams:
    """Input size ``di`` x ``di`` x ``m``; ``n`` kernels of ``dk`` x ``dk``."""

    di: int
    m: int
    dk: int
    n: int

    def __post_init__(self):
        for name in ("di", "m", "dk", "n"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int) or val < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {val!r}")


def conv_steps(p: ConvStepParams) -> dict[str, int]:
    """Multiply-step counts of a standard and a depthwise-separable convolution.

    Standard: ``n * di^2 * dk^2 * m``. Depthwise-separable: a ``dk`` x ``dk``
    pass per input channel plus ``n`` pointwise 1x1 passes, ``m * di^2 * (dk^2 + n)``.
    Raises ``OverflowError`` past the signed 64-bit range so results stay
    portable to fixed-width consumers.
    """
    traditional = p.n * p.di**2 * p.dk**2 * p.m
    dwsc = p.m * p.di**2 * (p.dk**2 + p.n)
    if traditional > INT64_MAX or dwsc > INT64_MAX:
        raise OverflowError(f"step count for {p} exceeds the signed 64-bit range")
    return {"traditional": traditional, "dwsc": dwsc}


# -- dataset evaluation -------------------------------------------------------


def image_label(
    fmap: FeatureMap,
    img_dims: tuple[int, int],
    healthy_label: str = "healthy",
    mode: str = "faithful",
    collapse: str = "area",
) -> str:
    """Collapse box-level detections to one image label.

    ``area`` picks the disease with the largest total ROI area, ``count`` the
    one with most ROIs. Ties go to the alphabetically first disease.
    """
    report = localize(fmap, img_dims, mode)
    if not report.diseases:
        return healthy_label
    if collapse == "area":
        score = {k: sum((x2 - x1) * (y2 - y1) for y1, x1, y2, x2 in v) for k, v in report.diseases.items()}
    elif collapse == "count":
        score = {k: len(v) for k, v in report.diseases.items()}
    else:
        raise ConfigError(f"unknown collapse rule {collapse!r}")
    return min(score, key=lambda k: (-score[k], k))


@dataclass
class EvalResult:
    confusion: ConfusionMatrix
    per_class: dict[str, dict[str, Optional[float]]]
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def macro(self) -> dict:
        return macro_average(self.per_class)

    def to_dict(self) -> dict:
        return {
            "confusion_matrix": self.confusion.to_dict(),
            "per_class": self.per_class,
            "macro_average": self.macro,
            "evaluated": self.confusion.total,
            "failures": [{"sample": s, "error": e} for s, e in self.failures],
        }


def _load_sample(src) -> PixelImage:
    if isinstance(src, PixelImage):
        return src
    if isinstance(src, (bytes, bytearray)):
        return decode_image(bytes(src))
    return decode_image(Path(src).read_bytes())


def evaluate_dataset(
    samples: Sequence[tuple[Union[PixelImage, str, Path, bytes], str]],
    cfg: Optional[PipelineConfig] = None,
    model=None,
    labels: Optional[Sequence[str]] = None,
    mode: str = "faithful",
    collapse: str = "area",
) -> EvalResult:
    """Run detection on every sample and tabulate image-level predictions.

    The confusion matrix spans the whole class set (``labels``, or healthy
    plus the configured diseases); per-class metrics are reported for the
    classes that occur as true labels. Samples that cannot be read are
    listed in ``failures`` and left out of the matrix.
    """
    cfg = (cfg or PipelineConfig()).validate()
    if not samples:
        raise ConfigError("no samples to evaluate")
    labels = tuple(labels) if labels is not None else (cfg.healthy_label, *cfg.diseases)
    unknown = sorted({t for _, t in samples} - set(labels))
    if unknown:
        raise ConfigError(f"sample label(s) not in the class set: {', '.join(unknown)}")

    cm = ConfusionMatrix(labels)
    failures = []
    for i, (src, truth) in enumerate(samples):
        name = str(src) if isinstance(src, (str, Path)) else f"sample[{i}]"
        try:
            img = _load_sample(src)
        except (QuadleafError, OSError) as exc:
            log.warning("skipping %s: %s", name, exc)
            failures.append((name, str(exc)))
            continue
        fmap, _ = detect(img, cfg, model)
        pred = image_label(fmap, (img.width, img.height), cfg.healthy_label, mode, collapse)
        if pred not in cm.labels:
            raise ConfigError(f"prediction {pred!r} is not in the class set")
        cm.add(truth, pred)
    present = {t for _, t in samples}
    per_class = {lab: class_metrics(cm, lab) for lab in labels if lab in present}
    return EvalResult(cm, per_class, failures)


def metrics_table(per_class: Mapping[str, Mapping[str, Optional[float]]]) -> str:
    """Plain-text table with one row per class."""
    header = ("Disease", "Precision", "Recall/Sensitivity", "F1 Score", "Specificity")
    rows = [
        (name, *("-" if m[k] is None else f"{m[k]:.4f}" for k in METRIC_NAMES))
        for name, m in per_class.items()
    ]
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: " | ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(r) for r in rows)]) + "\n"


# -- timing -------------------------------------------------------------------


@dataclass
class BenchResult:
    times: list[float]
    classifier_invocations: int
    segments_examined: int
    layers: int

    @property
    def min(self) -> float:
        return min(self.times)

    @property
    def median(self) -> float:
        return statistics.median(self.times)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.times)

    def to_dict(self) -> dict:
        return {
            "reps": len(self.times),
            "min_s": self.min,
            "median_s": self.median,
            "mean_s": self.mean,
            "times_s": list(self.times),
            "classifier_invocations": self.classifier_invocations,
            "segments_examined": self.segments_examined,
            "layers": self.layers,
        }


def bench_detect(img: PixelImage, cfg: Optional[PipelineConfig] = None, model=None, reps: int = 5) -> BenchResult:
    """Time ``reps`` serial detection runs after one untimed warm-up."""
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}")
    cfg = (cfg or PipelineConfig()).validate()
    if model is None:
        from .pipeline import make_classifier

        model = make_classifier(cfg.classifier)
    detect(img, cfg, model)
    times, counts = [], set()
    for _ in range(reps):
        t0 = time.perf_counter()
        _, trace = detect(img, cfg, model)
        times.append(time.perf_counter() - t0)
        counts.add((trace.classifier_invocations, trace.total_examined, len(trace)))
    if len(counts) != 1:
        raise RuntimeError(f"detection is not deterministic across reps: {sorted(counts)}")
    (inv, examined, layers) = counts.pop()
    return BenchResult(times, inv, examined, layers)
