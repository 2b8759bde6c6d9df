"""Colour-range predicates and segment classifiers.

Two routes compute the in-range fraction of a segment:

* :func:`color_fraction` converts the cropped pixels on the fly. It is the
  reference route and is what the tests treat as ground truth.
* :class:`HsvIndex` converts the whole image once and answers per-segment
  queries from summed-area tables in O(1). The pipeline uses this one.

Classifiers are duck-typed: anything with ``classify_many(patches)``
returning a list of :class:`ClassifierVerdict` (and, optionally, a
``labels`` tuple) can gate segments.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence, Union

import numpy as np

from .errors import (
    BoundsError,
    ClassifyError,
    ExternalClassifierError,
    ProtocolError,
    TrainingError,
)
from .imgcore import PixelImage, Segment, encode_image, hsv_planes

__all__ = [
    "ColorRange",
    "ClassifierVerdict",
    "Classifier",
    "BaselineModel",
    "ExternalClassifier",
    "HsvIndex",
    "DEFAULT_BASE_GREEN",
    "DEFAULT_DISEASE_RANGES",
    "color_fraction",
    "has_feature",
    "patch_features",
    "patch_features_many",
    "train_baseline",
    "classify",
    "external_classify",
    "default_baseline",
]


@dataclass(frozen=True)
class ColorRange:
    """A box in HSV space plus the pixel fraction needed to count as present.

    ``h_lo > h_hi`` describes a hue interval that wraps through 0 degrees.
    """

    h_lo: float
    h_hi: float
    s_min: float = 0.0
    v_min: float = 0.0
    v_max: float = 1.0
    min_fraction: float = 0.1

    def __post_init__(self):
        for name in ("h_lo", "h_hi"):
            val = getattr(self, name)
            if not 0.0 <= val < 360.0:
                raise ValueError(f"{name} must lie in [0, 360), got {val}")
        for name in ("s_min", "v_min", "v_max", "min_fraction"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if self.v_min > self.v_max:
            raise ValueError("v_min exceeds v_max")

    def contains(self, h, s, v):
        """Elementwise membership test; works on scalars and arrays."""
        if self.h_lo <= self.h_hi:
            hue_ok = (h >= self.h_lo) & (h <= self.h_hi)
        else:
            hue_ok = (h >= self.h_lo) | (h <= self.h_hi)
        return hue_ok & (s >= self.s_min) & (v >= self.v_min) & (v <= self.v_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ColorRange":
        return cls(**d)


# Degrees throughout. Leaf green spans roughly yellow-green to blue-green.
DEFAULT_BASE_GREEN = ColorRange(h_lo=70.0, h_hi=170.0, s_min=0.25, v_min=0.20, min_fraction=0.10)

# Starting points for synthetic and lab imagery, not calibrated field values.
DEFAULT_DISEASE_RANGES = {
    # dark brown necrosis
    "late_blight": ColorRange(h_lo=10.0, h_hi=30.0, s_min=0.25, v_min=0.05, v_max=0.55, min_fraction=0.05),
    # brown lesion with a yellow halo
    "early_blight": ColorRange(h_lo=20.0, h_hi=45.0, s_min=0.25, v_min=0.30, v_max=0.80, min_fraction=0.05),
}


def _check_bounds(img: PixelImage, seg: Segment) -> None:
    if not seg.fits(img.width, img.height):
        raise BoundsError(f"{seg} outside {img.width}x{img.height} image")


def color_fraction(img: PixelImage, seg: Segment, rng: ColorRange) -> float:
    """Fraction of pixels in ``seg`` whose HSV value lies inside ``rng``."""
    _check_bounds(img, seg)
    h, s, v = hsv_planes(img.pixels[seg.y1 : seg.y2, seg.x1 : seg.x2])
    return float(np.count_nonzero(rng.contains(h, s, v))) / seg.area


def has_feature(img: PixelImage, seg: Segment, rng: ColorRange) -> bool:
    # inclusive boundary
    return color_fraction(img, seg, rng) >= rng.min_fraction


class HsvIndex:
    """Whole-image HSV planes plus lazily built summed-area tables per range."""

    def __init__(self, img: PixelImage):
        self.width = img.width
        self.height = img.height
        self.h, self.s, self.v = hsv_planes(img.pixels)
        self._tables: dict[ColorRange, np.ndarray] = {}

    def table(self, rng: ColorRange) -> np.ndarray:
        tab = self._tables.get(rng)
        if tab is None:
            mask = rng.contains(self.h, self.s, self.v)
            tab = np.zeros((self.height + 1, self.width + 1), dtype=np.int64)
            np.cumsum(np.cumsum(mask, axis=0, dtype=np.int64), axis=1, out=tab[1:, 1:])
            self._tables[rng] = tab
        return tab

    def count(self, seg: Segment, rng: ColorRange) -> int:
        if not seg.fits(self.width, self.height):
            raise BoundsError(f"{seg} outside {self.width}x{self.height} image")
        t = self.table(rng)
        return int(t[seg.y2, seg.x2] - t[seg.y1, seg.x2] - t[seg.y2, seg.x1] + t[seg.y1, seg.x1])

    def fraction(self, seg: Segment, rng: ColorRange) -> float:
        return self.count(seg, rng) / seg.area

    def has_feature(self, seg: Segment, rng: ColorRange) -> bool:
        # integer form of count / area >= min_fraction, same float semantics
        return self.count(seg, rng) / seg.area >= rng.min_fraction


# -- classifiers ------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierVerdict:
    label: str
    confidence: float

    def __post_init__(self):
        if not isinstance(self.confidence, (int, float)) or not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence!r}")


class Classifier(Protocol):
    labels: tuple[str, ...]

    def classify_many(self, patches: Sequence[PixelImage]) -> list[ClassifierVerdict]: ...


# pixels below these are achromatic; their hue carries no information
IN_GAMUT_S = 0.15
IN_GAMUT_V = 0.15
HUE_BINS = 12
FEATURE_SIZE = 3 + HUE_BINS


def _patch_array(patch) -> np.ndarray:
    arr = patch.pixels if isinstance(patch, PixelImage) else np.asarray(patch)
    if arr.ndim != 3 or arr.shape[-1] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ClassifyError(f"cannot classify an empty or malformed patch of shape {arr.shape}")
    return arr


def patch_features(patch) -> np.ndarray:
    """Mean HSV (hue as a circular mean, scaled to [0,1)) followed by a
    12-bin hue histogram, both over in-gamut pixels.

    A patch with no chromatic pixel falls back to the plain mean and a flat
    histogram.
    """
    return _stack_features(_patch_array(patch)[None])[0]


def _stack_features(stack: np.ndarray) -> np.ndarray:
    """:func:`patch_features` for an ``(n, h, w, 3)`` stack of equal-sized patches."""
    n = stack.shape[0]
    h, s, v = (a.reshape(n, -1) for a in hsv_planes(stack))
    keep = (s >= IN_GAMUT_S) & (v >= IN_GAMUT_V)
    count = keep.sum(axis=1)
    achromatic = count == 0
    # patches without chromatic pixels average over everything instead
    weight = np.where(achromatic[:, None], True, keep).astype(np.float64)
    total = weight.sum(axis=1)

    rad = np.deg2rad(h)
    c = (np.cos(rad) * weight).sum(axis=1) / total
    sn = (np.sin(rad) * weight).sum(axis=1) / total
    mean_h = np.where(
        np.hypot(c, sn) < 1e-12, 0.0, (np.degrees(np.arctan2(sn, c)) % 360.0) / 360.0
    )
    mean_s = (s * weight).sum(axis=1) / total
    mean_v = (v * weight).sum(axis=1) / total

    bins = (h // (360.0 / HUE_BINS)).astype(np.int64) % HUE_BINS
    hist = np.zeros((n, HUE_BINS))
    rows = np.broadcast_to(np.arange(n)[:, None], bins.shape)
    np.add.at(hist, (rows[keep], bins[keep]), 1.0)
    hist[achromatic] = 1.0
    hist /= hist.sum(axis=1, keepdims=True)
    return np.column_stack([mean_h, mean_s, mean_v, hist])


def patch_features_many(patches: Sequence) -> np.ndarray:
    """Feature rows for many patches; equal-sized patches are computed together."""
    arrays = [_patch_array(p) for p in patches]
    out = np.empty((len(arrays), FEATURE_SIZE))
    groups: dict[tuple, list[int]] = {}
    for i, arr in enumerate(arrays):
        groups.setdefault(arr.shape, []).append(i)
    for idx in groups.values():
        out[idx] = _stack_features(np.stack([arrays[i] for i in idx]))
    return out


class BaselineModel:
    """Nearest-centroid classifier over :func:`patch_features`."""

    def __init__(self, labels: Sequence[str], centroids):
        labels = tuple(labels)
        centroids = np.asarray(centroids, dtype=np.float64)
        if not labels:
            raise TrainingError("a model needs at least one class")
        if len(set(labels)) != len(labels):
            raise TrainingError("duplicate class labels")
        if centroids.shape != (len(labels), FEATURE_SIZE):
            raise TrainingError(f"centroid array has shape {centroids.shape}")
        self.labels = labels
        self.centroids = centroids

    def classify(self, patch) -> ClassifierVerdict:
        return self.classify_many([patch])[0]

    def classify_many(self, patches: Sequence[PixelImage]) -> list[ClassifierVerdict]:
        if not len(patches):
            return []
        feats = patch_features_many(patches)
        if len(self.labels) == 1:
            return [ClassifierVerdict(self.labels[0], 1.0) for _ in patches]
        dist = np.linalg.norm(feats[:, None, :] - self.centroids[None, :, :], axis=2)
        # columns in label order, so a stable sort breaks distance ties by label
        by_label = sorted(range(len(self.labels)), key=lambda i: self.labels[i])
        dist = dist[:, by_label]
        order = np.argsort(dist, axis=1, kind="stable")
        rows = np.arange(len(patches))
        d1 = dist[rows, order[:, 0]]
        d2 = dist[rows, order[:, 1]]
        total = d1 + d2
        conf = np.where(total == 0.0, 0.5, 1.0 - d1 / np.where(total == 0.0, 1.0, total))
        return [
            ClassifierVerdict(self.labels[by_label[k]], float(min(max(c, 0.0), 1.0)))
            for k, c in zip(order[:, 0], conf)
        ]

    def to_dict(self) -> dict:
        return {
            "kind": "baseline",
            "version": 1,
            "labels": list(self.labels),
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        if d.get("kind") != "baseline":
            raise TrainingError("not a baseline model document")
        return cls(d["labels"], d["centroids"])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BaselineModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self) -> str:
        return f"BaselineModel(labels={self.labels})"


def train_baseline(
    patches: Iterable[tuple[PixelImage, str]],
    labels: Optional[Sequence[str]] = None,
) -> BaselineModel:
    """Average per-patch feature vectors into one centroid per class.

    ``labels`` declares the class set; every declared class needs at least one
    patch. Without it the class set is whatever labels the patches carry.
    """
    by_label: dict[str, list[np.ndarray]] = {}
    for patch, label in patches:
        by_label.setdefault(label, []).append(patch_features(patch))
    if labels is None:
        classes = sorted(by_label)
    else:
        classes = list(labels)
        missing = [c for c in classes if c not in by_label]
        if missing:
            raise TrainingError(f"no training patches for class(es): {', '.join(missing)}")
        extra = sorted(set(by_label) - set(classes))
        if extra:
            raise TrainingError(f"patches carry undeclared label(s): {', '.join(extra)}")
    if not classes:
        raise TrainingError("no training patches")
    centroids = [np.mean(by_label[c], axis=0) for c in classes]
    return BaselineModel(classes, centroids)


def classify(model, patch) -> ClassifierVerdict:
    """Classify one patch with any classifier and enforce the verdict contract."""
    _patch_array(patch)
    if hasattr(model, "classify"):
        verdict = model.classify(patch)
    else:
        (verdict,) = model.classify_many([patch])
    labels = getattr(model, "labels", None)
    if labels is not None and verdict.label not in labels:
        raise ClassifyError(f"classifier returned undeclared label {verdict.label!r}")
    return verdict


def _swatch(rgb, size: int = 4) -> PixelImage:
    return PixelImage.filled(size, size, rgb)


def default_baseline() -> BaselineModel:
    """A colour-swatch model for when no trained model is supplied.

    Good enough for clean lab imagery and the synthetic generator; train a
    real one with :func:`train_baseline` for anything else.
    """
    healthy = [(50, 150, 40), (70, 160, 60), (40, 120, 50), (90, 170, 70), (30, 110, 30)]
    late = [(90, 45, 20), (70, 35, 15), (100, 55, 30), (80, 50, 25)]
    early = [(200, 160, 60), (180, 140, 50), (170, 140, 70), (190, 150, 40)]
    data = [(_swatch(c), "healthy") for c in healthy]
    data += [(_swatch(c), "late_blight") for c in late]
    data += [(_swatch(c), "early_blight") for c in early]
    return train_baseline(data, labels=["early_blight", "healthy", "late_blight"])


# -- external process adapter ------------------------------------------------


def _run_command(argv: list[str], timeout: Optional[float]) -> bytes:
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout, check=False)
    except FileNotFoundError as exc:
        raise ExternalClassifierError(f"classifier command not found: {argv[0]}") from exc
    except PermissionError as exc:
        raise ExternalClassifierError(f"classifier command not executable: {argv[0]}") from exc
    except subprocess.TimeoutExpired as exc:
        raise ExternalClassifierError(f"classifier timed out after {timeout}s") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode("utf-8", "replace").strip()[-500:]
        raise ExternalClassifierError(
            f"classifier exited with status {proc.returncode}" + (f": {tail}" if tail else "")
        )
    return proc.stdout


def _parse_response(raw: bytes, wanted: Sequence[str]) -> dict[str, ClassifierVerdict]:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"classifier output is not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise ProtocolError("classifier output must be a JSON array")
    found: dict[str, ClassifierVerdict] = {}
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            raise ProtocolError(f"entry {i} is not an object")
        pid, label, conf = item.get("id"), item.get("label"), item.get("confidence")
        if not isinstance(pid, str) or not isinstance(label, str):
            raise ProtocolError(f"entry {i} needs string 'id' and 'label'")
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise ProtocolError(f"entry {pid!r} has confidence {conf!r} outside [0, 1]")
        if pid in found:
            raise ProtocolError(f"duplicate id {pid!r} in classifier output")
        found[pid] = ClassifierVerdict(label, float(conf))
    unknown = sorted(set(found) - set(wanted))
    if unknown:
        raise ProtocolError(f"classifier answered for unknown id(s): {', '.join(unknown)}")
    missing = [pid for pid in wanted if pid not in found]
    if missing:
        raise ProtocolError(f"classifier output is missing id(s): {', '.join(missing)}")
    return found


def external_classify(
    command: Union[str, Sequence[str]],
    patches: Sequence[tuple[str, PixelImage]],
    timeout: Optional[float] = None,
) -> list[ClassifierVerdict]:
    """Classify patches by running an external program once for the batch.

    The program is invoked as ``<command> <manifest-path>``; see
    ``docs/protocol.md`` for the manifest and response formats. Verdicts come
    back in the order of ``patches``.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    if not argv:
        raise ExternalClassifierError("empty classifier command")
    ids = [str(pid) for pid, _ in patches]
    if len(set(ids)) != len(ids):
        raise ValueError("patch ids must be unique")
    if not patches:
        return []
    with tempfile.TemporaryDirectory(prefix="quadleaf-") as tmp:
        tmpdir = Path(tmp)
        entries = []
        for i, (pid, img) in enumerate(zip(ids, (p for _, p in patches))):
            png = tmpdir / f"patch_{i:06d}.png"
            png.write_bytes(encode_image(img, "png"))
            entries.append({"id": pid, "png_path": str(png)})
        manifest = tmpdir / "manifest.json"
        manifest.write_text(json.dumps({"version": 1, "patches": entries}, indent=1))
        raw = _run_command(argv + [str(manifest)], timeout)
    found = _parse_response(raw, ids)
    return [found[pid] for pid in ids]


class ExternalClassifier:
    """Adapter that makes an external program look like any other classifier.

    Not safe for concurrent use: each call spawns one process and owns its
    temporary directory, but nothing coordinates two calls.
    """

    concurrent_safe = False

    def __init__(
        self,
        command: Union[str, Sequence[str]],
        labels: Optional[Sequence[str]] = None,
        timeout: Optional[float] = None,
    ):
        self.command = command
        self.labels = tuple(labels) if labels is not None else None
        self.timeout = timeout

    def classify_many(self, patches: Sequence[PixelImage]) -> list[ClassifierVerdict]:
        verdicts = external_classify(
            self.command, [(f"p{i}", p) for i, p in enumerate(patches)], timeout=self.timeout
        )
        if self.labels is not None:
            for v in verdicts:
                if v.label not in self.labels:
                    raise ProtocolError(f"classifier returned undeclared label {v.label!r}")
        return verdicts

    def classify(self, patch: PixelImage) -> ClassifierVerdict:
        return self.classify_many([patch])[0]

    def __repr__(self) -> str:
        return f"ExternalClassifier({self.command!r})"
