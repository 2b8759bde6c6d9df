"""Synthetic leaf images with planted lesions at known pixel positions.

Each image is an elliptical green leaf on a grey background. Lesions are
placed inside single quadtree cells at ``cell_depth`` so that the cell that
gets classified sees the whole lesion. Late blight lesions are solid dark
brown discs; early blight lesions are concentric yellow-brown rings with
leaf showing between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .imgcore import PixelImage, Segment, crop, root_segment, split_quadrants
from .predicates import DEFAULT_BASE_GREEN, ColorRange, HsvIndex

__all__ = [
    "LEAF_RGB",
    "BACKGROUND_RGB",
    "LESION_RGB",
    "SyntheticLeaf",
    "make_leaf",
    "make_suite",
    "training_patches",
    "cells_at_depth",
]

LEAF_RGB = (50, 150, 40)
BACKGROUND_RGB = (128, 128, 128)
LESION_RGB = {
    "late_blight": (100, 50, 20),
    "early_blight": (195, 145, 55),
}


@dataclass
class SyntheticLeaf:
    image: PixelImage
    label: str
    leaf_mask: np.ndarray
    lesion_mask: np.ndarray
    lesion_boxes: list[Segment] = field(default_factory=list)

    @property
    def leaf_fraction(self) -> float:
        return float(self.leaf_mask.mean())


def cells_at_depth(width: int, height: int, depth: int) -> list[Segment]:
    """Every quadtree cell at ``depth`` (floor-halving splits)."""
    cells = [Segment(0, 0, width, height, 0)]
    for _ in range(depth):
        cells = [c for seg in cells for c in split_quadrants(seg)]
    return cells


def make_leaf(
    size: int = 256,
    label: str = "late_blight",
    seed: Optional[int] = None,
    n_lesions: tuple[int, int] = (1, 3),
    leaf_fraction: tuple[float, float] = (0.14, 0.20),
    aspect: tuple[float, float] = (2.0, 2.8),
    cell_depth: int = 2,
    noise: int = 3,
    lesion_radius: Optional[tuple[int, int]] = None,
) -> SyntheticLeaf:
    """Draw one ``size`` x ``size`` leaf image.

    ``label`` is ``healthy``, ``late_blight`` or ``early_blight``. Lesion
    radii default to scale with the image (9-14 px at 256).
    """
    rng = np.random.default_rng(seed)
    for _ in range(100):
        drawn = _draw(rng, size, label, n_lesions, leaf_fraction, aspect, cell_depth, lesion_radius)
        if drawn is not None:
            break
    else:
        raise RuntimeError("could not place the requested lesions; relax the leaf parameters")
    rgb, leaf, lesion, boxes = drawn
    if noise:
        rgb += rng.integers(-noise, noise + 1, size=rgb.shape, dtype=np.int16)
    img = PixelImage(np.clip(rgb, 0, 255).astype(np.uint8))
    return SyntheticLeaf(img, label, leaf, lesion, boxes)


def _draw(rng, size, label, n_lesions, leaf_fraction, aspect, cell_depth, lesion_radius):
    """One attempt at a leaf; None when too few lesions fit."""
    yy, xx = np.mgrid[0:size, 0:size]

    frac = rng.uniform(*leaf_fraction)
    # leaflets are elongated; the long axis is horizontal or vertical
    ratio = rng.uniform(*aspect)
    area = frac * size * size
    a = np.sqrt(area / np.pi * ratio)
    b = area / (np.pi * a)
    if rng.random() < 0.5:
        a, b = b, a  # a is the x semi-axis
    cx = rng.uniform(a + 2, size - a - 2)
    cy = rng.uniform(b + 2, size - b - 2)
    leaf = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0

    rgb = np.empty((size, size, 3), dtype=np.int16)
    rgb[:] = BACKGROUND_RGB
    rgb[leaf] = LEAF_RGB
    lesion = np.zeros((size, size), dtype=bool)
    boxes: list[Segment] = []

    if label != "healthy":
        lo, hi = lesion_radius or (max(2, round(size * 9 / 256)), max(3, round(size * 14 / 256)))
        parents = cells_at_depth(size, size, max(cell_depth - 1, 0))

        def cover(c: Segment) -> float:
            return float(leaf[c.y1 : c.y2, c.x1 : c.x2].mean())

        # cells that are half leaf inside a parent that clears the green test
        # comfortably, so the lesion is not pruned before classification
        good = [
            c
            for p in parents
            if cover(p) >= 0.25
            for c in (split_quadrants(p) if cell_depth else [p])
            if cover(c) >= 0.5
        ]
        rng.shuffle(good)
        want = int(rng.integers(n_lesions[0], n_lesions[1] + 1))
        color = LESION_RGB[label]
        for cell in good:
            if len(boxes) >= want:
                break
            r = int(rng.integers(lo, hi + 1))
            margin = r + 3
            # centres whose disc plus margin stays inside both the cell and the leaf
            sub = (
                (xx >= cell.x1 + margin)
                & (xx < cell.x2 - margin)
                & (yy >= cell.y1 + margin)
                & (yy < cell.y2 - margin)
            )
            inner = ((xx - cx) / max(a - margin, 1)) ** 2 + ((yy - cy) / max(b - margin, 1)) ** 2 <= 1.0
            ys, xs = np.nonzero(sub & inner)
            if ys.size == 0:
                continue
            k = int(rng.integers(ys.size))
            ly, lx = int(ys[k]), int(xs[k])
            dist2 = (xx - lx) ** 2 + (yy - ly) ** 2
            disc = dist2 <= r * r
            if label == "early_blight":
                # concentric rings: two lesion pixels, one leaf pixel
                disc &= np.floor(np.sqrt(dist2)).astype(np.int64) % 3 != 2
            rgb[disc] = color
            lesion |= disc
            bys, bxs = np.nonzero(disc)
            boxes.append(Segment(int(bxs.min()), int(bys.min()), int(bxs.max()) + 1, int(bys.max()) + 1))
    if label != "healthy" and len(boxes) < n_lesions[0]:
        return None
    return rgb, leaf, lesion, boxes


def make_suite(
    n: int,
    seed: int = 0,
    labels: Sequence[str] = ("late_blight", "early_blight"),
    **kwargs,
) -> list[SyntheticLeaf]:
    """``n`` leaves cycling through ``labels``, seeded deterministically."""
    return [make_leaf(label=labels[i % len(labels)], seed=seed * 100_003 + i, **kwargs) for i in range(n)]


def training_patches(
    leaves: Sequence[SyntheticLeaf],
    depth: int,
    green: ColorRange = DEFAULT_BASE_GREEN,
    healthy_label: str = "healthy",
) -> list[tuple[PixelImage, str]]:
    """Label the green depth-``depth`` cells of each leaf the way the
    pipeline will see them: a cell holding lesion pixels gets the leaf's
    disease label, any other green cell is healthy.

    Cells are taken only along the green pruning chain (every ancestor passes
    the green test too), matching what reaches the classifier.
    """
    out = []
    for leaf in leaves:
        index = HsvIndex(leaf.image)
        frontier = [root_segment(leaf.image)]
        frontier = [s for s in frontier if index.has_feature(s, green)]
        for _ in range(depth):
            frontier = [c for s in frontier for c in split_quadrants(s) if index.has_feature(c, green)]
        for cell in frontier:
            has_lesion = leaf.lesion_mask[cell.y1 : cell.y2, cell.x1 : cell.x2].any()
            out.append((crop(leaf.image, cell), leaf.label if has_lesion else healthy_label))
    return out
