"""Merge diseased segments into bounding-box ROIs and serialize the result.

Two boxes are adjacent when their closed hulls meet, i.e. they overlap,
share part of an edge, or share only a corner.

``faithful`` grouping grows each ROI against the accumulated bounding box:
starting from the top-left-most remaining segment, any segment touching the
current box is absorbed and the box re-grown until nothing else touches it.
The box can therefore swallow segments that touch the box without touching
any member. ROIs that end up touching each other are then coalesced, so the
final boxes are pairwise separated.

``strict`` grouping is plain connected components of the segment adjacency
graph with one bounding box per component.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .imgcore import Segment

__all__ = ["Roi", "DetectionReport", "touches", "group_segments", "localize", "MODES"]

MODES = ("faithful", "strict")

_INT_LIST = re.compile(r"\[\s*(-?\d+(?:,\s*-?\d+)*)\s*\]")


@dataclass(frozen=True)
class Roi:
    x1: int
    y1: int
    x2: int
    y2: int
    members: tuple[Segment, ...] = field(default=(), compare=False)

    @property
    def member_count(self) -> int:
        return len(self.members)

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_segment(self) -> Segment:
        return Segment(self.x1, self.y1, self.x2, self.y2)

    def yxyx(self) -> list[int]:
        """Report order: top-left corner then bottom-right, row before column."""
        return [self.y1, self.x1, self.y2, self.x2]


def touches(a, b) -> bool:
    """Closed-hull intersection of two ``(x1, y1, x2, y2)``-like boxes."""
    return a.x1 <= b.x2 and b.x1 <= a.x2 and a.y1 <= b.y2 and b.y1 <= a.y2


def _boxes(segs: Sequence) -> np.ndarray:
    return np.array([(s.x1, s.y1, s.x2, s.y2) for s in segs], dtype=np.int64).reshape(-1, 4)


def _touching(arr: np.ndarray, box) -> np.ndarray:
    x1, y1, x2, y2 = box
    return (arr[:, 0] <= x2) & (x1 <= arr[:, 2]) & (arr[:, 1] <= y2) & (y1 <= arr[:, 3])


def _roi(members: Iterable[Segment]) -> Roi:
    members = tuple(sorted(members, key=lambda s: s.sort_key))
    return Roi(
        min(s.x1 for s in members),
        min(s.y1 for s in members),
        max(s.x2 for s in members),
        max(s.y2 for s in members),
        members,
    )


def _strict(segs: list[Segment]) -> list[Roi]:
    n = len(segs)
    arr = _boxes(segs)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        hits = np.nonzero(_touching(arr[i + 1 :], arr[i]))[0] + i + 1
        for j in hits:
            ri, rj = find(i), find(int(j))
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    comps: dict[int, list[Segment]] = {}
    for i in range(n):
        comps.setdefault(find(i), []).append(segs[i])
    return [_roi(members) for members in comps.values()]


def _faithful(segs: list[Segment]) -> list[Roi]:
    arr = _boxes(segs)
    alive = np.ones(len(segs), dtype=bool)
    groups: list[tuple[list[int], list[int]]] = []
    for start in range(len(segs)):
        if not alive[start]:
            continue
        alive[start] = False
        members = [start]
        box = list(arr[start])
        while True:
            hits = np.nonzero(alive & _touching(arr, box))[0]
            if hits.size == 0:
                break
            alive[hits] = False
            members.extend(int(j) for j in hits)
            box = [
                min(box[0], int(arr[hits, 0].min())),
                min(box[1], int(arr[hits, 1].min())),
                max(box[2], int(arr[hits, 2].max())),
                max(box[3], int(arr[hits, 3].max())),
            ]
        groups.append((box, members))

    # a later ROI can grow into an earlier one; fold those together
    merged = True
    while merged:
        merged = False
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                a, b = groups[i][0], groups[j][0]
                if a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]:
                    box = [min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])]
                    groups[i] = (box, groups[i][1] + groups[j][1])
                    del groups[j]
                    merged = True
                    break
            if merged:
                break
    return [_roi(segs[k] for k in members) for _, members in groups]


def group_segments(segments: Iterable[Segment], mode: str = "faithful") -> list[Roi]:
    """Merge adjacent segments into ROIs, sorted by ``(y1, x1)``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    segs = sorted(segments, key=lambda s: s.sort_key)
    if not segs:
        return []
    rois = _faithful(segs) if mode == "faithful" else _strict(segs)
    return sorted(rois, key=lambda r: (r.y1, r.x1, r.y2, r.x2))


@dataclass
class DetectionReport:
    """Per-disease boxes, each serialized as ``[y1, x1, y2, x2]``.

    Each box is the pair of opposite corners, row first: a segment spanning
    x 239..268 and y 83..111 is written ``[83, 239, 111, 268]``.
    """

    width: int
    height: int
    diseases: dict[str, list[list[int]]] = field(default_factory=dict)
    config_digest: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "image": {"width": self.width, "height": self.height},
            "config_digest": self.config_digest,
            "diseases": {k: [list(b) for b in self.diseases[k]] for k in sorted(self.diseases)},
        }

    def to_json(self) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        # one box per line
        text = _INT_LIST.sub(lambda m: "[" + ", ".join(v.strip() for v in m.group(1).split(",")) + "]", text)
        return text + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "DetectionReport":
        img = d["image"]
        return cls(
            width=int(img["width"]),
            height=int(img["height"]),
            diseases={k: [[int(c) for c in box] for box in v] for k, v in d["diseases"].items()},
            config_digest=d.get("config_digest"),
        )

    @classmethod
    def from_json(cls, text: str) -> "DetectionReport":
        return cls.from_dict(json.loads(text))

    def boxes(self, label: str) -> list[Segment]:
        """Boxes of one disease as segments (x1, y1, x2, y2)."""
        return [Segment(x1, y1, x2, y2) for y1, x1, y2, x2 in self.diseases.get(label, [])]


def localize(
    fmap: Mapping[str, Sequence[Segment]],
    img_dims: tuple[int, int],
    mode: str = "faithful",
    config_digest: Optional[str] = None,
) -> DetectionReport:
    width, height = img_dims
    diseases = {}
    for label in sorted(fmap):
        rois = group_segments(fmap[label], mode)
        if rois:
            diseases[label] = [r.yxyx() for r in rois]
    return DetectionReport(width, height, diseases, config_digest)
