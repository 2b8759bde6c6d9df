"""Image substrate: decoding, HSV conversion, segment geometry and cropping.

Pixel coordinates follow the usual raster convention: origin at the top-left
corner, x to the right, y downward. Segments are half-open boxes, so a
segment ``(x1, y1, x2, y2)`` covers columns ``x1 .. x2-1`` and rows
``y1 .. y2-1``.
"""

from __future__ import annotations

import colorsys
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import BoundsError, DecodeError, IndivisibleSegment, UnsupportedFormat

__all__ = [
    "PixelImage",
    "HsvPixel",
    "Segment",
    "decode_image",
    "encode_image",
    "load_image",
    "save_image",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "hsv_planes",
    "split_quadrants",
    "crop",
    "root_segment",
]

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PixelImage:
    """An owned, immutable 8-bit RGB raster.

    The pixels live in a read-only ``(height, width, 3)`` uint8 array.
    """

    __slots__ = ("_pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("pixel values must lie in 0..255")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, order="C", copy=True)
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "PixelImage":
        if len(data) != width * height * 3:
            raise ValueError(f"expected {width * height * 3} bytes, got {len(data)}")
        return cls(np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3))

    @classmethod
    def filled(cls, width: int, height: int, rgb) -> "PixelImage":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:] = rgb
        return cls(arr)

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def data(self) -> bytes:
        """Row-major RGB triples."""
        return self._pixels.tobytes()

    def pixel(self, x: int, y: int) -> tuple[int, int, int]:
        r, g, b = self._pixels[y, x]
        return int(r), int(g), int(b)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PixelImage):
            return NotImplemented
        return np.array_equal(self._pixels, other._pixels)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"PixelImage(width={self.width}, height={self.height})"


@dataclass(frozen=True)
class HsvPixel:
    h: float  # degrees, [0, 360)
    s: float
    v: float


@dataclass(frozen=True)
class Segment:
    """Half-open pixel rectangle at a given quadtree depth (root = 0)."""

    x1: int
    y1: int
    x2: int
    y2: int
    depth: int = 0

    def __post_init__(self):
        if self.x1 < 0 or self.y1 < 0:
            raise BoundsError(f"negative origin in {self}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise BoundsError(f"empty segment {self}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.y1, self.x1, self.y2, self.x2)

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def is_divisible(self) -> bool:
        return self.width >= 2 and self.height >= 2

    def contains(self, other: "Segment") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def intersects(self, other: "Segment") -> bool:
        """True when the two boxes share at least one pixel."""
        return (
            self.x1 < other.x2
            and other.x1 < self.x2
            and self.y1 < other.y2
            and other.y1 < self.y2
        )

    def fits(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height


def root_segment(img: PixelImage) -> Segment:
    return Segment(0, 0, img.width, img.height, 0)


def split_quadrants(seg: Segment) -> list[Segment]:
    """Split ``seg`` into [top-left, top-right, bottom-left, bottom-right].

    Split points are floor halves, so for odd sizes the right/bottom children
    take the extra row or column.
    """
    if not seg.is_divisible():
        raise IndivisibleSegment(
            f"cannot split {seg.width}x{seg.height} segment at ({seg.x1}, {seg.y1})"
        )
    mx = seg.x1 + seg.width // 2
    my = seg.y1 + seg.height // 2
    d = seg.depth + 1
    return [
        Segment(seg.x1, seg.y1, mx, my, d),
        Segment(mx, seg.y1, seg.x2, my, d),
        Segment(seg.x1, my, mx, seg.y2, d),
        Segment(mx, my, seg.x2, seg.y2, d),
    ]


def crop(img: PixelImage, seg: Segment) -> PixelImage:
    if not seg.fits(img.width, img.height):
        raise BoundsError(f"{seg} outside {img.width}x{img.height} image")
    return PixelImage(img.pixels[seg.y1 : seg.y2, seg.x1 : seg.x2])


# -- colour -----------------------------------------------------------------


def rgb_to_hsv(r: int, g: int, b: int) -> HsvPixel:
    """Convert one 8-bit RGB triple; achromatic pixels get hue 0."""
    h, s, v = hsv_planes(np.array([[r, g, b]], dtype=np.uint8))
    return HsvPixel(float(h[0]), float(s[0]), float(v[0]))


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb((h % 360.0) / 360.0, s, v)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def hsv_planes(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised RGB->HSV over an ``(..., 3)`` uint8 array.

    Returns ``(h, s, v)`` float64 arrays with h in degrees, matching
    :mod:`colorsys` to rounding. Hue is one correctly rounded division of
    integers, so sector boundaries such as 30 or 120 degrees come out exact.
    """
    arr = np.asarray(pixels)
    r = arr[..., 0].astype(np.int32)
    g = arr[..., 1].astype(np.int32)
    b = arr[..., 2].astype(np.int32)
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    v = maxc / 255.0
    s = np.divide(delta, maxc, out=np.zeros(maxc.shape), where=maxc > 0)
    # same branch order as colorsys: red wins ties, then green
    r_max = r == maxc
    g_max = ~r_max & (g == maxc)
    num = np.where(r_max, g - b, np.where(g_max, b - r, r - g)) * 60
    base = np.where(r_max, 0, np.where(g_max, 120, 240))
    h = np.divide(num, delta, out=np.zeros(maxc.shape), where=delta > 0) + base
    h = np.where(delta > 0, h % 360.0, 0.0)
    return h, s, v


# -- codecs -----------------------------------------------------------------


def _sniff(data: bytes) -> str:
    if data[:8] == _PNG_SIGNATURE:
        return "png"
    if data[:1] == b"P" and data[1:2].isdigit():
        return "ppm"
    raise DecodeError("unrecognised image signature")


def decode_image(data: bytes, format: Optional[str] = None) -> PixelImage:
    """Decode a binary PPM (P6, maxval 255) or an 8-bit PNG.

    Pixel values are returned untouched: no resizing, no colour management.
    """
    fmt = (format or _sniff(data)).lower()
    if fmt == "ppm":
        return _decode_ppm(data)
    if fmt == "png":
        return _decode_png(data)
    raise UnsupportedFormat(f"unknown format {format!r}")


def _decode_ppm(data: bytes) -> PixelImage:
    if len(data) < 2 or data[:1] != b"P":
        raise DecodeError("not a PPM file")
    magic = data[:2]
    if magic in (b"P1", b"P2", b"P3", b"P4", b"P5", b"P7"):
        raise UnsupportedFormat(f"only binary RGB PPM (P6) is supported, got {magic!r}")
    if magic != b"P6":
        raise DecodeError(f"bad PPM magic {magic!r}")

    pos = 2
    fields = []
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise DecodeError("truncated PPM header")
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DecodeError(f"unexpected byte {data[pos:pos + 1]!r} in PPM header")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise DecodeError("missing whitespace after PPM maxval")
    pos += 1

    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DecodeError(f"bad PPM dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise DecodeError(f"bad PPM maxval {maxval}")
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 is supported, got {maxval}")
    need = width * height * 3
    body = data[pos : pos + need]
    if len(body) < need:
        raise DecodeError(f"truncated PPM pixel data: expected {need} bytes, got {len(body)}")
    return PixelImage.from_bytes(width, height, body)


def _decode_png(data: bytes) -> PixelImage:
    from PIL import Image

    if data[:8] != _PNG_SIGNATURE:
        raise DecodeError("not a PNG file")
    if len(data) < 33 or data[12:16] != b"IHDR":
        raise DecodeError("PNG is missing its IHDR chunk")
    width, height, depth, colour_type = struct.unpack(">IIBB", data[16:26])
    if colour_type != 3 and depth != 8:
        raise UnsupportedFormat(f"PNG bit depth {depth} is not supported (need 8)")
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            rgb = im.convert("RGB")
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode PNG: {exc}") from exc
    arr = np.asarray(rgb, dtype=np.uint8)
    if arr.shape[:2] != (height, width):
        raise DecodeError("PNG size disagrees with IHDR")
    return PixelImage(arr)


def encode_image(img: PixelImage, format: str = "ppm") -> bytes:
    fmt = format.lower()
    if fmt == "ppm":
        return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.data
    if fmt == "png":
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(np.array(img.pixels)).save(buf, format="PNG")
        return buf.getvalue()
    raise UnsupportedFormat(f"unknown format {format!r}")


def _format_for(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        return "ppm"
    if suffix == ".png":
        return "png"
    raise UnsupportedFormat(f"cannot infer image format from {path.name!r}")


def load_image(path: Union[str, Path]) -> PixelImage:
    path = Path(path)
    return decode_image(path.read_bytes())


def save_image(img: PixelImage, path: Union[str, Path]) -> None:
    path = Path(path)
    path.write_bytes(encode_image(img, _format_for(path)))
