"""Raster decoding, grayscale conversion, and the shared geometry primitives.

Images are thin immutable wrappers around uint8 numpy arrays. Coordinates are
pixel indices with origin top-left; bounding boxes are inclusive at both
corners, so a box covering a single pixel has x0 == x1 and y0 == y1.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError


class DecodeError(Exception):
    """Raised when the input byte stream is not a decodable PNG/JPEG."""


class OutOfBounds(Exception):
    """Raised when a box exceeds the bounds of the image that owns it."""


@dataclass(frozen=True, eq=False)
class RasterImage:
    """RGB raster, shape (height, width, 3), dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValueError("RasterImage requires a (H, W, 3) uint8 array")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance raster, shape (height, width), dtype uint8."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.dtype != np.uint8:
            raise ValueError("GrayImage requires a (H, W) uint8 array")
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, order=True)
class BBox:
    """Inclusive-corner pixel box: every pixel (x, y) with x0<=x<=x1, y0<=y<=y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"degenerate box: {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        # Pixel i spans [i, i+1) in continuous coordinates.
        return ((self.x0 + self.x1 + 1) / 2.0, (self.y0 + self.y1 + 1) / 2.0)

    def intersection_area(self, other: "BBox") -> int:
        iw = min(self.x1, other.x1) - max(self.x0, other.x0) + 1
        ih = min(self.y1, other.y1) - max(self.y0, other.y0) + 1
        if iw <= 0 or ih <= 0:
            return 0
        return iw * ih

    def iou(self, other: "BBox") -> float:
        inter = self.intersection_area(other)
        if inter == 0:
            return 0.0
        return inter / (self.area + other.area - inter)

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )

    def x_gap(self, other: "BBox") -> int:
        """Number of empty pixel columns strictly between the two boxes (0 if they
        overlap or touch along x)."""
        return max(0, max(self.x0, other.x0) - min(self.x1, other.x1) - 1)

    def y_gap(self, other: "BBox") -> int:
        """Number of empty pixel rows strictly between the two boxes."""
        return max(0, max(self.y0, other.y0) - min(self.y1, other.y1) - 1)

    def gap_distance(self, other: "BBox") -> int:
        """Edge-to-edge pixel distance: 0 when the boxes overlap or touch,
        otherwise the larger of the per-axis gaps."""
        return max(self.x_gap(other), self.y_gap(other))

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x0 and 0 <= self.y0 and self.x1 < width and self.y1 < height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


def decode_image(data: bytes) -> RasterImage:
    """Decode a PNG or JPEG byte stream; alpha is composited over white."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(f"unsupported image format: {im.format}")
            im.load()
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                rgba = im.convert("RGBA")
                background = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
                im = Image.alpha_composite(background, rgba).convert("RGB")
            else:
                im = im.convert("RGB")
            return RasterImage(np.asarray(im, dtype=np.uint8).copy())
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc


def encode_png(img: RasterImage) -> bytes:
    """Encode losslessly; decode(encode(img)) is pixel-identical."""
    buf = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def to_gray(img: RasterImage) -> GrayImage:
    """BT.601 luma: round(0.299 R + 0.587 G + 0.114 B), clamped to [0, 255]."""
    rgb = img.pixels.astype(np.float64)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return GrayImage(np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8))


def crop(img, box: BBox):
    """Copy the pixels inside `box`; returns the same image type it was given."""
    if not box.within(img.width, img.height):
        raise OutOfBounds(f"{box} exceeds {img.width}x{img.height} image")
    if isinstance(img, RasterImage):
        return RasterImage(img.pixels[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1].copy())
    if isinstance(img, GrayImage):
        return GrayImage(img.values[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1].copy())
    raise TypeError(f"cannot crop {type(img).__name__}")


def integral_image(gray: GrayImage) -> np.ndarray:
    """Summed-area table with a zero first row/column, shape (H+1, W+1)."""
    table = np.zeros((gray.height + 1, gray.width + 1), dtype=np.int64)
    np.cumsum(np.cumsum(gray.values, axis=0), axis=1, out=table[1:, 1:])
    return table


def box_means(gray: GrayImage, window: int) -> np.ndarray:
    """Per-pixel mean over a centered window, clipped at the image borders."""
    half = window // 2
    h, w = gray.height, gray.width
    table = integral_image(gray)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - half, 0, h)
    y1 = np.clip(ys + half + 1, 0, h)
    x0 = np.clip(xs - half, 0, w)
    x1 = np.clip(xs + half + 1, 0, w)
    sums = (
        table[np.ix_(y1, x1)]
        - table[np.ix_(y0, x1)]
        - table[np.ix_(y1, x0)]
        + table[np.ix_(y0, x0)]
    )
    counts = np.outer(y1 - y0, x1 - x0)
    return sums / counts
