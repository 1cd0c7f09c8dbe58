"""Segment detection: connected-component layout elements plus a low-contrast
rectangle detector for gel-like regions.

The component route binarizes with an adaptive mean threshold (dark content on
a light page), labels 8-connected components, and merges components closer
than 3 px on both axes. The rectangle route finds solid regions whose border
steps against the page background but whose interior is nearly uniform, which
is what gel strips look like; the component route tends to pick up only their
outlines and spots.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from gelminer.imgio import BBox, GrayImage, box_means


class EmptyResult(Exception):
    """No segment was found; the figure counts as unprocessed."""


class SegmentKind(str, enum.Enum):
    TEXT = "text"
    GRAPHIC = "graphic"


class SegmentSource(str, enum.Enum):
    COMPONENT = "component_detector"
    RECTANGLE = "rectangle_detector"


@dataclass(frozen=True)
class Segment:
    id: int
    bbox: BBox
    kind: SegmentKind
    source: SegmentSource
    ocr_text: str | None = None


@dataclass(frozen=True)
class SegmentationConfig:
    binarization_window: int = 31
    binarization_offset: float = 10.0
    min_segment_area: int = 64
    rectangle_uniformity_tolerance: float = 25.0
    rectangle_min_size: int = 16
    border_step: float = 20.0
    merge_gap: int = 3          # components with both axis gaps < merge_gap merge
    duplicate_iou: float = 0.8  # above this, two detections are the same segment
    text_max_height: int = 32   # provisional kind heuristic
    text_max_fill: float = 0.5

    def __post_init__(self) -> None:
        if min(self.binarization_window, self.min_segment_area, self.rectangle_min_size,
               self.merge_gap) <= 0:
            raise ValueError("segmentation config values must be positive")
        if self.binarization_offset <= 0 or self.rectangle_uniformity_tolerance <= 0:
            raise ValueError("segmentation config values must be positive")


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _label_components(mask: np.ndarray) -> tuple[list[BBox], list[int]]:
    """Bounding boxes and pixel counts of 8-connected foreground components."""
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return [], []
    boxes = []
    for sl in ndimage.find_objects(labels):
        boxes.append(BBox(sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1))
    sizes = np.bincount(labels.ravel())[1:]
    return boxes, [int(s) for s in sizes]


def _merge_close_components(
    boxes: list[BBox], sizes: list[int], merge_gap: int
) -> tuple[list[BBox], list[int]]:
    """Union components whose boxes are closer than merge_gap on both axes."""
    n = len(boxes)
    if n <= 1:
        return boxes, sizes
    x0 = np.array([b.x0 for b in boxes])
    y0 = np.array([b.y0 for b in boxes])
    x1 = np.array([b.x1 for b in boxes])
    y1 = np.array([b.y1 for b in boxes])
    hgap = np.maximum(0, np.maximum.outer(x0, x0) - np.minimum.outer(x1, x1) - 1)
    vgap = np.maximum(0, np.maximum.outer(y0, y0) - np.minimum.outer(y1, y1) - 1)
    adjacent = (hgap < merge_gap) & (vgap < merge_gap)

    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(np.triu(adjacent, k=1))):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[rj] = ri

    grouped: dict[int, tuple[BBox, int]] = {}
    for i in range(n):
        root = find(i)
        if root in grouped:
            box, size = grouped[root]
            grouped[root] = (box.union(boxes[i]), size + sizes[i])
        else:
            grouped[root] = (boxes[i], sizes[i])
    merged = sorted(grouped.values(), key=lambda item: item[0])
    return [box for box, _ in merged], [size for _, size in merged]


def _provisional_kind(box: BBox, pixel_count: int, cfg: SegmentationConfig) -> SegmentKind:
    fill = pixel_count / box.area
    if box.height <= cfg.text_max_height and fill <= cfg.text_max_fill:
        return SegmentKind.TEXT
    return SegmentKind.GRAPHIC


def detect_segments(img: GrayImage, cfg: SegmentationConfig | None = None) -> list[Segment]:
    """Connected-component segments after adaptive-mean binarization.

    Raises EmptyResult when nothing survives the minimum-area filter.
    """
    cfg = cfg or SegmentationConfig()
    means = box_means(img, cfg.binarization_window)
    mask = img.values < means - cfg.binarization_offset
    boxes, sizes = _label_components(mask)
    boxes, sizes = _merge_close_components(boxes, sizes, cfg.merge_gap)
    segments = []
    for box, size in zip(boxes, sizes):
        if box.area < cfg.min_segment_area:
            continue
        segments.append(
            Segment(
                id=len(segments),
                bbox=box,
                kind=_provisional_kind(box, size, cfg),
                source=SegmentSource.COMPONENT,
            )
        )
    if not segments:
        raise EmptyResult("no segments detected")
    return segments


def _background_value(img: GrayImage) -> int:
    """Most frequent luminance along the image border (the page background)."""
    v = img.values
    border = np.concatenate([v[0, :], v[-1, :], v[:, 0], v[:, -1]])
    return int(np.bincount(border, minlength=256).argmax())


def detect_lowcontrast_rectangles(
    img: GrayImage, cfg: SegmentationConfig | None = None
) -> list[Segment]:
    """Solid rectangles with a border step against the background and a nearly
    uniform interior. Always kind=graphic, source=rectangle_detector."""
    cfg = cfg or SegmentationConfig()
    bg = _background_value(img)
    values = img.values.astype(np.int32)
    mask = np.abs(values - bg) >= cfg.border_step
    boxes, sizes = _label_components(mask)
    segments = []
    for box, size in zip(boxes, sizes):
        if box.width < cfg.rectangle_min_size or box.height < cfg.rectangle_min_size:
            continue
        if box.area < cfg.min_segment_area:
            continue
        if size / box.area < 0.9:
            continue
        interior = values[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1]
        if float(interior.std()) > cfg.rectangle_uniformity_tolerance:
            continue
        step = _border_step(values, box)
        if step is None or step < cfg.border_step:
            continue
        segments.append(
            Segment(
                id=len(segments),
                bbox=box,
                kind=SegmentKind.GRAPHIC,
                source=SegmentSource.RECTANGLE,
            )
        )
    return segments


def _border_step(values: np.ndarray, box: BBox) -> float | None:
    """Mean luminance step between the box's outer edge and the 1-px ring
    outside it; None if the box touches every image border."""
    h, w = values.shape
    inner: list[np.ndarray] = []
    outer: list[np.ndarray] = []
    if box.y0 > 0:
        inner.append(values[box.y0, box.x0 : box.x1 + 1])
        outer.append(values[box.y0 - 1, box.x0 : box.x1 + 1])
    if box.y1 < h - 1:
        inner.append(values[box.y1, box.x0 : box.x1 + 1])
        outer.append(values[box.y1 + 1, box.x0 : box.x1 + 1])
    if box.x0 > 0:
        inner.append(values[box.y0 : box.y1 + 1, box.x0])
        outer.append(values[box.y0 : box.y1 + 1, box.x0 - 1])
    if box.x1 < w - 1:
        inner.append(values[box.y0 : box.y1 + 1, box.x1])
        outer.append(values[box.y0 : box.y1 + 1, box.x1 + 1])
    if not inner:
        return None
    return float(abs(np.concatenate(outer).mean() - np.concatenate(inner).mean()))


def merge_segment_lists(
    a: list[Segment], b: list[Segment], cfg: SegmentationConfig | None = None
) -> list[Segment]:
    """Union of two detections with IoU > duplicate_iou duplicates removed;
    component-detector segments win ties. Ids are reassigned consecutively."""
    threshold = (cfg or SegmentationConfig()).duplicate_iou

    def priority(seg: Segment):
        return (0 if seg.source == SegmentSource.COMPONENT else 1, seg.bbox, seg.id)

    kept: list[Segment] = []
    for seg in sorted(list(a) + list(b), key=priority):
        if any(seg.bbox.iou(other.bbox) > threshold for other in kept):
            continue
        kept.append(seg)
    kept.sort(key=lambda s: s.bbox)
    return [replace(seg, id=i) for i, seg in enumerate(kept)]
