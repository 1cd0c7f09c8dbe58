"""Gel panel detection: seed-and-expand grouping of gel segments plus label
attachment around the grouped region.

All distances are edge-to-edge pixel gaps with inclusive thresholds: the gap
between two boxes is the number of empty pixel rows/columns strictly between
them (0 when they overlap or touch), combined per axis as the larger of the
two when both are positive. Grouping starts from segments the high-precision
operating point accepts and expands through segments the high-recall point
accepts, so a group survives only if it contains at least one high-precision
seed. Two segments are neighbors when they are at most `neighbor_max_gap`
apart and no text segment intersects the axis-aligned area between their
facing edges.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from statistics import median
from typing import Mapping

from gelminer.imgio import BBox
from gelminer.segmentation import Segment, SegmentKind


@dataclass(frozen=True)
class PanelConfig:
    neighbor_max_gap: int = 50
    label_near_max: int = 30
    label_far_max: int = 150
    high_precision_threshold: float = 0.60
    high_recall_threshold: float = 0.15

    def __post_init__(self) -> None:
        if self.label_near_max > self.label_far_max:
            raise ValueError("label_near_max must not exceed label_far_max")
        for t in (self.high_precision_threshold, self.high_recall_threshold):
            if not 0.0 <= t <= 1.0:
                raise ValueError("thresholds must be in [0, 1]")


@dataclass(frozen=True)
class GelRegion:
    segment_ids: frozenset[int]
    union_bbox: BBox


@dataclass(frozen=True)
class GelPanel:
    region: GelRegion
    labels: tuple[tuple[int, str], ...]  # (segment id, recognized text)


@dataclass(frozen=True)
class PanelReport:
    rows: tuple[tuple[int, ...], ...]     # segment ids, top row first
    columns: tuple[tuple[int, ...], ...]  # segment ids, left column first
    labels: tuple[tuple[int, str, str], ...]  # (segment id, text, side)


def between_box(a: BBox, b: BBox) -> BBox | None:
    """The axis-aligned area between two boxes' facing edges, bounded by their
    projection overlap on the other axis; None when the boxes overlap, touch,
    or are diagonal to each other."""
    hgap = a.x_gap(b)
    vgap = a.y_gap(b)
    if hgap > 0 and vgap == 0:
        y0 = max(a.y0, b.y0)
        y1 = min(a.y1, b.y1)
        if y0 > y1:
            return None  # projections only touch
        return BBox(min(a.x1, b.x1) + 1, y0, max(a.x0, b.x0) - 1, y1)
    if vgap > 0 and hgap == 0:
        x0 = max(a.x0, b.x0)
        x1 = min(a.x1, b.x1)
        if x0 > x1:
            return None
        return BBox(x0, min(a.y1, b.y1) + 1, x1, max(a.y0, b.y0) - 1)
    return None


def neighbors(a: Segment, b: Segment, all_text: list[Segment], cfg: PanelConfig) -> bool:
    """True when a and b are close enough and no text segment sits between."""
    if a.bbox.gap_distance(b.bbox) > cfg.neighbor_max_gap:
        return False
    gap = between_box(a.bbox, b.bbox)
    if gap is None:
        return True
    for t in all_text:
        if t.kind == SegmentKind.TEXT and t.id not in (a.id, b.id):
            if t.bbox.intersection_area(gap) > 0:
                return False
    return True


def detect_regions(
    segments: list[Segment], scores: Mapping[int, float], cfg: PanelConfig | None = None
) -> list[GelRegion]:
    """Connected components of high-recall gel segments under the neighbor
    relation, kept only when they contain a high-precision seed."""
    cfg = cfg or PanelConfig()
    text_segments = [s for s in segments if s.kind == SegmentKind.TEXT]
    candidates = [
        s
        for s in segments
        if s.kind == SegmentKind.GRAPHIC
        and scores.get(s.id, 0.0) >= cfg.high_recall_threshold
    ]
    adjacency: dict[int, list[int]] = {s.id: [] for s in candidates}
    for i, a in enumerate(candidates):
        for b in candidates[i + 1 :]:
            if neighbors(a, b, text_segments, cfg):
                adjacency[a.id].append(b.id)
                adjacency[b.id].append(a.id)

    by_id = {s.id: s for s in candidates}
    regions = []
    visited: set[int] = set()
    for start in sorted(adjacency):
        if start in visited:
            continue
        component = []
        queue = deque([start])
        visited.add(start)
        while queue:
            cur = queue.popleft()
            component.append(cur)
            for nxt in adjacency[cur]:
                if nxt not in visited:
                    visited.add(nxt)
                    queue.append(nxt)
        if not any(
            scores.get(sid, 0.0) >= cfg.high_precision_threshold for sid in component
        ):
            continue
        union = by_id[component[0]].bbox
        for sid in component[1:]:
            union = union.union(by_id[sid].bbox)
        regions.append(GelRegion(segment_ids=frozenset(component), union_bbox=union))
    regions.sort(key=lambda r: (r.union_bbox, sorted(r.segment_ids)))
    return regions


def _farthest_edge_distance(box: BBox, region: BBox) -> int:
    """Largest edge-to-edge gap from any point of `box` to `region`."""

    def axis_gap(lo: int, hi: int, r_lo: int, r_hi: int) -> int:
        worst = 0
        for p in (lo, hi):
            if p < r_lo:
                worst = max(worst, r_lo - p - 1)
            elif p > r_hi:
                worst = max(worst, p - r_hi - 1)
        return worst

    return max(
        axis_gap(box.x0, box.x1, region.x0, region.x1),
        axis_gap(box.y0, box.y1, region.y0, region.y1),
    )


def attach_labels(
    region: GelRegion, text_segments: list[Segment], cfg: PanelConfig | None = None
) -> GelPanel:
    """Attach text segments whose nearest edge is within `label_near_max` of
    the region's union box and whose farthest edge stays within
    `label_far_max`. Text inside the union box attaches at distance 0."""
    cfg = cfg or PanelConfig()
    attached = []
    for seg in text_segments:
        if seg.kind != SegmentKind.TEXT:
            continue
        near = seg.bbox.gap_distance(region.union_bbox)
        far = _farthest_edge_distance(seg.bbox, region.union_bbox)
        if near <= cfg.label_near_max and far <= cfg.label_far_max:
            attached.append(seg)
    attached.sort(key=lambda s: (s.bbox, s.id))
    return GelPanel(
        region=region,
        labels=tuple((s.id, s.ocr_text or "") for s in attached),
    )


def _cluster_1d(ordered: list[tuple[float, int]], gap_threshold: float) -> list[list[int]]:
    """Group (coordinate, id) pairs: a new group starts when consecutive
    coordinates differ by more than the threshold."""
    groups: list[list[int]] = []
    prev = None
    for coord, sid in ordered:
        if prev is None or coord - prev > gap_threshold:
            groups.append([])
        groups[-1].append(sid)
        prev = coord
    return groups


def panel_report(panel: GelPanel, segments: list[Segment]) -> PanelReport:
    """Structural report: gel segments arranged into rows and columns by
    center clustering, labels tagged with the side they sit on. No semantic
    roles are assigned."""
    by_id = {s.id: s for s in segments}
    members = [by_id[sid] for sid in sorted(panel.region.segment_ids)]

    row_threshold = median(s.bbox.height for s in members)
    col_threshold = median(s.bbox.width for s in members)
    by_cy = sorted(((s.bbox.center[1], s.id) for s in members))
    by_cx = sorted(((s.bbox.center[0], s.id) for s in members))
    rows = [
        tuple(sorted(group, key=lambda sid: by_id[sid].bbox.center[0]))
        for group in _cluster_1d(by_cy, row_threshold)
    ]
    columns = [
        tuple(sorted(group, key=lambda sid: by_id[sid].bbox.center[1]))
        for group in _cluster_1d(by_cx, col_threshold)
    ]

    region_box = panel.region.union_bbox
    rcx, rcy = region_box.center
    labels = []
    for sid, text in panel.labels:
        box = by_id[sid].bbox
        x_left = box.x1 < region_box.x0
        x_right = box.x0 > region_box.x1
        y_above = box.y1 < region_box.y0
        y_below = box.y0 > region_box.y1
        if (x_left or x_right) and not (y_above or y_below):
            side = "left" if x_left else "right"
        elif (y_above or y_below) and not (x_left or x_right):
            side = "above" if y_above else "below"
        elif x_left or x_right or y_above or y_below:
            # Diagonal: take the axis with the wider gap.
            if box.x_gap(region_box) >= box.y_gap(region_box):
                side = "left" if x_left else "right"
            else:
                side = "above" if y_above else "below"
        else:
            # Overlapping the region box: fall back to center offsets.
            cx, cy = box.center
            if abs(cx - rcx) >= abs(cy - rcy):
                side = "left" if cx < rcx else "right"
            else:
                side = "above" if cy < rcy else "below"
        labels.append((sid, text, side))
    return PanelReport(rows=tuple(rows), columns=tuple(columns), labels=tuple(labels))
