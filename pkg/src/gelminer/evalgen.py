"""Synthetic gel-figure corpus with exact ground truth, plus the evaluation
metrics used throughout: detection precision/recall/F at an IoU match rule,
threshold classification reports, and ROC AUC.

Generated figures hold a gel panel (a grid of low-contrast gel cells with
darker elliptical spots, or the white-on-black variant) with label text left
of each row and above each column, and/or distractor elements: photo-noise
blocks, solid rectangles, framed charts, bar groups, and text paragraphs.
"Text" is drawn as vertical bar glyphs: real shapes are irrelevant because
recognition is answered by the sidecar, but the rendered marks must segment
like text (short, sparse, merging into one component per line). Everything is
derived from a per-figure seeded generator, so the same spec yields
byte-identical corpora.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gelminer.imgio import BBox, RasterImage, encode_png
from gelminer.ner import tokenize


class SpecError(Exception):
    """The spec mandates placements that cannot fit the canvas."""


class SingleClass(Exception):
    """ROC AUC needs at least one positive and one negative."""


GENE_LABELS: tuple[str, ...] = (
    "actin", "β-actin", "TP53", "GAPDH", "EGFR", "AKT1", "BRCA1", "CDK2",
    "MYC", "p53", "14-3-3σ", "HSP90", "STAT3", "PTEN", "BCL2", "CASP3",
    "VEGFA", "GSK3B", "vimentin", "tubulin",
)

FILLER_LABELS: tuple[str, ...] = (
    "control", "treated", "untreated", "mock", "vehicle", "NHEM", "C8161",
    "MDA-MB-231", "HeLa", "U87", "lysate", "input", "IgG", "24 hrs",
    "10 min", "48 hrs", "wash", "serum", "DMSO", "si-ctrl",
)

PARAGRAPH_WORDS: tuple[str, ...] = (
    "samples", "were", "washed", "with", "cold", "buffer", "and", "loaded",
    "onto", "the", "lanes", "for", "two", "hours", "at", "room",
    "temperature", "then", "probed", "overnight",
)

_DISTRACTOR_KINDS = ("noise", "solid", "frame", "bars", "paragraph")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    figure_count: int = 10
    width: int = 720
    height: int = 520
    gel_fraction: float = 0.5
    grid_rows: tuple[int, int] = (1, 3)
    grid_cols: tuple[int, int] = (2, 4)
    cell_width: tuple[int, int] = (60, 110)
    cell_height: tuple[int, int] = (36, 60)
    cell_gap: tuple[int, int] = (8, 30)
    gel_background: tuple[int, int] = (150, 200)
    dark_gel_background: tuple[int, int] = (40, 80)
    spot_contrast: tuple[int, int] = (40, 70)
    dark_gel_fraction: float = 0.2
    label_gap: tuple[int, int] = (5, 25)
    gene_label_fraction: float = 0.6
    max_panel_distractors: int = 2

    def __post_init__(self) -> None:
        if self.figure_count < 0:
            raise SpecError("figure_count must be >= 0")
        # Worst case placement: largest panel origin, most cells, widest gaps.
        panel_w = 135 + self.grid_cols[1] * self.cell_width[0] + (
            self.grid_cols[1] - 1
        ) * self.cell_gap[1]
        panel_h = 75 + self.grid_rows[1] * self.cell_height[0] + (
            self.grid_rows[1] - 1
        ) * self.cell_gap[1]
        if panel_w > self.width - 12 or panel_h > self.height - 12:
            raise SpecError("canvas cannot hold the mandated gel grid")
        if self.cell_width[0] < 20 or self.cell_height[0] < 20:
            raise SpecError("gel cells too small for spot placement")


@dataclass(frozen=True)
class TextTruth:
    bbox: BBox
    text: str
    genes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"bbox": list(self.bbox.as_tuple()), "text": self.text,
                "genes": list(self.genes)}

    @classmethod
    def from_dict(cls, d: dict) -> "TextTruth":
        return cls(bbox=BBox(*d["bbox"]), text=d["text"], genes=tuple(d["genes"]))


@dataclass(frozen=True)
class PanelTruth:
    cells: tuple[BBox, ...]
    union: BBox
    labels: tuple[TextTruth, ...]

    def to_dict(self) -> dict:
        return {
            "cells": [list(c.as_tuple()) for c in self.cells],
            "union": list(self.union.as_tuple()),
            "labels": [l.to_dict() for l in self.labels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PanelTruth":
        return cls(
            cells=tuple(BBox(*c) for c in d["cells"]),
            union=BBox(*d["union"]),
            labels=tuple(TextTruth.from_dict(l) for l in d["labels"]),
        )


@dataclass(frozen=True)
class GroundTruth:
    figure_id: str
    width: int
    height: int
    panels: tuple[PanelTruth, ...] = ()
    other_text: tuple[TextTruth, ...] = ()
    distractors: tuple[BBox, ...] = ()

    @property
    def gel_cells(self) -> list[BBox]:
        return [c for p in self.panels for c in p.cells]

    @property
    def all_text(self) -> list[TextTruth]:
        return [l for p in self.panels for l in p.labels] + list(self.other_text)

    @property
    def counters(self) -> dict[str, int]:
        labels = [l for p in self.panels for l in p.labels]
        return {
            "panels": len(self.panels),
            "labels": len(labels),
            "label_tokens": sum(len(tokenize(l.text)) for l in labels),
            "label_genes": sum(len(l.genes) for l in labels),
            "text_tokens": sum(len(tokenize(t.text)) for t in self.all_text),
            "text_genes": sum(len(t.genes) for t in self.all_text),
        }

    def to_dict(self) -> dict:
        return {
            "figure_id": self.figure_id,
            "width": self.width,
            "height": self.height,
            "panels": [p.to_dict() for p in self.panels],
            "other_text": [t.to_dict() for t in self.other_text],
            "distractors": [list(b.as_tuple()) for b in self.distractors],
            "counters": self.counters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            figure_id=d["figure_id"],
            width=d["width"],
            height=d["height"],
            panels=tuple(PanelTruth.from_dict(p) for p in d["panels"]),
            other_text=tuple(TextTruth.from_dict(t) for t in d["other_text"]),
            distractors=tuple(BBox(*b) for b in d["distractors"]),
        )


@dataclass(frozen=True)
class GeneratedFigure:
    figure_id: str
    image: RasterImage
    truth: GroundTruth
    sidecar: str


def _pick(rng: np.random.Generator, items: tuple[str, ...]) -> str:
    return items[int(rng.integers(0, len(items)))]


def _bar_height(char_index: int) -> int:
    # Period-4 pattern keeps the glyph fill ratio under 0.5 for any length
    # and guarantees the first bar reaches the top of the 10-px line box.
    if char_index % 4 == 0:
        return 10
    return 6 if char_index % 2 == 1 else 8


def _render_text_bars(canvas: np.ndarray, x0: int, y0: int, text: str) -> BBox:
    """Draw fake glyphs: one 2-px bar per non-space character, bottom-aligned
    on a 10-px line. Returns the exact content bbox."""
    chars = [c for c in text if not c.isspace()]
    x = x0
    for i, _ in enumerate(chars):
        h = _bar_height(i)
        canvas[y0 + 10 - h : y0 + 10, x : x + 2] = 0
        x += 4
    return BBox(x0, y0, x - 3, y0 + 9)


def text_width(text: str) -> int:
    """Rendered width of bar-glyph text."""
    return 4 * sum(1 for c in text if not c.isspace()) - 2


def _fill_rect(canvas: np.ndarray, box: BBox, value: int) -> None:
    canvas[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1] = value


def _draw_spots(canvas: np.ndarray, cell: BBox, rng: np.random.Generator, value: int) -> None:
    for _ in range(int(rng.integers(1, 4))):
        cx = int(rng.integers(cell.x0 + 8, cell.x1 - 7))
        cy = int(rng.integers(cell.y0 + 7, cell.y1 - 6))
        rx = int(rng.integers(4, min(10, cx - cell.x0 - 2, cell.x1 - 2 - cx) + 1))
        ry = int(rng.integers(3, min(6, cy - cell.y0 - 2, cell.y1 - 2 - cy) + 1))
        ys = np.arange(cy - ry, cy + ry + 1)
        xs = np.arange(cx - rx, cx + rx + 1)
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        region = canvas[cy - ry : cy + ry + 1, cx - rx : cx + rx + 1]
        region[inside] = value


def _draw_distractor(
    canvas: np.ndarray, box: BBox, kind: str, rng: np.random.Generator
) -> None:
    if kind == "noise":
        canvas[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1] = rng.integers(
            0, 221, size=(box.height, box.width), dtype=np.uint8
        )[:, :, None]
    elif kind == "solid":
        _fill_rect(canvas, box, int(rng.integers(0, 101)))
    elif kind == "frame":
        _fill_rect(canvas, box, 0)
        _fill_rect(canvas, BBox(box.x0 + 2, box.y0 + 2, box.x1 - 2, box.y1 - 2), 255)
        for _ in range(int(rng.integers(3, 7))):
            dx = int(rng.integers(box.x0 + 6, box.x1 - 7))
            dy = int(rng.integers(box.y0 + 6, box.y1 - 7))
            canvas[dy : dy + 3, dx : dx + 3] = 0
    elif kind == "bars":
        x = box.x0
        while x + 6 <= box.x1 + 1:
            h = int(rng.integers(12, box.height + 1))
            canvas[box.y1 + 1 - h : box.y1 + 1, x : x + 6] = 40
            x += 10


def _make_paragraph(
    canvas: np.ndarray, x0: int, y0: int, rng: np.random.Generator
) -> list[TextTruth]:
    lines = []
    y = y0
    for _ in range(int(rng.integers(2, 4))):
        words: list[str] = []
        while True:
            candidate = words + [_pick(rng, PARAGRAPH_WORDS)]
            if text_width(" ".join(candidate)) > 120 and words:
                break
            words = candidate
            if text_width(" ".join(words)) > 96:
                break
        text = " ".join(words)
        bbox = _render_text_bars(canvas, x0, y, text)
        lines.append(TextTruth(bbox=bbox, text=text))
        y += 16
    return lines


def _gel_panel(
    canvas: np.ndarray, spec: SyntheticSpec, rng: np.random.Generator
) -> PanelTruth:
    rows = int(rng.integers(spec.grid_rows[0], spec.grid_rows[1] + 1))
    cols = int(rng.integers(spec.grid_cols[0], spec.grid_cols[1] + 1))
    gap_x = int(rng.integers(spec.cell_gap[0], spec.cell_gap[1] + 1))
    gap_y = int(rng.integers(spec.cell_gap[0], spec.cell_gap[1] + 1))
    px = int(rng.integers(115, 136))
    py = int(rng.integers(55, 76))
    max_cw = min(spec.cell_width[1], (spec.width - 12 - px - (cols - 1) * gap_x) // cols)
    max_ch = min(spec.cell_height[1], (spec.height - 12 - py - (rows - 1) * gap_y) // rows)
    if max_cw < spec.cell_width[0] or max_ch < spec.cell_height[0]:
        raise SpecError("gel grid does not fit the canvas")
    cw = int(rng.integers(spec.cell_width[0], max_cw + 1))
    ch = int(rng.integers(spec.cell_height[0], max_ch + 1))

    dark = rng.random() < spec.dark_gel_fraction
    lo, hi = spec.dark_gel_background if dark else spec.gel_background
    base = int(rng.integers(lo, hi + 1))
    delta = int(rng.integers(spec.spot_contrast[0], spec.spot_contrast[1] + 1))
    spot_value = base + delta if dark else base - delta

    cells = []
    for r in range(rows):
        for c in range(cols):
            x0 = px + c * (cw + gap_x)
            y0 = py + r * (ch + gap_y)
            cell = BBox(x0, y0, x0 + cw - 1, y0 + ch - 1)
            _fill_rect(canvas, cell, base)
            _draw_spots(canvas, cell, rng, spot_value)
            cells.append(cell)

    def label_text() -> tuple[str, tuple[str, ...]]:
        if rng.random() < spec.gene_label_fraction:
            token = _pick(rng, GENE_LABELS)
            return token, (token,)
        return _pick(rng, FILLER_LABELS), ()

    labels = []
    for r in range(rows):
        text, genes = label_text()
        gap = int(rng.integers(spec.label_gap[0], spec.label_gap[1] + 1))
        x1 = px - gap - 1
        x0 = x1 - text_width(text) + 1
        y0 = py + r * (ch + gap_y) + (ch - 10) // 2
        bbox = _render_text_bars(canvas, x0, y0, text)
        labels.append(TextTruth(bbox=bbox, text=text, genes=genes))
    for c in range(cols):
        text, genes = label_text()
        gap = int(rng.integers(spec.label_gap[0], spec.label_gap[1] + 1))
        y1 = py - gap - 1
        col_x0 = px + c * (cw + gap_x)
        x0 = col_x0 + (cw - text_width(text)) // 2
        bbox = _render_text_bars(canvas, x0, y1 - 9, text)
        labels.append(TextTruth(bbox=bbox, text=text, genes=genes))

    union = cells[0]
    for cell in cells[1:]:
        union = union.union(cell)
    return PanelTruth(cells=tuple(cells), union=union, labels=tuple(labels))


def _distractor_shelf(
    canvas: np.ndarray,
    spec: SyntheticSpec,
    rng: np.random.Generator,
    y0: int,
    count: int,
    kinds: tuple[str, ...] = _DISTRACTOR_KINDS,
) -> tuple[list[BBox], list[TextTruth]]:
    boxes: list[BBox] = []
    texts: list[TextTruth] = []
    x = int(rng.integers(16, 41))
    for _ in range(count):
        kind = _pick(rng, kinds)
        if kind == "paragraph":
            if x + 124 > spec.width - 12:
                break
            texts.extend(_make_paragraph(canvas, x, y0, rng))
            x += 148
            continue
        w = int(rng.integers(60, 131))
        h = int(rng.integers(40, min(100, spec.height - 12 - y0) + 1))
        if x + w > spec.width - 12:
            break
        box = BBox(x, y0, x + w - 1, y0 + h - 1)
        _draw_distractor(canvas, box, kind, rng)
        boxes.append(box)
        x += w + 24
    return boxes, texts


def generate(spec: SyntheticSpec) -> list[GeneratedFigure]:
    """Render the corpus. Deterministic: figure i draws only from a generator
    seeded with (spec.seed, i)."""
    figures = []
    for i in range(spec.figure_count):
        rng = np.random.default_rng([spec.seed, i])
        figure_id = f"fig{i:04d}"
        canvas = np.full((spec.height, spec.width, 3), 255, dtype=np.uint8)
        panels: tuple[PanelTruth, ...] = ()
        other_text: list[TextTruth] = []
        distractors: list[BBox] = []

        if rng.random() < spec.gel_fraction:
            panel = _gel_panel(canvas, spec, rng)
            panels = (panel,)
            shelf_y = panel.union.y1 + 80
            count = int(rng.integers(0, spec.max_panel_distractors + 1))
            if count and shelf_y + 40 <= spec.height - 12:
                boxes, texts = _distractor_shelf(canvas, spec, rng, shelf_y, count)
                distractors.extend(boxes)
                other_text.extend(texts)
        else:
            top_y = int(rng.integers(30, 61))
            mid_y = int(rng.integers(200, 241))
            boxes, texts = _distractor_shelf(
                canvas, spec, rng, top_y, int(rng.integers(1, 4)),
                kinds=("noise", "solid", "frame", "bars"),
            )
            distractors.extend(boxes)
            other_text.extend(texts)
            boxes, texts = _distractor_shelf(
                canvas, spec, rng, mid_y, int(rng.integers(1, 4)),
                kinds=("noise", "solid", "frame", "bars"),
            )
            distractors.extend(boxes)
            other_text.extend(texts)
            para_y = int(rng.integers(380, 421))
            other_text.extend(_make_paragraph(canvas, int(rng.integers(16, 101)), para_y, rng))

        truth = GroundTruth(
            figure_id=figure_id,
            width=spec.width,
            height=spec.height,
            panels=panels,
            other_text=tuple(other_text),
            distractors=tuple(distractors),
        )
        sidecar = "".join(
            f"{t.bbox.x0} {t.bbox.y0} {t.bbox.x1} {t.bbox.y1}\t{t.text}\n"
            for t in truth.all_text
        )
        figures.append(
            GeneratedFigure(
                figure_id=figure_id,
                image=RasterImage(canvas),
                truth=truth,
                sidecar=sidecar,
            )
        )
    return figures


def write_corpus(figures: list[GeneratedFigure], out_dir: str | Path) -> None:
    """One PNG + ground-truth JSON + OCR sidecar per figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fig in figures:
        (out / f"{fig.figure_id}.png").write_bytes(encode_png(fig.image))
        (out / f"{fig.figure_id}.truth.json").write_text(
            json.dumps(fig.truth.to_dict(), sort_keys=True) + "\n", encoding="utf-8"
        )
        (out / f"{fig.figure_id}.ocr.tsv").write_text(fig.sidecar, encoding="utf-8")


def load_truth(path: str | Path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def fscore(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f_score: float
    matched: int = 0
    predicted_count: int = 0
    truth_count: int = 0


def prf(predicted: list[BBox], truth: list[BBox], iou_threshold: float = 0.5) -> PRF:
    """Detection metrics under greedy one-to-one matching by descending IoU.
    Empty predicted+truth counts as perfect (no errors were made)."""
    if not predicted and not truth:
        return PRF(1.0, 1.0, 1.0, 0, 0, 0)
    pairs = []
    for pi, p in enumerate(predicted):
        for ti, t in enumerate(truth):
            iou = p.iou(t)
            if iou >= iou_threshold:
                pairs.append((-iou, pi, ti))
    pairs.sort()
    used_p: set[int] = set()
    used_t: set[int] = set()
    matched = 0
    for _, pi, ti in pairs:
        if pi in used_p or ti in used_t:
            continue
        used_p.add(pi)
        used_t.add(ti)
        matched += 1
    precision = matched / len(predicted) if predicted else 0.0
    recall = matched / len(truth) if truth else 0.0
    return PRF(precision, recall, fscore(precision, recall),
               matched, len(predicted), len(truth))


def roc_auc(scored: list[tuple[float, bool]]) -> float:
    """Trapezoidal area under the ROC curve, sweeping every threshold; tied
    scores step together (equivalent to counting tied pairs as half wins)."""
    n_pos = sum(1 for _, label in scored if label)
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("need both classes for ROC AUC")
    ordered = sorted(scored, key=lambda item: -item[0])
    area = 0.0
    tp = fp = 0
    i = 0
    while i < len(ordered):
        j = i
        d_tp = d_fp = 0
        while j < len(ordered) and ordered[j][0] == ordered[i][0]:
            if ordered[j][1]:
                d_tp += 1
            else:
                d_fp += 1
            j += 1
        area += d_fp * (tp + tp + d_tp) / 2.0
        tp += d_tp
        fp += d_fp
        i = j
    return area / (n_pos * n_neg)


@dataclass(frozen=True)
class ThresholdRow:
    threshold: float
    precision: float
    recall: float
    f_score: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ThresholdRow, ...]
    auc: float

    def to_dict(self) -> dict:
        return {
            "thresholds": [
                {"threshold": r.threshold, "precision": r.precision,
                 "recall": r.recall, "f_score": r.f_score}
                for r in self.rows
            ],
            "auc": self.auc,
        }


DEFAULT_THRESHOLDS = (0.15, 0.30, 0.60)


def classification_report(
    scored: list[tuple[float, bool]],
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Per-threshold precision/recall/F over scored examples, plus AUC."""
    rows = []
    for t in thresholds:
        tp = sum(1 for s, label in scored if label and s >= t)
        fp = sum(1 for s, label in scored if not label and s >= t)
        fn = sum(1 for s, label in scored if label and s < t)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        rows.append(ThresholdRow(t, precision, recall, fscore(precision, recall)))
    return EvalReport(rows=tuple(rows), auc=roc_auc(scored))
