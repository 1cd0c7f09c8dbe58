"""Text recognition behind a pluggable engine interface.

No OCR is implemented here. The sidecar engine answers from a ground-truth
file and is authoritative in tests; the command engine shells out to any
external tool that reads PNG bytes on stdin and writes UTF-8 text on stdout.
Engine faults never fail the pipeline: recognition degrades to empty text.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

from gelminer.imgio import BBox, RasterImage, crop, encode_png
from gelminer.segmentation import Segment

logger = logging.getLogger(__name__)

SIDECAR_MATCH_IOU = 0.5


class ParseError(Exception):
    """Raised on a malformed sidecar file."""


@dataclass(frozen=True)
class TextRecognition:
    segment_id: int
    text: str
    char_count: int


def count_chars(text: str) -> int:
    """Non-whitespace character count; feature 39's definition."""
    return sum(1 for c in text if not c.isspace())


class OcrEngine:
    """Contract: deterministic text for a fixed (image, segment) input."""

    def recognize_text(self, img: RasterImage, seg: Segment) -> str:
        raise NotImplementedError

    def text_box(self, seg: Segment) -> BBox | None:
        """Where the recognized characters sit, when the engine knows.

        Used to revise a segment's kind; engines without positional output
        return None and the provisional kind stands.
        """
        return None


class SidecarEngine(OcrEngine):
    """Answers from (bbox, text) records; a segment gets the text of the
    best-overlapping record with IoU >= 0.5."""

    def __init__(self, entries: list[tuple[BBox, str]]):
        self.entries = list(entries)

    def _best_entry(self, seg: Segment) -> tuple[BBox, str] | None:
        best = None
        best_iou = 0.0
        for box, text in self.entries:
            iou = box.iou(seg.bbox)
            if iou >= SIDECAR_MATCH_IOU and iou > best_iou:
                best = (box, text)
                best_iou = iou
        return best

    def recognize_text(self, img: RasterImage, seg: Segment) -> str:
        entry = self._best_entry(seg)
        return entry[1] if entry else ""

    def text_box(self, seg: Segment) -> BBox | None:
        entry = self._best_entry(seg)
        return entry[0] if entry else None


class CommandEngine(OcrEngine):
    """Runs an external command per segment: PNG on stdin, text on stdout,
    exit 0. Failures raise and are degraded to empty text by recognize()."""

    def __init__(self, command: str | list[str], timeout: float = 10.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def recognize_text(self, img: RasterImage, seg: Segment) -> str:
        png = encode_png(crop(img, seg.bbox))
        result = subprocess.run(
            self.argv,
            input=png,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            timeout=self.timeout,
            check=True,
        )
        return result.stdout.decode("utf-8").rstrip("\n")


def parse_sidecar(content: str) -> SidecarEngine:
    """Sidecar format: one record per line, `x0 y0 x1 y1 TAB text` (UTF-8)."""
    entries: list[tuple[BBox, str]] = []
    seen: set[tuple[int, int, int, int]] = set()
    for lineno, line in enumerate(content.splitlines(), start=1):
        if not line.strip():
            continue
        coords_part, sep, text = line.partition("\t")
        if not sep:
            raise ParseError(f"line {lineno}: missing TAB separator")
        fields = coords_part.split()
        if len(fields) != 4:
            raise ParseError(f"line {lineno}: expected 4 coordinates, got {len(fields)}")
        try:
            x0, y0, x1, y1 = (int(f) for f in fields)
            box = BBox(x0, y0, x1, y1)
        except ValueError as exc:
            raise ParseError(f"line {lineno}: bad box: {exc}") from exc
        key = box.as_tuple()
        if key in seen:
            raise ParseError(f"line {lineno}: duplicate box {key}")
        seen.add(key)
        entries.append((box, text))
    return SidecarEngine(entries)


def load_sidecar(path: str | Path) -> SidecarEngine:
    return parse_sidecar(Path(path).read_text(encoding="utf-8"))


def recognize(engine: OcrEngine, img: RasterImage, seg: Segment) -> TextRecognition:
    """Run the engine on one segment; any engine fault degrades to empty text."""
    try:
        text = engine.recognize_text(img, seg)
    except Exception as exc:
        logger.warning("OCR engine failed on segment %d: %s", seg.id, exc)
        text = ""
    return TextRecognition(segment_id=seg.id, text=text, char_count=count_chars(text))
