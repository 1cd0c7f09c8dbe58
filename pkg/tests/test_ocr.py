import logging
import sys

import numpy as np
import pytest

from gelminer.imgio import BBox, RasterImage
from gelminer.ocr import (
    CommandEngine,
    OcrEngine,
    ParseError,
    SidecarEngine,
    count_chars,
    load_sidecar,
    parse_sidecar,
    recognize,
)
from gelminer.segmentation import Segment, SegmentKind, SegmentSource


def make_image(w=60, h=40):
    return RasterImage(np.full((h, w, 3), 255, dtype=np.uint8))


def make_segment(i, box):
    return Segment(id=i, bbox=box, kind=SegmentKind.TEXT, source=SegmentSource.COMPONENT)


def test_sidecar_exact_match():
    engine = parse_sidecar("10 10 29 19\tβ-actin\n")
    rec = recognize(engine, make_image(), make_segment(3, BBox(10, 10, 29, 19)))
    assert rec.segment_id == 3
    assert rec.text == "β-actin"
    assert rec.char_count == 7


def test_segment_absent_from_sidecar_yields_empty():
    engine = parse_sidecar("10 10 29 19\tactin\n")
    rec = recognize(engine, make_image(), make_segment(0, BBox(40, 25, 55, 35)))
    assert rec.text == ""
    assert rec.char_count == 0


def test_sidecar_iou_threshold():
    engine = parse_sidecar("0 0 9 9\thit\n")
    # Same-size box shifted by 2 columns: IoU = 80/120 = 2/3 >= 0.5.
    assert engine.recognize_text(make_image(), make_segment(0, BBox(2, 0, 11, 9))) == "hit"
    # Shifted by 8: IoU = 20/180 = 1/9 < 0.5.
    assert engine.recognize_text(make_image(), make_segment(0, BBox(8, 0, 17, 9))) == ""


def test_empty_sidecar_file(tmp_path):
    path = tmp_path / "empty.ocr.tsv"
    path.write_text("", encoding="utf-8")
    engine = load_sidecar(path)
    assert recognize(engine, make_image(), make_segment(0, BBox(0, 0, 9, 9))).text == ""


def test_sidecar_duplicate_boxes_rejected():
    with pytest.raises(ParseError):
        parse_sidecar("1 1 5 5\ta\n1 1 5 5\tb\n")


def test_sidecar_malformed_lines_rejected():
    with pytest.raises(ParseError):
        parse_sidecar("1 2 3\ttext\n")
    with pytest.raises(ParseError):
        parse_sidecar("1 2 3 4 no tab here\n")
    with pytest.raises(ParseError):
        parse_sidecar("5 5 1 1\tinverted box\n")


def test_engine_fault_degrades_to_empty(caplog):
    class Exploding(OcrEngine):
        def recognize_text(self, img, seg):
            raise RuntimeError("backend on fire")

    with caplog.at_level(logging.WARNING, logger="gelminer.ocr"):
        rec = recognize(Exploding(), make_image(), make_segment(7, BBox(0, 0, 9, 9)))
    assert rec.text == ""
    assert rec.char_count == 0
    assert any("segment 7" in m for m in caplog.messages)


def test_command_engine_roundtrip():
    engine = CommandEngine(
        [sys.executable, "-c", "import sys; sys.stdin.buffer.read(); print('hello world')"]
    )
    rec = recognize(engine, make_image(), make_segment(0, BBox(5, 5, 20, 15)))
    assert rec.text == "hello world"
    assert rec.char_count == 10


def test_command_engine_timeout_degrades():
    engine = CommandEngine(
        [sys.executable, "-c", "import time; time.sleep(30)"], timeout=0.5
    )
    rec = recognize(engine, make_image(), make_segment(0, BBox(0, 0, 9, 9)))
    assert rec.text == ""


def test_command_engine_nonzero_exit_degrades():
    engine = CommandEngine([sys.executable, "-c", "import sys; sys.exit(3)"])
    rec = recognize(engine, make_image(), make_segment(0, BBox(0, 0, 9, 9)))
    assert rec.text == ""


def test_command_engine_accepts_shell_string():
    engine = CommandEngine(f"{sys.executable} -c \"print('ok')\"")
    assert engine.argv[0] == sys.executable
    rec = recognize(engine, make_image(), make_segment(0, BBox(0, 0, 9, 9)))
    assert rec.text == "ok"


def test_char_count_ignores_whitespace():
    for text in ("", "a b", "  spaced  out  ", "β-actin", "tab\tand\nnewline"):
        rec_count = count_chars(text)
        assert rec_count == len([c for c in text if not c.isspace()])


def test_recognize_does_not_mutate_inputs():
    img = make_image()
    before = img.pixels.copy()
    seg = make_segment(0, BBox(0, 0, 9, 9))
    recognize(SidecarEngine([]), img, seg)
    assert np.array_equal(img.pixels, before)
    assert seg.ocr_text is None
