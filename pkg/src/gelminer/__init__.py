"""gelminer: mining gel electrophoresis panels from biomedical figure rasters.

Pipeline stages: image decoding, segmentation, text recognition, gel segment
classification, gel panel grouping, gene name tagging. A synthetic figure
generator and an evaluation harness support end-to-end verification without
any external corpus or OCR engine.
"""

from gelminer.imgio import BBox, DecodeError, GrayImage, OutOfBounds, RasterImage
from gelminer.segmentation import Segment, SegmentationConfig, SegmentKind, SegmentSource

__all__ = [
    "BBox",
    "DecodeError",
    "GrayImage",
    "OutOfBounds",
    "RasterImage",
    "Segment",
    "SegmentKind",
    "SegmentSource",
    "SegmentationConfig",
]

__version__ = "0.1.0"
