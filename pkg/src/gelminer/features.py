"""The 39-value feature vector the gel classifier consumes.

Fixed order (a compatibility contract with saved forest models):

    [0]  rel_center_x      bbox center x / image width
    [1]  rel_center_y      bbox center y / image height
    [2]  rel_width         bbox width / image width
    [3]  rel_height        bbox height / image height
    [4]  abs_width         bbox width in pixels
    [5]  abs_height        bbox height in pixels
    [6..21]  hist_00..hist_15   16 grayscale histogram bins of width 16,
                                normalized to sum 1 over the bbox crop
    [22..24] mean_r, mean_g, mean_b   channel means over the crop, in [0, 1]
    [25..37] texture_01..texture_13   Haralick features f1..f13 on the
                                      quantized crop, averaged over the four
                                      offsets 0/45/90/135 degrees
    [38] char_count        recognized non-whitespace characters

Haralick f1..f13: angular second moment, contrast, correlation, variance,
inverse difference moment, sum average, sum variance, sum entropy, entropy,
difference variance, difference entropy, and the two information measures of
correlation. f14 is not computed. Entropies use the natural log with
log(0) := 0; correlation-style features return 0 when a marginal standard
deviation vanishes, so constant crops stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gelminer.imgio import GrayImage, RasterImage, crop
from gelminer.ocr import TextRecognition
from gelminer.segmentation import Segment

FEATURE_COUNT = 39

FEATURE_NAMES: tuple[str, ...] = (
    "rel_center_x",
    "rel_center_y",
    "rel_width",
    "rel_height",
    "abs_width",
    "abs_height",
    *(f"hist_{i:02d}" for i in range(16)),
    "mean_r",
    "mean_g",
    "mean_b",
    *(f"texture_{i:02d}" for i in range(1, 14)),
    "char_count",
)

# GLCM offsets as (dy, dx) for 0, 45, 90, 135 degrees at unit distance.
DIRECTIONS: tuple[tuple[int, int], ...] = ((0, 1), (-1, 1), (-1, 0), (-1, -1))


class TooSmall(Exception):
    """No valid pixel pair exists for the requested offset."""


class DegenerateSegment(Exception):
    """The segment covers no pixels."""


@dataclass(frozen=True)
class GlcmConfig:
    levels: int = 32
    distance: int = 1
    symmetric: bool = True

    def __post_init__(self) -> None:
        if self.levels < 2:
            raise ValueError("need at least 2 gray levels")
        if self.distance < 1:
            raise ValueError("distance must be >= 1")


def quantize(values: np.ndarray, levels: int) -> np.ndarray:
    """Uniform quantization of [0, 255] into `levels` buckets."""
    return (values.astype(np.int64) * levels) // 256


def _glcm_from_quantized(
    q: np.ndarray, levels: int, direction: tuple[int, int], distance: int, symmetric: bool
) -> np.ndarray:
    dy, dx = direction[0] * distance, direction[1] * distance
    h, w = q.shape
    if h <= abs(dy) or w <= abs(dx):
        raise TooSmall(f"no pixel pair for offset {direction} at distance {distance}")
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    src = q[ys, xs]
    dst = q[max(0, dy) : h + min(0, dy), max(0, dx) : w + min(0, dx)]
    codes = src.ravel() * levels + dst.ravel()
    counts = np.bincount(codes, minlength=levels * levels).reshape(levels, levels)
    counts = counts.astype(np.float64)
    if symmetric:
        counts = counts + counts.T
    return counts / counts.sum()


def glcm(gray: GrayImage, cfg: GlcmConfig, direction: tuple[int, int]) -> np.ndarray:
    """Normalized gray-level co-occurrence matrix for one (dy, dx) offset."""
    q = quantize(gray.values, cfg.levels)
    return _glcm_from_quantized(q, cfg.levels, direction, cfg.distance, cfg.symmetric)


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def haralick13(P: np.ndarray) -> np.ndarray:
    """Thirteen texture statistics of a normalized co-occurrence matrix."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("P must be square")
    L = P.shape[0]
    i = np.arange(L, dtype=np.float64)
    px = P.sum(axis=1)
    py = P.sum(axis=0)
    mu_x = float((i * px).sum())
    mu_y = float((i * py).sum())
    sigma_x = float(np.sqrt(((i - mu_x) ** 2 * px).sum()))
    sigma_y = float(np.sqrt(((i - mu_y) ** 2 * py).sum()))

    ii, jj = np.meshgrid(i, i, indexing="ij")
    k_sum = np.arange(2 * L - 1, dtype=np.float64)
    p_sum = np.bincount((ii + jj).astype(np.intp).ravel(), weights=P.ravel(),
                        minlength=2 * L - 1)
    k_diff = np.arange(L, dtype=np.float64)
    p_diff = np.bincount(np.abs(ii - jj).astype(np.intp).ravel(), weights=P.ravel(),
                         minlength=L)

    f1 = float((P**2).sum())
    f2 = float((k_diff**2 * p_diff).sum())
    if sigma_x > 0 and sigma_y > 0:
        f3 = float(((ii * jj * P).sum() - mu_x * mu_y) / (sigma_x * sigma_y))
    else:
        f3 = 0.0
    f4 = sigma_x**2
    f5 = float((P / (1.0 + (ii - jj) ** 2)).sum())
    f6 = float((k_sum * p_sum).sum())
    f7 = float(((k_sum - f6) ** 2 * p_sum).sum())
    f8 = _entropy(p_sum)
    f9 = _entropy(P)
    mu_diff = float((k_diff * p_diff).sum())
    f10 = float(((k_diff - mu_diff) ** 2 * p_diff).sum())
    f11 = _entropy(p_diff)

    hx = _entropy(px)
    hy = _entropy(py)
    marg = np.outer(px, py)
    nz = marg > 0
    hxy1 = float(-(P[nz] * np.log(marg[nz])).sum())
    hxy2 = float(-(marg[nz] * np.log(marg[nz])).sum())
    denom = max(hx, hy)
    f12 = (f9 - hxy1) / denom if denom > 0 else 0.0
    f13 = float(np.sqrt(max(0.0, 1.0 - np.exp(-2.0 * (hxy2 - f9)))))

    return np.array([f1, f2, f3, f4, f5, f6, f7, f8, f9, f10, f11, f12, f13])


def _texture_features(gray_crop: np.ndarray, cfg: GlcmConfig) -> np.ndarray:
    """Haralick features averaged over the four offsets; offsets with no valid
    pixel pair are skipped, and a crop too small for any offset yields zeros."""
    q = quantize(gray_crop, cfg.levels)
    per_direction = []
    for direction in DIRECTIONS:
        try:
            P = _glcm_from_quantized(q, cfg.levels, direction, cfg.distance, cfg.symmetric)
        except TooSmall:
            continue
        per_direction.append(haralick13(P))
    if not per_direction:
        return np.zeros(13)
    return np.mean(per_direction, axis=0)


def extract_features(
    img: RasterImage,
    gray: GrayImage,
    seg: Segment,
    rec: TextRecognition,
    glcm_cfg: GlcmConfig | None = None,
) -> np.ndarray:
    """The 39-value vector for one segment, in the documented order."""
    glcm_cfg = glcm_cfg or GlcmConfig()
    box = seg.bbox
    if box.area < 1:
        raise DegenerateSegment(f"segment {seg.id} has empty bbox")
    cx, cy = box.center
    gray_crop = crop(gray, box).values
    rgb_crop = crop(img, box).pixels

    hist = np.bincount(gray_crop.ravel() >> 4, minlength=16).astype(np.float64)
    hist /= hist.sum()
    color_means = rgb_crop.reshape(-1, 3).mean(axis=0) / 255.0

    vector = np.empty(FEATURE_COUNT)
    vector[0] = cx / img.width
    vector[1] = cy / img.height
    vector[2] = box.width / img.width
    vector[3] = box.height / img.height
    vector[4] = float(box.width)
    vector[5] = float(box.height)
    vector[6:22] = hist
    vector[22:25] = color_means
    vector[25:38] = _texture_features(gray_crop, glcm_cfg)
    vector[38] = float(rec.char_count)
    return vector
