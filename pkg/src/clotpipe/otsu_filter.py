"""Otsu thresholding and the minimum-content rule for tile filtering.

Tissue is darker than the white slide background, so "content" is the
fraction of pixels at or below the Otsu threshold. Tiles whose content
ratio is not strictly above the minimum (default 30%) are discarded.

The threshold search runs in exact integer arithmetic: between-class
variance w0*w1*(mu0-mu1)^2 is compared as the rational
(s0*w1 - s1*w0)^2 / (w0*w1) via cross-multiplication, so the argmax is
exact for any pixel counts and ties resolve to the smallest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

GRAY_LEVELS = 256

# Rec.601 luma coefficients.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Rec.601 luma, rounded to uint8: round(0.299 R + 0.587 G + 0.114 B)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) RGB buffer")
    luma = pixels.astype(np.float64) @ _LUMA_WEIGHTS
    return np.clip(np.rint(luma), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class GrayHistogram:
    """256-bin intensity histogram of one tile."""

    bins: np.ndarray  # (256,) int64

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.int64)
        if bins.shape != (GRAY_LEVELS,):
            raise ValueError("histogram must have exactly 256 bins")
        if (bins < 0).any():
            raise ValueError("histogram counts must be nonnegative")
        if bins.sum() < 1:
            raise ValueError("histogram must count at least one pixel")
        object.__setattr__(self, "bins", bins)

    @classmethod
    def from_gray(cls, gray: np.ndarray) -> "GrayHistogram":
        counts = np.bincount(np.asarray(gray, dtype=np.uint8).ravel(),
                             minlength=GRAY_LEVELS)
        return cls(counts.astype(np.int64))

    @classmethod
    def from_pixels(cls, pixels: np.ndarray) -> "GrayHistogram":
        return cls.from_gray(to_grayscale(pixels))

    @property
    def total(self) -> int:
        return int(self.bins.sum())


class OtsuResult(NamedTuple):
    threshold: int
    degenerate: bool  # single gray level; threshold is that level


def otsu_threshold(hist: GrayHistogram) -> OtsuResult:
    """Threshold maximizing between-class variance; class 0 is luma <= t.

    Thresholds where either class is empty are skipped. A single-level
    histogram returns that level with the degenerate flag set.
    """
    bins = [int(b) for b in hist.bins]
    nonzero = [i for i, b in enumerate(bins) if b > 0]
    if len(nonzero) == 1:
        return OtsuResult(nonzero[0], True)

    total = sum(bins)
    total_sum = sum(i * b for i, b in enumerate(bins))
    w0 = 0
    s0 = 0
    best_t = -1
    # sigma_b(t) as exact rational num/den; compare a/b > c/d via a*d > c*b.
    best_num = 0
    best_den = 1
    for t in range(GRAY_LEVELS):
        w0 += bins[t]
        s0 += t * bins[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        diff = s0 * w1 - (total_sum - s0) * w0
        num = diff * diff
        den = w0 * w1
        if best_t < 0 or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return OtsuResult(best_t, False)


def between_class_variance(hist: GrayHistogram) -> np.ndarray:
    """sigma_b^2(t) for all 256 thresholds (nan where a class is empty)."""
    bins = hist.bins.astype(np.float64)
    total = bins.sum()
    w0 = np.cumsum(bins)
    w1 = total - w0
    s0 = np.cumsum(bins * np.arange(GRAY_LEVELS))
    total_sum = s0[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = s0 / w0
        mu1 = (total_sum - s0) / w1
        sigma = (w0 / total) * (w1 / total) * (mu0 - mu1) ** 2
    sigma[(w0 == 0) | (w1 == 0)] = np.nan
    return sigma


def within_class_variance(hist: GrayHistogram) -> np.ndarray:
    """sigma_w^2(t) = w0*var0 + w1*var1 for all thresholds (nan where empty)."""
    bins = hist.bins.astype(np.float64)
    total = bins.sum()
    levels = np.arange(GRAY_LEVELS, dtype=np.float64)
    w0 = np.cumsum(bins)
    w1 = total - w0
    s0 = np.cumsum(bins * levels)
    q0 = np.cumsum(bins * levels**2)
    s1 = s0[-1] - s0
    q1 = q0[-1] - q0
    with np.errstate(invalid="ignore", divide="ignore"):
        var0 = q0 / w0 - (s0 / w0) ** 2
        var1 = q1 / w1 - (s1 / w1) ** 2
        sigma = (w0 / total) * var0 + (w1 / total) * var1
    sigma[(w0 == 0) | (w1 == 0)] = np.nan
    return sigma


def content_ratio(
    pixels: np.ndarray,
    threshold: int,
    degenerate: bool = False,
    valid_size: tuple[int, int] | None = None,
) -> float:
    """Fraction of tile pixels on the tissue (dark) side of the threshold.

    A degenerate threshold (single-level tile) defines the ratio as 0.
    `valid_size=(rows, cols)` marks the in-bounds region of a padded tile;
    padding counts as background regardless of fill color.
    """
    if degenerate:
        return 0.0
    gray = to_grayscale(pixels)
    if valid_size is not None:
        rows, cols = valid_size
        dark = int((gray[:rows, :cols] <= threshold).sum())
    else:
        dark = int((gray <= threshold).sum())
    return dark / gray.size


def tile_content(pixels: np.ndarray,
                 valid_size: tuple[int, int] | None = None
                 ) -> tuple[OtsuResult, float]:
    """Otsu threshold and content ratio of one tile in one pass."""
    result = otsu_threshold(GrayHistogram.from_pixels(pixels))
    ratio = content_ratio(pixels, result.threshold, result.degenerate, valid_size)
    return result, ratio


def apply_content_filter(records: Iterable, min_ratio: float = 0.30) -> list:
    """Discard records whose content ratio is not strictly above `min_ratio`.

    Matches the "more than 30%" rule: a ratio exactly at the cutoff is
    discarded. Records already discarded for another reason keep their
    original reason; everything else is untouched. Idempotent.
    """
    out = []
    for record in records:
        ratio = record.content_ratio
        if ratio is not None and ratio <= min_ratio:
            if record.kept or record.discard_reason == "low_content":
                record.kept = False
                record.discard_reason = "low_content"
        out.append(record)
    return out
