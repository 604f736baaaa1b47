"""Deterministic synthetic slide generator for desk-scale runs.

Slides are a white background with circular tissue blobs; blob pixels get
per-class Gaussian color noise around a class mean plus sparse dark streaks,
so the two classes are linearly separable in the hand-crafted feature space.
A sidecar mask marks exactly the blob pixels.

Rendering is banded: a slide of any size is produced in fixed-height row
bands with per-band seeded noise, so identical config+seed yields identical
bytes regardless of memory or caller behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .png_codec import PngWriter
from .slide_io import MaskImage, SlideImage, open_mask, open_slide

# Fixed render band height; part of the determinism contract.
RENDER_BAND_HEIGHT = 128

CLASS_LABELS = ("CE", "LAA")


@dataclass(frozen=True)
class ClassTexture:
    """Blob interior statistics for one class."""

    mean_color: tuple[int, int, int]
    color_std: float = 18.0
    streak_density: float = 3e-6  # streaks per pixel of slide area


# Default class means differ by 50 intensity levels in R and B, comfortably
# above the 30-level separability margin the end-to-end run assumes.
DEFAULT_TEXTURES: dict[str, ClassTexture] = {
    "CE": ClassTexture(mean_color=(185, 120, 135)),
    "LAA": ClassTexture(mean_color=(135, 120, 185)),
}


@dataclass(frozen=True)
class SyntheticSlideConfig:
    width_px: int
    height_px: int
    class_label: str
    blob_count: int = 4
    blob_radius_px: tuple[int, int] = (250, 380)
    background_color: tuple[int, int, int] = (255, 255, 255)
    textures: dict[str, ClassTexture] = field(
        default_factory=lambda: dict(DEFAULT_TEXTURES)
    )
    seed: int = 0

    def validate(self) -> None:
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("slide dimensions must be >= 1")
        if self.class_label not in self.textures:
            raise ValueError(f"no texture configured for class {self.class_label!r}")
        if self.blob_count < 0:
            raise ValueError("blob_count must be >= 0")
        lo, hi = self.blob_radius_px
        if lo < 1 or hi < lo:
            raise ValueError("blob radius range must satisfy 1 <= lo <= hi")
        if self.blob_count > 0 and 2 * hi > min(self.width_px, self.height_px):
            raise ValueError(
                f"blob diameter {2 * hi} exceeds slide "
                f"{self.width_px}x{self.height_px}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["textures"] = {k: asdict(v) for k, v in self.textures.items()}
        return d


@dataclass(frozen=True)
class _Blob:
    cx: float
    cy: float
    radius: float


@dataclass(frozen=True)
class _Streak:
    x0: float
    y0: float
    x1: float
    y1: float


def _rng(seed: int, *tokens: int) -> np.random.Generator:
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, *(t & 0xFFFFFFFFFFFFFFFF for t in tokens)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _layout(config: SyntheticSlideConfig) -> tuple[list[_Blob], list[_Streak]]:
    """Blob and streak geometry drawn once from the seed."""
    rng = _rng(config.seed, 1)
    lo, hi = config.blob_radius_px
    blobs = []
    for _ in range(config.blob_count):
        r = float(rng.uniform(lo, hi))
        cx = float(rng.uniform(r, config.width_px - r))
        cy = float(rng.uniform(r, config.height_px - r))
        blobs.append(_Blob(cx, cy, r))

    texture = config.textures[config.class_label]
    n_streaks = int(round(texture.streak_density * config.width_px * config.height_px))
    streaks = []
    rng2 = _rng(config.seed, 2)
    for _ in range(n_streaks):
        x0 = float(rng2.uniform(0, config.width_px))
        y0 = float(rng2.uniform(0, config.height_px))
        angle = float(rng2.uniform(0, 2 * math.pi))
        length = float(rng2.uniform(40, 160))
        streaks.append(
            _Streak(x0, y0, x0 + length * math.cos(angle), y0 + length * math.sin(angle))
        )
    return blobs, streaks


def _streak_points(streaks: list[_Streak], width: int, height: int) -> np.ndarray:
    """Rasterize streak center lines to integer pixel coords, (n, 2) as (y, x)."""
    pts = []
    for s in streaks:
        length = math.hypot(s.x1 - s.x0, s.y1 - s.y0)
        n = max(2, int(length * 2))
        t = np.linspace(0.0, 1.0, n)
        xs = np.clip(np.rint(s.x0 + (s.x1 - s.x0) * t), 0, width - 1).astype(np.int64)
        ys = np.clip(np.rint(s.y0 + (s.y1 - s.y0) * t), 0, height - 1).astype(np.int64)
        pts.append(np.stack([ys, xs], axis=1))
    if not pts:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(pts, axis=0), axis=0)


def _blob_mask_band(blobs: list[_Blob], y0: int, n_rows: int, width: int) -> np.ndarray:
    mask = np.zeros((n_rows, width), dtype=bool)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(y0, y0 + n_rows, dtype=np.float64)
    for blob in blobs:
        dy2 = (ys - blob.cy) ** 2
        hit_rows = dy2 <= blob.radius**2
        if not hit_rows.any():
            continue
        dx2 = (xs - blob.cx) ** 2
        mask[hit_rows] |= dx2[None, :] <= (blob.radius**2 - dy2[hit_rows, None])
    return mask


def generate_synthetic_slide(
    config: SyntheticSlideConfig,
    slide_path: str | Path,
    mask_path: str | Path,
    slide_id: str | None = None,
) -> tuple[SlideImage, MaskImage]:
    """Render a slide and its foreground mask to PNG files and open them.

    Pixels outside all blobs equal the background color exactly; every
    foreground pixel is guaranteed to differ from it.
    """
    config.validate()
    slide_path = Path(slide_path)
    mask_path = Path(mask_path)
    texture = config.textures[config.class_label]
    blobs, streaks = _layout(config)
    streak_pts = _streak_points(streaks, config.width_px, config.height_px)
    streak_color = np.array(
        [max(0, c // 3) for c in texture.mean_color], dtype=np.uint8
    )
    background = np.array(config.background_color, dtype=np.uint8)
    mean = np.array(texture.mean_color, dtype=np.float64)

    W, H = config.width_px, config.height_px
    with PngWriter(slide_path, W, H, 3) as slide_out, \
            PngWriter(mask_path, W, H, 1) as mask_out:
        for band_idx, y0 in enumerate(range(0, H, RENDER_BAND_HEIGHT)):
            n = min(RENDER_BAND_HEIGHT, H - y0)
            mask = _blob_mask_band(blobs, y0, n, W)
            band = np.empty((n, W, 3), dtype=np.uint8)
            band[:] = background
            if mask.any():
                rng = _rng(config.seed, 3, band_idx)
                fg_idx = np.nonzero(mask)
                noise = rng.normal(0.0, texture.color_std, size=(fg_idx[0].size, 3))
                band[fg_idx] = np.clip(mean + noise, 0, 255).astype(np.uint8)
                if streak_pts.size:
                    in_band = (streak_pts[:, 0] >= y0) & (streak_pts[:, 0] < y0 + n)
                    pts = streak_pts[in_band]
                    if pts.size:
                        rows = pts[:, 0] - y0
                        cols = pts[:, 1]
                        on_blob = mask[rows, cols]
                        band[rows[on_blob], cols[on_blob]] = streak_color
                # Mask consistency: clipping can push a noisy pixel onto the
                # background color; nudge one channel so foreground always
                # differs from it.
                equal = mask & (band == background).all(axis=2)
                if equal.any():
                    g = band[..., 1]
                    g[equal] = np.where(g[equal] > 0, g[equal] - 1, 1)
            slide_out.write_rows(band)
            mask_out.write_rows(np.where(mask, 255, 0).astype(np.uint8))

    sid = slide_id or slide_path.stem
    return open_slide(slide_path, sid), open_mask(mask_path)


def analytic_blob_area(config: SyntheticSlideConfig) -> float:
    """Sum of pi*r^2 over the drawn blobs (ignores overlap)."""
    blobs, _ = _layout(config)
    return float(sum(math.pi * b.radius**2 for b in blobs))
