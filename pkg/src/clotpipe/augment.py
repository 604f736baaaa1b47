"""Training-time augmentations and the universal resize/normalize transforms.

Each stochastic op fires independently with probability 0.5 per tile, using
an RNG derived from (run seed, tile identity): the result depends only on
the tile, never on processing order or worker count. Resize to 256 and
ImageNet normalization apply to every split; everything else is
training-only.

All ops take and return (h, w, 3) uint8 buffers except normalize, which
produces the float tensor fed to classifiers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .seeding import derived_rng

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

WHITE = (255, 255, 255)

# Smoothing kernel behind adjust_sharpness; fixed so factor-2 output is
# bit-reproducible.
_SMOOTH_KERNEL = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


@dataclass(frozen=True)
class AugmentationConfig:
    apply_probability: float = 0.5
    sharpness_factor: float = 2.0
    brightness: float = 0.2
    hue: float = 0.5
    saturation: float = 0.5
    rotate_limit_deg: float = 90.0
    resize_to: int = 256
    normalize_mean: tuple[float, float, float] = IMAGENET_MEAN
    normalize_std: tuple[float, float, float] = IMAGENET_STD
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must be in [0, 1]")
        if self.resize_to < 1:
            raise ValueError("resize_to must be >= 1")
        if any(s <= 0 for s in self.normalize_std):
            raise ValueError("normalize_std components must be > 0")
        if not 0.0 <= self.hue <= 0.5:
            raise ValueError("hue must be in [0, 0.5]")
        if self.brightness < 0 or self.saturation < 0:
            raise ValueError("brightness and saturation must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _as_tile(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ValueError("expected an (h, w, 3) uint8 tile")
    return pixels


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def hflip(tile: np.ndarray) -> np.ndarray:
    return _as_tile(tile)[:, ::-1].copy()


def vflip(tile: np.ndarray) -> np.ndarray:
    return _as_tile(tile)[::-1].copy()


def rot90(tile: np.ndarray, quarter_turns: int = 1) -> np.ndarray:
    """Lossless counterclockwise quarter-turn rotation."""
    return np.rot90(_as_tile(tile), quarter_turns % 4).copy()


def adjust_sharpness(tile: np.ndarray, factor: float) -> np.ndarray:
    """blur + factor*(tile - blur) with the fixed 3x3 smooth kernel.

    Computed as tile + (factor-1)*(tile - blur) so factor 1 is the exact
    identity. Border pixels pass through unchanged.
    """
    tile = _as_tile(tile)
    if factor < 0:
        raise ValueError("sharpness factor must be >= 0")
    if factor == 1.0 or tile.shape[0] < 3 or tile.shape[1] < 3:
        return tile.copy()
    src = tile.astype(np.float64)
    blur = np.zeros_like(src)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            w = _SMOOTH_KERNEL[dy + 1, dx + 1]
            blur[1:-1, 1:-1] += w * src[1 + dy : src.shape[0] - 1 + dy,
                                        1 + dx : src.shape[1] - 1 + dx]
    out = src.copy()
    inner = src[1:-1, 1:-1]
    out[1:-1, 1:-1] = inner + (factor - 1.0) * (inner - blur[1:-1, 1:-1])
    result = _to_uint8(out)
    result[0, :] = tile[0, :]
    result[-1, :] = tile[-1, :]
    result[:, 0] = tile[:, 0]
    result[:, -1] = tile[:, -1]
    return result


def rotate(tile: np.ndarray, angle_deg: float,
           fill: tuple[int, int, int] = WHITE) -> np.ndarray:
    """Rotation about the tile center (counterclockwise for positive angles).

    Right angles use a lossless pixel permutation; everything else samples
    bilinearly, writing `fill` where the source image ran out.
    """
    tile = _as_tile(tile)
    norm = angle_deg % 360.0
    if norm == 0.0:
        return tile.copy()
    if norm in (90.0, 180.0, 270.0) and tile.shape[0] == tile.shape[1]:
        return rot90(tile, int(norm // 90))
    h, w = tile.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - cx
    dy = ys - cy
    # Inverse mapping: rotate destination coords back into the source.
    sx = cx + cos_t * dx + sin_t * dy
    sy = cy - sin_t * dx + cos_t * dy
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = np.clip(np.floor(sx), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(sy), 0, h - 2).astype(np.intp)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    src = tile.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x0 + 1] * fx
    bot = src[y0 + 1, x0] * (1 - fx) + src[y0 + 1, x0 + 1] * fx
    out = top * (1 - fy) + bot * fy
    result = _to_uint8(out)
    result[~valid] = np.asarray(fill, dtype=np.uint8)
    return result


def _resample_axis(src: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    """1-D bilinear resample along an axis, half-pixel center convention."""
    old_len = src.shape[axis]
    coords = (np.arange(new_len, dtype=np.float64) + 0.5) * (old_len / new_len) - 0.5
    coords = np.clip(coords, 0, old_len - 1)
    i0 = np.clip(np.floor(coords), 0, max(old_len - 2, 0)).astype(np.intp)
    i1 = np.minimum(i0 + 1, old_len - 1)
    frac = coords - i0
    a = np.take(src, i0, axis=axis)
    b = np.take(src, i1, axis=axis)
    shape = [1] * src.ndim
    shape[axis] = new_len
    frac = frac.reshape(shape)
    return a * (1 - frac) + b * frac


def resize(tile: np.ndarray, to: int) -> np.ndarray:
    """Bilinear resize to a (to, to, 3) tile."""
    tile = _as_tile(tile)
    if to < 1:
        raise ValueError("target size must be >= 1")
    out = _resample_axis(tile.astype(np.float64), to, axis=0)
    out = _resample_axis(out, to, axis=1)
    return _to_uint8(out)


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [v, q, p, p, t, v])
    g = np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [t, v, v, q, p, p])
    b = np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def adjust_brightness(tile: np.ndarray, factor: float) -> np.ndarray:
    return _to_uint8(_as_tile(tile).astype(np.float64) * factor)


def adjust_saturation(tile: np.ndarray, factor: float) -> np.ndarray:
    """Blend toward Rec.601 luma: factor 0 is grayscale, 1 is identity."""
    src = _as_tile(tile).astype(np.float64)
    luma = src @ np.array([0.299, 0.587, 0.114])
    return _to_uint8(luma[..., None] + factor * (src - luma[..., None]))


def adjust_hue(tile: np.ndarray, delta: float) -> np.ndarray:
    """Rotate hue by `delta` of the full circle (360*delta degrees)."""
    hsv = _rgb_to_hsv(_as_tile(tile).astype(np.float64) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + delta) % 1.0
    return _to_uint8(_hsv_to_rgb(hsv) * 255.0)


def color_jitter(tile: np.ndarray, brightness: float, saturation: float,
                 hue: float, rng: np.random.Generator) -> np.ndarray:
    """Random brightness/saturation scaling and hue rotation, in that order.

    Factors: brightness ~ U[1-b, 1+b], saturation ~ U[max(0, 1-s), 1+s],
    hue shift ~ U[-h, +h] of the hue circle.
    """
    if brightness < 0 or saturation < 0 or not 0 <= hue <= 0.5:
        raise ValueError("invalid jitter parameters")
    f_b = rng.uniform(1.0 - brightness, 1.0 + brightness)
    f_s = rng.uniform(max(0.0, 1.0 - saturation), 1.0 + saturation)
    delta = rng.uniform(-hue, hue)
    out = adjust_brightness(tile, f_b)
    out = adjust_saturation(out, f_s)
    return adjust_hue(out, delta)


def normalize(tile: np.ndarray,
              mean: tuple[float, float, float] = IMAGENET_MEAN,
              std: tuple[float, float, float] = IMAGENET_STD) -> np.ndarray:
    """(pixel/255 - mean)/std per channel, as float64."""
    tile = _as_tile(tile)
    mean_a = np.asarray(mean, dtype=np.float64)
    std_a = np.asarray(std, dtype=np.float64)
    return (tile.astype(np.float64) / 255.0 - mean_a) / std_a


def denormalize(tensor: np.ndarray,
                mean: tuple[float, float, float] = IMAGENET_MEAN,
                std: tuple[float, float, float] = IMAGENET_STD) -> np.ndarray:
    mean_a = np.asarray(mean, dtype=np.float64)
    std_a = np.asarray(std, dtype=np.float64)
    return _to_uint8((np.asarray(tensor) * std_a + mean_a) * 255.0)


@dataclass(frozen=True)
class OpPlan:
    """Which stochastic ops fire for one tile, with their drawn parameters."""

    do_hflip: bool
    do_vflip: bool
    do_sharpness: bool
    do_rotate: bool
    rotate_angle: float
    do_jitter: bool
    brightness_factor: float
    saturation_factor: float
    hue_delta: float

    @property
    def fired(self) -> dict[str, bool]:
        return {
            "hflip": self.do_hflip,
            "vflip": self.do_vflip,
            "sharpness": self.do_sharpness,
            "rotate": self.do_rotate,
            "color_jitter": self.do_jitter,
        }


def draw_op_plan(config: AugmentationConfig, tile_identity: str) -> OpPlan:
    """Deterministic per-tile plan; the draw sequence is fixed so the same
    (seed, identity) always yields the same plan."""
    rng = derived_rng(config.seed, "augment", tile_identity)
    p = config.apply_probability
    do_hflip = rng.random() < p
    do_vflip = rng.random() < p
    do_sharp = rng.random() < p
    do_rot = rng.random() < p
    angle = float(rng.uniform(-config.rotate_limit_deg, config.rotate_limit_deg))
    do_jit = rng.random() < p
    f_b = float(rng.uniform(1.0 - config.brightness, 1.0 + config.brightness))
    f_s = float(rng.uniform(max(0.0, 1.0 - config.saturation), 1.0 + config.saturation))
    delta = float(rng.uniform(-config.hue, config.hue))
    return OpPlan(do_hflip, do_vflip, do_sharp, do_rot, angle, do_jit, f_b, f_s, delta)


def apply_plan(tile: np.ndarray, plan: OpPlan, config: AugmentationConfig) -> np.ndarray:
    out = _as_tile(tile)
    if plan.do_hflip:
        out = hflip(out)
    if plan.do_vflip:
        out = vflip(out)
    if plan.do_sharpness:
        out = adjust_sharpness(out, config.sharpness_factor)
    if plan.do_rotate:
        out = rotate(out, plan.rotate_angle)
    if plan.do_jitter:
        out = adjust_brightness(out, plan.brightness_factor)
        out = adjust_saturation(out, plan.saturation_factor)
        out = adjust_hue(out, plan.hue_delta)
    return out


def augment_pipeline(tile: np.ndarray, config: AugmentationConfig,
                     tile_identity: str, training: bool = True) -> np.ndarray:
    """Full per-tile transform: stochastic ops (training only), then the
    resize and normalization every split gets."""
    config.validate()
    out = _as_tile(tile)
    if training:
        out = apply_plan(out, draw_op_plan(config, tile_identity), config)
    out = resize(out, config.resize_to)
    return normalize(out, config.normalize_mean, config.normalize_std)
