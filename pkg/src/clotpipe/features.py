"""Hand-crafted 11-value tile descriptor for the built-in classifiers.

Order (layout version 1): R/G/B means, R/G/B standard deviations,
saturation mean and std, foreground ratio, edge density, gray entropy.
Pixel statistics are scaled by 1/255; all eleven values are invariant
under flips and quarter-turn rotations by construction.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .otsu_filter import to_grayscale

LAYOUT_VERSION = 1

FEATURE_NAMES = (
    "r_mean", "g_mean", "b_mean",
    "r_std", "g_std", "b_std",
    "sat_mean", "sat_std",
    "foreground_ratio",
    "edge_density",
    "gray_entropy",
)

N_FEATURES = len(FEATURE_NAMES)

# Gradient magnitude above this (on 0..1 luma) counts as an edge pixel.
EDGE_THRESHOLD = 25.0 / 255.0


def extract_features(pixels: np.ndarray, content_ratio: float) -> np.ndarray:
    """Descriptor of one tile; `content_ratio` comes from the Otsu stage."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) RGB buffer")
    scaled = pixels.astype(np.float64) / 255.0

    means = scaled.mean(axis=(0, 1))
    stds = scaled.std(axis=(0, 1))

    maxc = scaled.max(axis=2)
    minc = scaled.min(axis=2)
    sat = np.where(maxc > 0, (maxc - minc) / np.where(maxc > 0, maxc, 1.0), 0.0)

    luma = scaled @ np.array([0.299, 0.587, 0.114])
    if min(luma.shape) >= 2:
        gy, gx = np.gradient(luma)
        magnitude = np.sqrt(gx**2 + gy**2)
        edge_density = float((magnitude > EDGE_THRESHOLD).mean())
    else:
        edge_density = 0.0

    hist = np.bincount(to_grayscale(pixels).ravel(), minlength=256)
    probs = hist[hist > 0] / hist.sum()
    entropy = float(-(probs * np.log2(probs)).sum())

    return np.array(
        [*means, *stds, float(sat.mean()), float(sat.std()),
         float(content_ratio), edge_density, entropy],
        dtype=np.float64,
    )


def write_feature_csv(path: str | Path, rows: list[dict]) -> None:
    """Persist per-tile features: slide_id,x,y,<11 features>,label."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "x", "y", *FEATURE_NAMES, "label"])
        for row in rows:
            values = row["features"]
            if len(values) != N_FEATURES:
                raise ValueError(f"feature vector must have {N_FEATURES} values")
            writer.writerow([
                row["slide_id"], row["x"], row["y"],
                *[repr(float(v)) for v in values],
                row.get("label") if row.get("label") is not None else "",
            ])
    os.replace(tmp, path)


def read_feature_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["slide_id", "x", "y", *FEATURE_NAMES, "label"]
        if header != expected:
            raise ValueError(f"unexpected feature CSV header: {header}")
        for rec in reader:
            rows.append({
                "slide_id": rec[0],
                "x": int(rec[1]),
                "y": int(rec[2]),
                "features": np.array([float(v) for v in rec[3 : 3 + N_FEATURES]]),
                "label": rec[3 + N_FEATURES] or None,
            })
    return rows
