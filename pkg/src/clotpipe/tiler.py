"""Plan and extract fixed-size tile grids from slides.

Planning lays tiles on the stride grid; extraction streams the slide in row
bands so the full tile set never sits in memory. Per-tile work (content
measurement, patch encoding) can run on a bounded thread pool: numpy and
zlib release the GIL, so four workers genuinely overlap on large slides.

Manifests are JSON Lines, one record per tile, written sorted by (y, x) and
via temp-file-plus-rename so interrupted runs leave no partial line.
"""

from __future__ import annotations

import json
import os
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import TileExtractionError
from .slide_io import SlideImage

DEFAULT_TILE_SIZE = 600
DISCARD_REASONS = ("none", "low_content", "background", "partial_edge")

WHITE = (255, 255, 255)


@dataclass(frozen=True)
class TileSpec:
    """One planned tile: grid position plus in-bounds extent.

    width/height equal tile_size for interior tiles; for padded edge tiles
    they give the in-bounds extent (the extracted buffer is always
    tile_size square, filled outside the slide).
    """

    slide_id: str
    x: int
    y: int
    width: int
    height: int
    padded: bool = False
    tile_size: int = DEFAULT_TILE_SIZE

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.slide_id, self.x, self.y)

    def patch_name(self) -> str:
        return f"{self.slide_id}_x{self.x}_y{self.y}.png"


@dataclass
class TileRecord:
    """A tile's measurements and keep/discard status; one manifest line."""

    spec: TileSpec
    content_ratio: float | None = None
    stage1_prob_cellular: float | None = None
    kept: bool = True
    discard_reason: str = "none"
    patch_path: str | None = None
    label: str | None = None

    def __post_init__(self):
        if self.discard_reason not in DISCARD_REASONS:
            raise ValueError(f"unknown discard_reason {self.discard_reason!r}")
        if self.kept and self.discard_reason != "none":
            raise ValueError("kept records must have discard_reason 'none'")

    def discard(self, reason: str) -> None:
        if reason not in DISCARD_REASONS or reason == "none":
            raise ValueError(f"invalid discard reason {reason!r}")
        self.kept = False
        self.discard_reason = reason

    def to_manifest_obj(self) -> dict:
        s = self.spec
        return {
            "slide_id": s.slide_id,
            "x": s.x,
            "y": s.y,
            "width": s.width,
            "height": s.height,
            "padded": s.padded,
            "content_ratio": self.content_ratio,
            "stage1_prob_cellular": self.stage1_prob_cellular,
            "kept": self.kept,
            "discard_reason": self.discard_reason,
            "patch_path": self.patch_path,
            "label": self.label,
        }

    @classmethod
    def from_manifest_obj(cls, obj: dict, tile_size: int | None = None) -> "TileRecord":
        size = tile_size or max(obj["width"], obj["height"])
        spec = TileSpec(obj["slide_id"], obj["x"], obj["y"], obj["width"],
                        obj["height"], obj["padded"], size)
        return cls(
            spec=spec,
            content_ratio=obj["content_ratio"],
            stage1_prob_cellular=obj["stage1_prob_cellular"],
            kept=obj["kept"],
            discard_reason=obj["discard_reason"],
            patch_path=obj["patch_path"],
            label=obj["label"],
        )


def plan_tiles(slide: SlideImage, tile_size: int = DEFAULT_TILE_SIZE,
               stride: int = DEFAULT_TILE_SIZE,
               edge_policy: str = "drop") -> list[TileSpec]:
    """Grid of tile specs over the slide.

    drop: only tiles fully inside the slide (empty when the slide is smaller
    than one tile). pad: every grid origin inside the slide, edge tiles
    flagged padded.
    """
    if tile_size < 1 or stride < 1:
        raise ValueError("tile_size and stride must be >= 1")
    if edge_policy not in ("drop", "pad"):
        raise ValueError(f"edge_policy must be 'drop' or 'pad', got {edge_policy!r}")
    W, H = slide.width, slide.height
    if edge_policy == "drop":
        xs = range(0, W - tile_size + 1, stride) if W >= tile_size else range(0)
        ys = range(0, H - tile_size + 1, stride) if H >= tile_size else range(0)
    else:
        xs = range(0, W, stride)
        ys = range(0, H, stride)
    specs = []
    for y in ys:
        for x in xs:
            w = min(tile_size, W - x)
            h = min(tile_size, H - y)
            specs.append(TileSpec(slide.slide_id, x, y, w, h,
                                  padded=(w < tile_size or h < tile_size),
                                  tile_size=tile_size))
    return specs


def dropped_edge_specs(slide: SlideImage, tile_size: int = DEFAULT_TILE_SIZE,
                       stride: int = DEFAULT_TILE_SIZE) -> list[TileSpec]:
    """Edge tiles a drop-policy plan leaves out, so manifests can account
    for the whole grid as discard_reason=partial_edge."""
    padded = plan_tiles(slide, tile_size, stride, "pad")
    return [s for s in padded if s.padded]


def assemble_tile(spec: TileSpec, band: np.ndarray, band_y: int,
                  pad_fill: Sequence[int] = WHITE) -> np.ndarray:
    """Cut one tile from a row band covering its rows; pads out of bounds."""
    size = spec.tile_size
    tile = np.empty((size, size, 3), dtype=np.uint8)
    tile[:] = np.asarray(pad_fill, dtype=np.uint8)
    rows = band[spec.y - band_y : spec.y - band_y + spec.height,
                spec.x : spec.x + spec.width]
    tile[: spec.height, : spec.width] = rows
    return tile


class _RollingBandReader:
    """Forward-moving window over slide rows.

    Wraps one sequential decoder pass and keeps at most one tile band of
    rows, so streaming a whole slide costs a single decode regardless of
    how many (possibly overlapping) bands are requested.
    """

    def __init__(self, slide: SlideImage):
        self.slide = slide
        self._source = slide.sequential_rows()
        self._y = 0
        self._window = np.empty((0, slide.width, 3), dtype=np.uint8)

    def rows(self, y: int, h: int) -> np.ndarray:
        if y < self._y:
            raise ValueError("band reader only moves forward")
        keep_from = y - self._y
        if keep_from > 0:
            self._window = self._window[keep_from:]
            self._y = y
        have = self._y + self._window.shape[0]
        if y + h > have:
            fresh = self._source.read(have, y + h)
            self._window = np.concatenate([self._window, fresh], axis=0) \
                if self._window.size else fresh
        return self._window[: h]

    def close(self) -> None:
        self._source.close()


def _band_groups(specs: Sequence[TileSpec]) -> list[tuple[int, int, list[TileSpec]]]:
    """Specs grouped by origin row, sorted, as (y, band_height, specs)."""
    by_y: dict[int, list[TileSpec]] = {}
    for s in specs:
        by_y.setdefault(s.y, []).append(s)
    groups = []
    for y in sorted(by_y):
        group = sorted(by_y[y], key=lambda s: s.x)
        groups.append((y, max(s.height for s in group), group))
    return groups


def extract_tiles(slide: SlideImage, specs: Sequence[TileSpec],
                  pad_fill: Sequence[int] = WHITE,
                  workers: int = 1) -> Iterator[tuple[TileSpec, np.ndarray]]:
    """Stream (spec, tile buffer) pairs; each buffer is tile_size^2 x 3.

    The output set is identical for any worker count; only the order may
    differ. With workers > 1, band groups are split across threads (best
    suited to random-access sources; the CLI's tiling stage instead streams
    one pass and parallelizes per-tile work).
    """
    groups = _band_groups(specs)
    if workers <= 1:
        reader = _RollingBandReader(slide)
        try:
            for y, h, group in groups:
                try:
                    band = reader.rows(y, h)
                except Exception as exc:  # identify the failing tile(s)
                    raise TileExtractionError(group[0], exc) from exc
                for spec in group:
                    yield spec, assemble_tile(spec, band, y, pad_fill)
        finally:
            reader.close()
        return

    out: queue.Queue = queue.Queue(maxsize=4 * workers)
    _SENTINEL = object()

    def run_bands(bands: list[tuple[int, int, list[TileSpec]]]) -> None:
        try:
            for y, h, group in bands:
                try:
                    band = slide.read_region(0, y, slide.width, h)
                except Exception as exc:
                    raise TileExtractionError(group[0], exc) from exc
                for spec in group:
                    out.put((spec, assemble_tile(spec, band, y, pad_fill)))
        except BaseException as exc:  # propagate to the consumer
            out.put(exc)
        finally:
            out.put(_SENTINEL)

    shards = [groups[i::workers] for i in range(workers)]
    threads = [threading.Thread(target=run_bands, args=(shard,), daemon=True)
               for shard in shards if shard]
    for t in threads:
        t.start()
    done = 0
    try:
        while done < len(threads):
            item = out.get()
            if item is _SENTINEL:
                done += 1
            elif isinstance(item, BaseException):
                raise item
            else:
                yield item
    finally:
        for t in threads:
            t.join(timeout=5)


def process_tiles(slide: SlideImage, specs: Sequence[TileSpec],
                  tile_fn: Callable[[TileSpec, np.ndarray], object],
                  pad_fill: Sequence[int] = WHITE,
                  workers: int = 1) -> list:
    """Stream tiles in one decoder pass and run tile_fn on a worker pool.

    One reader walks the slide band by band while up to `workers` threads
    run tile_fn; results come back sorted by (y, x) so downstream output is
    deterministic. tile_fn must be thread-safe and pure per tile.
    """
    groups = _band_groups(specs)
    results: list = []

    def safe_fn(spec: TileSpec, tile: np.ndarray):
        try:
            return spec, tile_fn(spec, tile)
        except TileExtractionError:
            raise
        except Exception as exc:
            raise TileExtractionError(spec, exc) from exc

    reader = _RollingBandReader(slide)
    try:
        if workers <= 1:
            for y, h, group in groups:
                band = reader.rows(y, h)
                for spec in group:
                    results.append(
                        safe_fn(spec, assemble_tile(spec, band, y, pad_fill))
                    )
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                pending = []
                max_pending = 4 * workers
                for y, h, group in groups:
                    band = reader.rows(y, h)
                    for spec in group:
                        tile = assemble_tile(spec, band, y, pad_fill)
                        pending.append(pool.submit(safe_fn, spec, tile))
                        if len(pending) >= max_pending:
                            results.append(pending.pop(0).result())
                for fut in pending:
                    results.append(fut.result())
    finally:
        reader.close()
    results.sort(key=lambda pair: (pair[0].y, pair[0].x))
    return [value for _, value in results]


# -- manifest I/O ------------------------------------------------------------


def manifest_sort_key(record: TileRecord) -> tuple:
    return (record.spec.slide_id, record.spec.y, record.spec.x)


def write_manifest(path: str | Path, records: Iterable[TileRecord]) -> None:
    """Write records as JSON Lines, sorted, atomically (temp then rename)."""
    path = Path(path)
    ordered = sorted(records, key=manifest_sort_key)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for record in ordered:
            fh.write(json.dumps(record.to_manifest_obj(), separators=(",", ":")))
            fh.write("\n")
    os.replace(tmp, path)


def read_manifest(path: str | Path, tile_size: int | None = None) -> list[TileRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(TileRecord.from_manifest_obj(json.loads(line), tile_size))
    return records
