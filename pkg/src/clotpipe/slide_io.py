"""Open large slide images and serve rectangular pixel regions.

Slides are 8-bit RGB rasters addressed by (x, y, w, h) rectangles; the file
is never decoded whole. PNG files stream scanline bands, baseline TIFF
files decode only the strips/tiles a region touches. Ground-truth masks
from the synthetic generator are single-channel PNGs read the same way.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Iterator

import numpy as np

from . import png_codec, tiff_codec
from .errors import CorruptFileError, RegionBoundsError, UnsupportedFormatError

PNG_MAGIC = png_codec.PNG_SIGNATURE[:4]

# Band height used when scanning a slide top to bottom.
DEFAULT_BAND_HEIGHT = 512


def _check_bounds(width: int, height: int, x: int, y: int, w: int, h: int) -> None:
    if x < 0 or y < 0 or w < 0 or h < 0 or x + w > width or y + h > height:
        raise RegionBoundsError(
            f"region x={x} y={y} w={w} h={h} outside slide {width}x{height}"
        )


class _PngSequentialRows:
    """One forward pass over a PNG: each call continues the same decoder."""

    def __init__(self, path: Path, width: int):
        self._stream = png_codec.PngRowStream(path)
        self._width = width

    def read(self, y0: int, y1: int) -> np.ndarray:
        skip = y0 - self._stream.rows_decoded
        if skip < 0:
            raise ValueError("sequential reader only moves forward")
        if skip:
            self._stream.skip_rows(skip)
        rows = self._stream.read_rows(y1 - y0)
        return rows.reshape(y1 - y0, self._width, -1)

    def close(self) -> None:
        self._stream.close()


class _RegionSequentialRows:
    """Sequential facade over a random-access backend."""

    def __init__(self, backend):
        self._backend = backend

    def read(self, y0: int, y1: int) -> np.ndarray:
        return self._backend.read_region(0, y0, self._backend.width, y1 - y0)

    def close(self) -> None:
        pass


class _PngBackend:
    channels = 3

    def __init__(self, path: Path):
        self.path = path
        hdr = png_codec.read_header(path)
        if hdr.channels != 3:
            raise UnsupportedFormatError(
                f"{path.name}: slide PNG must be RGB (has {hdr.channels} channel(s))"
            )
        self.width, self.height = hdr.width, hdr.height

    def read_region(self, x, y, w, h):
        return png_codec.read_region(self.path, x, y, w, h)

    def iter_bands(self, band_height, y_start, y_stop):
        return png_codec.iter_row_bands(self.path, band_height, y_start, y_stop)

    def sequential_rows(self):
        return _PngSequentialRows(self.path, self.width)


class _TiffBackend:
    channels = 3

    def __init__(self, path: Path):
        self.path = path
        self._reader = tiff_codec.TiffReader(path)
        self._lock = threading.Lock()
        self.width = self._reader.info.width
        self.height = self._reader.info.height

    def read_region(self, x, y, w, h):
        # The shared file handle seeks; serialize access so concurrent region
        # reads stay independent.
        with self._lock:
            return self._reader.read_region(x, y, w, h)

    def iter_bands(self, band_height, y_start, y_stop):
        y = y_start
        while y < y_stop:
            n = min(band_height, y_stop - y)
            yield y, self.read_region(0, y, self.width, n)
            y += n

    def sequential_rows(self):
        return _RegionSequentialRows(self)


class _ArrayBackend:
    channels = 3

    def __init__(self, pixels: np.ndarray):
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
            raise ValueError("in-memory slide must be (h, w, 3) uint8")
        self.path = None
        self.pixels = pixels
        self.height, self.width = pixels.shape[:2]

    def read_region(self, x, y, w, h):
        return self.pixels[y : y + h, x : x + w].copy()

    def iter_bands(self, band_height, y_start, y_stop):
        y = y_start
        while y < y_stop:
            n = min(band_height, y_stop - y)
            yield y, self.pixels[y : y + n]
            y += n

    def sequential_rows(self):
        return _RegionSequentialRows(self)


class SlideImage:
    """A large 8-bit RGB raster addressable by rectangular region."""

    def __init__(self, slide_id: str, backend):
        self.slide_id = slide_id
        self._backend = backend
        self.width = backend.width
        self.height = backend.height

    @property
    def path(self) -> Path | None:
        return self._backend.path

    @classmethod
    def from_array(cls, slide_id: str, pixels: np.ndarray) -> "SlideImage":
        return cls(slide_id, _ArrayBackend(np.ascontiguousarray(pixels, dtype=np.uint8)))

    def read_region(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        """Exact (h, w, 3) uint8 pixels; out-of-bounds requests are an error."""
        _check_bounds(self.width, self.height, x, y, w, h)
        return np.ascontiguousarray(self._backend.read_region(x, y, w, h))

    def read_full(self) -> np.ndarray:
        return self.read_region(0, 0, self.width, self.height)

    def iter_row_bands(self, band_height: int = DEFAULT_BAND_HEIGHT,
                       y_start: int = 0, y_stop: int | None = None
                       ) -> Iterator[tuple[int, np.ndarray]]:
        """Stream (y, (n, width, 3)) bands top to bottom in one decoder pass."""
        stop = self.height if y_stop is None else y_stop
        _check_bounds(self.width, self.height, 0, y_start, self.width, stop - y_start)
        for y, band in self._backend.iter_bands(band_height, y_start, stop):
            yield y, band.reshape(band.shape[0], self.width, 3)

    def sequential_rows(self):
        """Forward-only row reader sharing one decoder pass; `read(y0, y1)`
        calls must have nondecreasing y0. Close when done."""
        return self._backend.sequential_rows()

    def __repr__(self) -> str:
        return f"SlideImage({self.slide_id!r}, {self.width}x{self.height})"


class MaskImage:
    """Single-channel 0/255 ground-truth mask written by the generator."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        hdr = png_codec.read_header(self.path)
        if hdr.channels != 1:
            raise UnsupportedFormatError(f"{self.path.name}: mask PNG must be grayscale")
        self.width, self.height = hdr.width, hdr.height

    def read_region(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        """Boolean (h, w) foreground mask for the rectangle."""
        _check_bounds(self.width, self.height, x, y, w, h)
        raw = png_codec.read_region(self.path, x, y, w, h)
        return raw[:, :, 0] > 127

    def foreground_fraction(self, x: int, y: int, w: int, h: int) -> float:
        region = self.read_region(x, y, w, h)
        return float(region.mean()) if region.size else 0.0


def open_slide(path: str | Path, slide_id: str | None = None) -> SlideImage:
    """Open a PNG or baseline TIFF slide without decoding its pixels.

    The format is sniffed from magic bytes, not the extension.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"slide file does not exist: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if len(magic) < 4:
        raise CorruptFileError(f"{path.name}: file too short to be an image")
    if magic == PNG_MAGIC:
        backend = _PngBackend(path)
    elif magic[:2] in (b"II", b"MM"):
        backend = _TiffBackend(path)
    else:
        raise UnsupportedFormatError(
            f"{path.name}: unrecognized format (PNG or baseline TIFF required)"
        )
    return SlideImage(slide_id or path.stem, backend)


def open_mask(path: str | Path) -> MaskImage:
    return MaskImage(path)
