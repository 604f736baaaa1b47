"""Minimal streaming PNG reader/writer for 8-bit grayscale and RGB images.

Slides are too large to decode whole, so the reader walks the IDAT stream
scanline by scanline and never holds more than the requested row band plus
one predecessor row. The writer emits fixed filter-type-0 scanlines, which
keeps decoding of our own files a plain buffer reshape.

Only the subset needed by the pipeline is supported: bit depth 8, color
types 0 (gray) and 2 (RGB), no interlacing, no palette.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import CorruptFileError, RegionBoundsError, UnsupportedFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

_COLOR_GRAY = 0
_COLOR_RGB = 2

# zlib window (bytes) fed to the decompressor per step; bounds working memory.
_DECOMPRESS_CHUNK = 1 << 20


@dataclass(frozen=True)
class PngHeader:
    width: int
    height: int
    channels: int  # 1 (gray) or 3 (RGB)

    @property
    def row_bytes(self) -> int:
        return self.width * self.channels


def _read_chunk_header(fh: BinaryIO) -> tuple[int, bytes]:
    raw = fh.read(8)
    if len(raw) < 8:
        raise CorruptFileError("truncated PNG: unexpected end of file in chunk header")
    length = struct.unpack(">I", raw[:4])[0]
    return length, raw[4:8]


def read_header(path: str | Path) -> PngHeader:
    """Parse IHDR only; no pixel data is decoded."""
    with open(path, "rb") as fh:
        return _parse_ihdr(fh)


def _parse_ihdr(fh: BinaryIO) -> PngHeader:
    sig = fh.read(8)
    if sig != PNG_SIGNATURE:
        raise CorruptFileError("not a PNG file (bad signature)")
    length, ctype = _read_chunk_header(fh)
    if ctype != b"IHDR" or length != 13:
        raise CorruptFileError("PNG missing IHDR chunk")
    body = fh.read(13)
    if len(body) < 13:
        raise CorruptFileError("truncated PNG: short IHDR")
    crc = fh.read(4)
    if len(crc) < 4 or struct.unpack(">I", crc)[0] != zlib.crc32(b"IHDR" + body):
        raise CorruptFileError("PNG IHDR checksum mismatch")
    width, height, bit_depth, color_type, compression, filt, interlace = struct.unpack(
        ">IIBBBBB", body
    )
    if width == 0 or height == 0:
        raise CorruptFileError("PNG has zero dimension")
    if bit_depth != 8:
        raise UnsupportedFormatError(f"unsupported PNG bit depth {bit_depth} (need 8)")
    if color_type not in (_COLOR_GRAY, _COLOR_RGB):
        raise UnsupportedFormatError(
            f"unsupported PNG color type {color_type} (need gray or RGB)"
        )
    if compression != 0 or filt != 0:
        raise CorruptFileError("PNG has invalid compression/filter method")
    if interlace != 0:
        raise UnsupportedFormatError("interlaced PNG is not supported")
    return PngHeader(width, height, 3 if color_type == _COLOR_RGB else 1)


def _unfilter_row(ftype: int, raw: np.ndarray, prev: np.ndarray, bpp: int) -> np.ndarray:
    """Reverse one scanline filter. `raw` is modified in place and returned."""
    if ftype == 0:  # None
        return raw
    if ftype == 2:  # Up
        raw += prev  # uint8 wraps mod 256
        return raw
    if ftype == 1:  # Sub: cumulative sum with lag bpp
        cols = raw.reshape(-1, bpp)
        np.cumsum(cols, axis=0, dtype=np.uint8, out=cols)
        return raw
    if ftype == 3:  # Average
        out = raw.astype(np.int32)
        prev32 = prev.astype(np.int32)
        n = raw.shape[0]
        for i in range(n):
            left = out[i - bpp] if i >= bpp else 0
            out[i] = (out[i] + ((left + prev32[i]) >> 1)) & 0xFF
        raw[:] = out.astype(np.uint8)
        return raw
    if ftype == 4:  # Paeth
        out = raw.astype(np.int32)
        prev32 = prev.astype(np.int32)
        n = raw.shape[0]
        for i in range(n):
            a = out[i - bpp] if i >= bpp else 0
            b = int(prev32[i])
            c = int(prev32[i - bpp]) if i >= bpp else 0
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            if pa <= pb and pa <= pc:
                pred = a
            elif pb <= pc:
                pred = b
            else:
                pred = c
            out[i] = (out[i] + pred) & 0xFF
        raw[:] = out.astype(np.uint8)
        return raw
    raise CorruptFileError(f"invalid PNG filter type {ftype}")


class PngRowStream:
    """Forward-only scanline decoder.

    Rows come back as uint8 arrays of width*channels bytes. Supports skipping
    ahead (still has to unfilter skipped rows, since filters chain) and keeps
    only the previous row in memory. `rows_decoded` exposes how far the
    stream has advanced, which the tests use to check the memory contract.
    """

    def __init__(self, path: str | Path):
        self._fh = open(path, "rb")
        try:
            self.header = _parse_ihdr(self._fh)
        except Exception:
            self._fh.close()
            raise
        self._decomp = zlib.decompressobj()
        self._pending = bytearray()
        self._idat_done = False
        self._prev = np.zeros(self.header.row_bytes, dtype=np.uint8)
        self.rows_decoded = 0
        # All-filter-0 streams (ours) can skip per-row work entirely.
        self._saw_nonzero_filter = False

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "PngRowStream":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _fill(self, need: int) -> None:
        """Grow self._pending to at least `need` bytes of raw scanline data."""
        try:
            while len(self._pending) < need:
                if self._decomp.unconsumed_tail:
                    chunk = self._decomp.unconsumed_tail
                    self._pending += self._decomp.decompress(chunk, _DECOMPRESS_CHUNK)
                    continue
                if self._idat_done:
                    raise CorruptFileError("truncated PNG: IDAT stream ended early")
                length, ctype = _read_chunk_header(self._fh)
                body = self._fh.read(length)
                if len(body) < length:
                    raise CorruptFileError("truncated PNG: short chunk body")
                crc = self._fh.read(4)
                if len(crc) < 4 or struct.unpack(">I", crc)[0] != zlib.crc32(ctype + body):
                    raise CorruptFileError(f"PNG {ctype!r} checksum mismatch")
                if ctype == b"IDAT":
                    self._pending += self._decomp.decompress(body, _DECOMPRESS_CHUNK)
                elif ctype == b"IEND":
                    self._pending += self._decomp.flush()
                    self._idat_done = True
                # Ancillary chunks are skipped.
        except zlib.error as exc:
            raise CorruptFileError(f"corrupt PNG pixel stream: {exc}") from exc

    def read_rows(self, count: int) -> np.ndarray:
        """Decode the next `count` rows; returns (count, row_bytes) uint8."""
        rb = self.header.row_bytes
        stride = rb + 1
        if self.rows_decoded + count > self.header.height:
            raise CorruptFileError("attempt to read past PNG image height")
        self._fill(stride * count)
        block = bytes(self._pending[: stride * count])
        del self._pending[: stride * count]
        arr = np.frombuffer(block, dtype=np.uint8).reshape(count, stride)
        filters = arr[:, 0]
        rows = arr[:, 1:].copy()
        if self._saw_nonzero_filter or filters.any():
            self._saw_nonzero_filter = True
            bpp = self.header.channels
            prev = self._prev
            for i in range(count):
                prev = _unfilter_row(int(filters[i]), rows[i], prev, bpp)
            self._prev = rows[-1].copy() if count else self._prev
        elif count:
            self._prev = rows[-1].copy()
        self.rows_decoded += count
        return rows

    def skip_rows(self, count: int) -> None:
        """Advance without returning pixels (filters still require decoding)."""
        # Decode in bounded bands so skipping never materializes the image.
        remaining = count
        while remaining > 0:
            step = min(remaining, 256)
            self.read_rows(step)
            remaining -= step


def read_region(path: str | Path, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Decode a rectangle as (h, w, channels) uint8 (channels dim kept for gray)."""
    with PngRowStream(path) as stream:
        hdr = stream.header
        if x < 0 or y < 0 or w < 0 or h < 0 or x + w > hdr.width or y + h > hdr.height:
            raise RegionBoundsError(
                f"region x={x} y={y} w={w} h={h} outside image {hdr.width}x{hdr.height}"
            )
        stream.skip_rows(y)
        band = stream.read_rows(h)
    band = band.reshape(h, hdr.width, hdr.channels)
    return band[:, x : x + w, :].copy()


def read_full(path: str | Path) -> np.ndarray:
    hdr = read_header(path)
    return read_region(path, 0, 0, hdr.width, hdr.height)


class PngWriter:
    """Streaming PNG encoder; accepts row bands top to bottom."""

    def __init__(self, path: str | Path, width: int, height: int, channels: int,
                 compress_level: int = 6):
        if channels not in (1, 3):
            raise ValueError("channels must be 1 (gray) or 3 (RGB)")
        if width < 1 or height < 1:
            raise ValueError("image dimensions must be >= 1")
        self.width = width
        self.height = height
        self.channels = channels
        self._rows_written = 0
        self._fh = open(path, "wb")
        self._fh.write(PNG_SIGNATURE)
        color_type = _COLOR_RGB if channels == 3 else _COLOR_GRAY
        ihdr = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
        self._write_chunk(b"IHDR", ihdr)
        self._comp = zlib.compressobj(compress_level)
        self._closed = False

    def _write_chunk(self, ctype: bytes, body: bytes) -> None:
        self._fh.write(struct.pack(">I", len(body)))
        self._fh.write(ctype)
        self._fh.write(body)
        self._fh.write(struct.pack(">I", zlib.crc32(ctype + body)))

    def write_rows(self, band: np.ndarray) -> None:
        band = np.ascontiguousarray(band, dtype=np.uint8)
        if band.ndim == 3:
            n, w, c = band.shape
        else:
            n, w = band.shape
            c = 1
        if w != self.width or c != self.channels:
            raise ValueError("band shape does not match image header")
        if self._rows_written + n > self.height:
            raise ValueError("more rows written than declared height")
        flat = band.reshape(n, w * c)
        # Filter type 0 scanlines: one zero byte in front of each row.
        scan = np.empty((n, w * c + 1), dtype=np.uint8)
        scan[:, 0] = 0
        scan[:, 1:] = flat
        data = self._comp.compress(scan.tobytes())
        if data:
            self._write_chunk(b"IDAT", data)
        self._rows_written += n

    def close(self) -> None:
        if self._closed:
            return
        if self._rows_written != self.height:
            self._fh.close()
            self._closed = True
            raise ValueError(
                f"PNG closed after {self._rows_written}/{self.height} rows"
            )
        tail = self._comp.flush()
        if tail:
            self._write_chunk(b"IDAT", tail)
        self._write_chunk(b"IEND", b"")
        self._fh.close()
        self._closed = True

    def __enter__(self) -> "PngWriter":
        return self

    def __exit__(self, exc_type, *exc) -> None:
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
            self._closed = True


def write_png(path: str | Path, pixels: np.ndarray, compress_level: int = 6) -> None:
    """Encode a full in-memory image ((h,w) gray or (h,w,3) RGB)."""
    pixels = np.asarray(pixels)
    channels = 1 if pixels.ndim == 2 else pixels.shape[2]
    with PngWriter(path, pixels.shape[1], pixels.shape[0], channels,
                   compress_level=compress_level) as writer:
        writer.write_rows(pixels)


def encode_png(pixels: np.ndarray, compress_level: int = 6) -> bytes:
    """In-memory PNG encode; used for tile patches so workers avoid temp files."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        h, w = pixels.shape
        c = 1
    else:
        h, w, c = pixels.shape
    color_type = _COLOR_RGB if c == 3 else _COLOR_GRAY
    out = bytearray(PNG_SIGNATURE)

    def chunk(ctype: bytes, body: bytes) -> None:
        out.extend(struct.pack(">I", len(body)))
        out.extend(ctype)
        out.extend(body)
        out.extend(struct.pack(">I", zlib.crc32(ctype + body)))

    chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0))
    flat = pixels.reshape(h, w * c)
    scan = np.empty((h, w * c + 1), dtype=np.uint8)
    scan[:, 0] = 0
    scan[:, 1:] = flat
    chunk(b"IDAT", zlib.compress(scan.tobytes(), compress_level))
    chunk(b"IEND", b"")
    return bytes(out)


def iter_row_bands(path: str | Path, band_height: int,
                   y_start: int = 0, y_stop: int | None = None
                   ) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (y, band) over [y_start, y_stop) in one streaming pass."""
    with PngRowStream(path) as stream:
        hdr = stream.header
        stop = hdr.height if y_stop is None else y_stop
        stream.skip_rows(y_start)
        y = y_start
        while y < stop:
            n = min(band_height, stop - y)
            band = stream.read_rows(n).reshape(n, hdr.width, hdr.channels)
            yield y, band
            y += n
