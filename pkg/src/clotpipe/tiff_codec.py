"""Streaming reader for baseline single-level TIFF slides.

Whole-slide exports routinely exceed memory, so region reads touch only the
strips or tiles that intersect the request. Supported subset: classic TIFF
(both byte orders), first IFD only, 8-bit RGB, chunky planar layout,
compression none/Deflate, optional horizontal-differencing predictor.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, RegionBoundsError, UnsupportedFormatError

_TAG_IMAGE_WIDTH = 256
_TAG_IMAGE_LENGTH = 257
_TAG_BITS_PER_SAMPLE = 258
_TAG_COMPRESSION = 259
_TAG_PHOTOMETRIC = 262
_TAG_STRIP_OFFSETS = 273
_TAG_SAMPLES_PER_PIXEL = 277
_TAG_ROWS_PER_STRIP = 278
_TAG_STRIP_BYTE_COUNTS = 279
_TAG_PLANAR_CONFIG = 284
_TAG_PREDICTOR = 317
_TAG_TILE_WIDTH = 322
_TAG_TILE_LENGTH = 323
_TAG_TILE_OFFSETS = 324
_TAG_TILE_BYTE_COUNTS = 325

_COMPRESSION_NONE = 1
_COMPRESSION_DEFLATE_ADOBE = 8
_COMPRESSION_DEFLATE_OLD = 32946

# TIFF field type -> (struct code, byte size); rationals handled as pairs.
_FIELD_TYPES = {
    1: ("B", 1),   # BYTE
    2: ("c", 1),   # ASCII
    3: ("H", 2),   # SHORT
    4: ("I", 4),   # LONG
    5: ("II", 8),  # RATIONAL
}


@dataclass
class TiffInfo:
    width: int
    height: int
    compression: int
    predictor: int
    tiled: bool
    chunk_width: int       # tile width, or image width for strips
    chunk_height: int      # tile length, or rows-per-strip
    offsets: list[int] = field(repr=False, default_factory=list)
    byte_counts: list[int] = field(repr=False, default_factory=list)


def _parse_ifd_entries(data: bytes, order: str) -> dict[int, tuple[int, int, bytes]]:
    entries = {}
    count = struct.unpack(order + "H", data[:2])[0]
    for i in range(count):
        raw = data[2 + 12 * i : 2 + 12 * (i + 1)]
        tag, ftype, n = struct.unpack(order + "HHI", raw[:8])
        entries[tag] = (ftype, n, raw[8:12])
    return entries


class TiffReader:
    """Random-access region reader over one baseline TIFF level."""

    def __init__(self, path: str | Path):
        self._fh = open(path, "rb")
        self.chunks_decoded = 0  # decompressed strip/tile count, for memory tests
        try:
            self.info = self._parse(path)
        except Exception:
            self._fh.close()
            raise

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TiffReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- parsing ------------------------------------------------------------

    def _parse(self, path) -> TiffInfo:
        head = self._fh.read(8)
        if len(head) < 8:
            raise CorruptFileError("truncated TIFF: short header")
        if head[:2] == b"II":
            order = "<"
        elif head[:2] == b"MM":
            order = ">"
        else:
            raise CorruptFileError("not a TIFF file (bad byte order mark)")
        magic = struct.unpack(order + "H", head[2:4])[0]
        if magic == 43:
            raise UnsupportedFormatError("BigTIFF is not supported")
        if magic != 42:
            raise CorruptFileError("not a TIFF file (bad magic number)")
        self._order = order
        ifd_offset = struct.unpack(order + "I", head[4:8])[0]

        self._fh.seek(ifd_offset)
        count_raw = self._fh.read(2)
        if len(count_raw) < 2:
            raise CorruptFileError("truncated TIFF: missing IFD")
        (n_entries,) = struct.unpack(order + "H", count_raw)
        body = count_raw + self._fh.read(12 * n_entries + 4)
        if len(body) < 2 + 12 * n_entries:
            raise CorruptFileError("truncated TIFF: short IFD")
        entries = _parse_ifd_entries(body, order)

        width = self._scalar(entries, _TAG_IMAGE_WIDTH)
        height = self._scalar(entries, _TAG_IMAGE_LENGTH)
        if width is None or height is None:
            raise CorruptFileError("TIFF missing image dimensions")
        if width == 0 or height == 0:
            raise CorruptFileError("TIFF has zero dimension")

        bits = self._values(entries, _TAG_BITS_PER_SAMPLE) or [1]
        spp = self._scalar(entries, _TAG_SAMPLES_PER_PIXEL) or 1
        if spp != 3 or any(b != 8 for b in bits):
            raise UnsupportedFormatError(
                f"only 8-bit RGB TIFF supported (got {spp} samples, bits {bits})"
            )
        photometric = self._scalar(entries, _TAG_PHOTOMETRIC)
        if photometric != 2:
            raise UnsupportedFormatError(
                f"unsupported TIFF photometric interpretation {photometric}"
            )
        planar = self._scalar(entries, _TAG_PLANAR_CONFIG) or 1
        if planar != 1:
            raise UnsupportedFormatError("planar (separated) TIFF is not supported")
        compression = self._scalar(entries, _TAG_COMPRESSION) or 1
        if compression not in (_COMPRESSION_NONE, _COMPRESSION_DEFLATE_ADOBE,
                               _COMPRESSION_DEFLATE_OLD):
            raise UnsupportedFormatError(
                f"unsupported TIFF compression {compression} (need none or Deflate)"
            )
        predictor = self._scalar(entries, _TAG_PREDICTOR) or 1
        if predictor not in (1, 2):
            raise UnsupportedFormatError(f"unsupported TIFF predictor {predictor}")

        if _TAG_TILE_OFFSETS in entries:
            tile_w = self._scalar(entries, _TAG_TILE_WIDTH)
            tile_h = self._scalar(entries, _TAG_TILE_LENGTH)
            offsets = self._values(entries, _TAG_TILE_OFFSETS)
            counts = self._values(entries, _TAG_TILE_BYTE_COUNTS)
            if not tile_w or not tile_h or offsets is None or counts is None:
                raise CorruptFileError("TIFF tile layout tags incomplete")
            tiles_across = -(-width // tile_w)
            tiles_down = -(-height // tile_h)
            if len(offsets) != tiles_across * tiles_down:
                raise CorruptFileError("TIFF tile count mismatch")
            return TiffInfo(width, height, compression, predictor, True,
                            tile_w, tile_h, offsets, counts)

        offsets = self._values(entries, _TAG_STRIP_OFFSETS)
        if offsets is None:
            raise CorruptFileError("TIFF missing strip/tile offsets")
        rows_per_strip = self._scalar(entries, _TAG_ROWS_PER_STRIP) or height
        rows_per_strip = min(rows_per_strip, height)
        counts = self._values(entries, _TAG_STRIP_BYTE_COUNTS)
        if counts is None:
            if compression != _COMPRESSION_NONE:
                raise CorruptFileError("compressed TIFF missing strip byte counts")
            counts = [
                min(rows_per_strip, height - i * rows_per_strip) * width * 3
                for i in range(len(offsets))
            ]
        n_strips = -(-height // rows_per_strip)
        if len(offsets) != n_strips:
            raise CorruptFileError("TIFF strip count mismatch")
        return TiffInfo(width, height, compression, predictor, False,
                        width, rows_per_strip, offsets, counts)

    def _values(self, entries, tag) -> list[int] | None:
        if tag not in entries:
            return None
        ftype, n, inline = entries[tag]
        if ftype not in _FIELD_TYPES:
            raise UnsupportedFormatError(f"TIFF tag {tag} has field type {ftype}")
        code, size = _FIELD_TYPES[ftype]
        total = size * n
        if total <= 4:
            raw = inline[:total]
        else:
            (offset,) = struct.unpack(self._order + "I", inline)
            self._fh.seek(offset)
            raw = self._fh.read(total)
            if len(raw) < total:
                raise CorruptFileError(f"truncated TIFF: tag {tag} data out of range")
        vals = struct.unpack(self._order + code * n, raw)
        if ftype == 5:  # rationals come back as numerator/denominator pairs
            vals = tuple(vals[2 * i] / max(vals[2 * i + 1], 1) for i in range(n))
        return [int(v) for v in vals]

    def _scalar(self, entries, tag) -> int | None:
        vals = self._values(entries, tag)
        return vals[0] if vals else None

    # -- decoding -----------------------------------------------------------

    def _decode_chunk(self, index: int, rows: int, cols: int) -> np.ndarray:
        """Decompress one strip/tile into (rows, cols, 3) uint8."""
        info = self.info
        self._fh.seek(info.offsets[index])
        raw = self._fh.read(info.byte_counts[index])
        if len(raw) < info.byte_counts[index]:
            raise CorruptFileError(f"truncated TIFF: chunk {index} out of range")
        if info.compression != _COMPRESSION_NONE:
            try:
                raw = zlib.decompress(raw)
            except zlib.error as exc:
                raise CorruptFileError(f"corrupt TIFF chunk {index}: {exc}") from exc
        expected = rows * cols * 3
        if len(raw) < expected:
            raise CorruptFileError(
                f"TIFF chunk {index} too short ({len(raw)} < {expected} bytes)"
            )
        arr = np.frombuffer(raw[:expected], dtype=np.uint8).reshape(rows, cols, 3)
        if info.predictor == 2:
            arr = np.cumsum(arr, axis=1, dtype=np.uint8)
        self.chunks_decoded += 1
        return arr

    def read_region(self, x: int, y: int, w: int, h: int) -> np.ndarray:
        info = self.info
        if x < 0 or y < 0 or w < 0 or h < 0 or x + w > info.width or y + h > info.height:
            raise RegionBoundsError(
                f"region x={x} y={y} w={w} h={h} outside image "
                f"{info.width}x{info.height}"
            )
        out = np.empty((h, w, 3), dtype=np.uint8)
        cw, ch = info.chunk_width, info.chunk_height
        chunks_across = -(-info.width // cw)
        row0, row1 = y // ch, (y + h - 1) // ch
        col0, col1 = x // cw, (x + w - 1) // cw
        for cr in range(row0, row1 + 1):
            # Tile chunks are padded to full size; strips are clipped at the
            # image bottom.
            if info.tiled:
                rows = ch
            else:
                rows = min(ch, info.height - cr * ch)
            for cc in range(col0, col1 + 1):
                chunk = self._decode_chunk(cr * chunks_across + cc, rows, cw)
                cy0 = max(y, cr * ch)
                cy1 = min(y + h, cr * ch + rows)
                cx0 = max(x, cc * cw)
                cx1 = min(x + w, cc * cw + min(cw, info.width - cc * cw))
                out[cy0 - y : cy1 - y, cx0 - x : cx1 - x, :] = chunk[
                    cy0 - cr * ch : cy1 - cr * ch, cx0 - cc * cw : cx1 - cc * cw, :
                ]
        return out
