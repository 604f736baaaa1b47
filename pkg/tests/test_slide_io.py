"""Slide open/read contracts, codec cross-checks against Pillow, and the
synthetic generator's guarantees."""

import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from clotpipe import png_codec, tiff_codec
from clotpipe.errors import CorruptFileError, RegionBoundsError, UnsupportedFormatError
from clotpipe.slide_io import SlideImage, open_mask, open_slide
from clotpipe.synthetic import (
    SyntheticSlideConfig,
    analytic_blob_area,
    generate_synthetic_slide,
)


def random_rgb(rng, h, w):
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


class TestOpenSlide:
    def test_open_png_reads_dimensions_from_header(self, tmp_path, rng):
        png_codec.write_png(tmp_path / "s.png", random_rgb(rng, 600, 600))
        slide = open_slide(tmp_path / "s.png")
        assert (slide.width, slide.height) == (600, 600)

    def test_open_zero_byte_file_is_corrupt(self, tmp_path):
        path = tmp_path / "empty.png"
        path.write_bytes(b"")
        with pytest.raises(CorruptFileError):
            open_slide(path)

    def test_open_garbage_is_unsupported(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"this is not an image at all")
        with pytest.raises(UnsupportedFormatError):
            open_slide(path)

    def test_open_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            open_slide(tmp_path / "nope.png")

    def test_truncated_png_fails_on_read(self, tmp_path, rng):
        png_codec.write_png(tmp_path / "s.png", random_rgb(rng, 64, 64))
        data = (tmp_path / "s.png").read_bytes()
        (tmp_path / "cut.png").write_bytes(data[: len(data) // 2])
        slide = open_slide(tmp_path / "cut.png")  # header parses fine
        with pytest.raises(CorruptFileError):
            slide.read_full()

    def test_open_dispatches_on_magic_not_extension(self, tmp_path, rng):
        img = random_rgb(rng, 32, 32)
        path = tmp_path / "actually_png.tif"
        png_codec.write_png(path, img)
        slide = open_slide(path)
        assert np.array_equal(slide.read_full(), img)


class TestReadRegion:
    def test_whole_image_read_equals_decoded_image(self, make_png_slide, rng):
        img = random_rgb(rng, 90, 70)
        slide = make_png_slide(img)
        assert np.array_equal(slide.read_region(0, 0, 70, 90), img)

    def test_adjacent_regions_reconcatenate(self, make_png_slide, rng):
        img = random_rgb(rng, 100, 80)
        slide = make_png_slide(img)
        top = slide.read_region(10, 0, 50, 40)
        bottom = slide.read_region(10, 40, 50, 60)
        joined = np.concatenate([top, bottom], axis=0)
        assert np.array_equal(joined, slide.read_region(10, 0, 50, 100))
        left = slide.read_region(0, 5, 30, 20)
        right = slide.read_region(30, 5, 50, 20)
        joined = np.concatenate([left, right], axis=1)
        assert np.array_equal(joined, slide.read_region(0, 5, 80, 20))

    def test_out_of_bounds_is_an_error(self, make_png_slide, rng):
        slide = make_png_slide(random_rgb(rng, 50, 50))
        with pytest.raises(RegionBoundsError):
            slide.read_region(1, 0, 50, 50)  # x+w = width+1
        with pytest.raises(RegionBoundsError):
            slide.read_region(-1, 0, 10, 10)
        with pytest.raises(RegionBoundsError):
            slide.read_region(0, 45, 10, 6)

    def test_reads_are_pure(self, make_png_slide, rng):
        slide = make_png_slide(random_rgb(rng, 64, 64))
        a = slide.read_region(8, 8, 16, 16)
        b = slide.read_region(8, 8, 16, 16)
        assert np.array_equal(a, b)

    def test_concurrent_reads_match_serial(self, make_png_slide, rng):
        from concurrent.futures import ThreadPoolExecutor

        img = random_rgb(rng, 120, 120)
        slide = make_png_slide(img)
        regions = [(x, y, 30, 30) for x in (0, 30, 60, 90) for y in (0, 30, 60, 90)]
        serial = [slide.read_region(*r) for r in regions]
        with ThreadPoolExecutor(max_workers=8) as pool:
            parallel = list(pool.map(lambda r: slide.read_region(*r), regions))
        for a, b in zip(serial, parallel):
            assert np.array_equal(a, b)

    def test_in_memory_slide(self, rng):
        img = random_rgb(rng, 40, 30)
        slide = SlideImage.from_array("mem", img)
        assert np.array_equal(slide.read_region(5, 5, 10, 10), img[5:15, 5:15])


class TestPngCodec:
    def test_pillow_reads_our_png(self, tmp_path, rng):
        img = random_rgb(rng, 123, 77)
        png_codec.write_png(tmp_path / "a.png", img)
        assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")), img)

    def test_we_read_pillow_png(self, tmp_path, rng):
        img = random_rgb(rng, 61, 59)
        Image.fromarray(img).save(tmp_path / "b.png")
        assert np.array_equal(png_codec.read_full(tmp_path / "b.png"), img)

    def test_all_filter_types_decode(self, tmp_path, rng):
        """Hand-build one PNG per scanline filter type and check against a
        Pillow decode of the same bytes."""
        img = random_rgb(rng, 17, 13)
        h, w = img.shape[:2]
        for ftype in range(5):
            raw = bytearray()
            prev = np.zeros(w * 3, dtype=np.int32)
            for r in range(h):
                row = img[r].reshape(-1).astype(np.int32)
                if ftype == 0:
                    filt = row.copy()
                elif ftype == 1:
                    left = np.concatenate([[0, 0, 0], row[:-3]])
                    filt = (row - left) % 256
                elif ftype == 2:
                    filt = (row - prev) % 256
                elif ftype == 3:
                    left = np.concatenate([[0, 0, 0], row[:-3]])
                    filt = (row - (left + prev) // 2) % 256
                else:
                    filt = np.empty_like(row)
                    for i in range(len(row)):
                        a = int(row[i - 3]) if i >= 3 else 0
                        b = int(prev[i])
                        c = int(prev[i - 3]) if i >= 3 else 0
                        p = a + b - c
                        pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                        pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                        filt[i] = (row[i] - pred) % 256
                raw.append(ftype)
                raw.extend(filt.astype(np.uint8).tobytes())
                prev = row
            buf = bytearray(png_codec.PNG_SIGNATURE)

            def chunk(ctype, body):
                buf.extend(struct.pack(">I", len(body)))
                buf.extend(ctype)
                buf.extend(body)
                buf.extend(struct.pack(">I", zlib.crc32(ctype + body)))

            chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            chunk(b"IDAT", zlib.compress(bytes(raw)))
            chunk(b"IEND", b"")
            path = tmp_path / f"f{ftype}.png"
            path.write_bytes(bytes(buf))
            assert np.array_equal(
                np.asarray(Image.open(path)), img
            ), f"fixture for filter {ftype} is wrong"
            assert np.array_equal(
                png_codec.read_full(path), img
            ), f"decoder wrong for filter {ftype}"

    def test_streaming_read_decodes_only_needed_rows(self, tmp_path, rng):
        png_codec.write_png(tmp_path / "s.png", random_rgb(rng, 200, 40))
        with png_codec.PngRowStream(tmp_path / "s.png") as stream:
            stream.skip_rows(10)
            stream.read_rows(5)
            assert stream.rows_decoded == 15

    def test_interlaced_png_unsupported(self, tmp_path):
        buf = bytearray(png_codec.PNG_SIGNATURE)
        body = struct.pack(">IIBBBBB", 16, 16, 8, 2, 0, 0, 1)  # interlace=1
        buf += struct.pack(">I", len(body)) + b"IHDR" + body
        buf += struct.pack(">I", zlib.crc32(b"IHDR" + body))
        (tmp_path / "i.png").write_bytes(bytes(buf))
        with pytest.raises(UnsupportedFormatError):
            png_codec.read_header(tmp_path / "i.png")

    def test_palette_png_unsupported(self, tmp_path, rng):
        img = Image.fromarray(random_rgb(rng, 16, 16)).convert(
            "P", palette=Image.ADAPTIVE
        )
        img.save(tmp_path / "p.png")
        with pytest.raises(UnsupportedFormatError):
            png_codec.read_header(tmp_path / "p.png")

    def test_crc_corruption_detected(self, tmp_path, rng):
        png_codec.write_png(tmp_path / "c.png", random_rgb(rng, 32, 32))
        data = bytearray((tmp_path / "c.png").read_bytes())
        data[60] ^= 0xFF  # somewhere inside IDAT
        (tmp_path / "bad.png").write_bytes(bytes(data))
        with pytest.raises(CorruptFileError):
            png_codec.read_full(tmp_path / "bad.png")


def write_strip_tiff(path, img, rows_per_strip=32, compress=False, predictor=False):
    """Minimal strip-TIFF writer used only as a test fixture builder."""
    h, w = img.shape[:2]
    n_strips = -(-h // rows_per_strip)
    payloads = []
    for s in range(n_strips):
        part = img[s * rows_per_strip : (s + 1) * rows_per_strip]
        if predictor:
            diffed = part.astype(np.int16)
            diffed[:, 1:] = (diffed[:, 1:] - diffed[:, :-1]) % 256
            part = diffed.astype(np.uint8)
        data = part.tobytes()
        payloads.append(zlib.compress(data) if compress else data)

    header_size = 8
    n_entries = 10 + (1 if predictor else 0)
    ifd_size = 2 + n_entries * 12 + 4
    bps_off = header_size + ifd_size
    offsets_off = bps_off + 6
    counts_off = offsets_off + 4 * n_strips
    data_off = counts_off + 4 * n_strips
    strip_offsets = []
    pos = data_off
    for p in payloads:
        strip_offsets.append(pos)
        pos += len(p)

    def entry(tag, ftype, count, value):
        return struct.pack("<HHI4s", tag, ftype, count, value)

    def long_val(v):
        return struct.pack("<I", v)

    def short_val(v):
        return struct.pack("<HH", v, 0)

    entries = [
        entry(256, 4, 1, long_val(w)),
        entry(257, 4, 1, long_val(h)),
        entry(258, 3, 3, long_val(bps_off)),
        entry(259, 3, 1, short_val(8 if compress else 1)),
        entry(262, 3, 1, short_val(2)),
        entry(273, 4, n_strips,
              long_val(offsets_off if n_strips > 1 else strip_offsets[0])),
        entry(277, 3, 1, short_val(3)),
        entry(278, 4, 1, long_val(rows_per_strip)),
        entry(279, 4, n_strips,
              long_val(counts_off if n_strips > 1 else len(payloads[0]))),
        entry(284, 3, 1, short_val(1)),
    ]
    if predictor:
        entries.append(entry(317, 3, 1, short_val(2)))
    buf = bytearray()
    buf += struct.pack("<2sHI", b"II", 42, header_size)
    buf += struct.pack("<H", len(entries))
    for e in sorted(entries, key=lambda e: struct.unpack("<H", e[:2])[0]):
        buf += e
    buf += struct.pack("<I", 0)
    buf += struct.pack("<HHH", 8, 8, 8)
    for off in strip_offsets:
        buf += struct.pack("<I", off)
    for p in payloads:
        buf += struct.pack("<I", len(p))
    for p in payloads:
        buf += p
    path.write_bytes(bytes(buf))


def write_tiled_tiff(path, img, tile_w=64, tile_h=48, compress=False):
    """Minimal tiled-TIFF writer used only as a test fixture builder."""
    h, w = img.shape[:2]
    tiles_across = -(-w // tile_w)
    tiles_down = -(-h // tile_h)
    payloads = []
    for ty in range(tiles_down):
        for tx in range(tiles_across):
            tile = np.full((tile_h, tile_w, 3), 0, dtype=np.uint8)
            ys, xs = ty * tile_h, tx * tile_w
            part = img[ys : ys + tile_h, xs : xs + tile_w]
            tile[: part.shape[0], : part.shape[1]] = part
            data = tile.tobytes()
            payloads.append(zlib.compress(data) if compress else data)

    tags = []  # (tag, type, count, value-or-values)
    n_tiles = len(payloads)
    header_size = 8
    ifd_count = 11
    ifd_size = 2 + ifd_count * 12 + 4
    extra = []  # (placeholder_offset_resolver)

    # Layout: header | IFD | bits-per-sample | offsets | counts | payloads
    bps_off = header_size + ifd_size
    offsets_off = bps_off + 6
    counts_off = offsets_off + 4 * n_tiles
    data_off = counts_off + 4 * n_tiles
    tile_offsets = []
    pos = data_off
    for p in payloads:
        tile_offsets.append(pos)
        pos += len(p)

    def entry(tag, ftype, count, value):
        return struct.pack("<HHI4s", tag, ftype, count, value)

    def long_val(v):
        return struct.pack("<I", v)

    def short_val(v):
        return struct.pack("<HH", v, 0)

    entries = [
        entry(256, 4, 1, long_val(w)),
        entry(257, 4, 1, long_val(h)),
        entry(258, 3, 3, long_val(bps_off)),
        entry(259, 3, 1, short_val(8 if compress else 1)),
        entry(262, 3, 1, short_val(2)),
        entry(277, 3, 1, short_val(3)),
        entry(284, 3, 1, short_val(1)),
        entry(322, 4, 1, long_val(tile_w)),
        entry(323, 4, 1, long_val(tile_h)),
        entry(324, 4, n_tiles, long_val(offsets_off if n_tiles > 1 else tile_offsets[0])),
        entry(325, 4, n_tiles, long_val(counts_off if n_tiles > 1 else len(payloads[0]))),
    ]
    buf = bytearray()
    buf += struct.pack("<2sHI", b"II", 42, header_size)
    buf += struct.pack("<H", len(entries))
    for e in sorted(entries, key=lambda e: struct.unpack("<H", e[:2])[0]):
        buf += e
    buf += struct.pack("<I", 0)  # next IFD
    buf += struct.pack("<HHH", 8, 8, 8)
    for off in tile_offsets:
        buf += struct.pack("<I", off)
    for p in payloads:
        buf += struct.pack("<I", len(p))
    for p in payloads:
        buf += p
    path.write_bytes(bytes(buf))


class TestTiffCodec:
    @pytest.mark.parametrize("compression", [None, "tiff_adobe_deflate"])
    def test_pillow_strip_tiff_roundtrip(self, tmp_path, rng, compression):
        img = random_rgb(rng, 150, 97)
        kwargs = {"compression": compression} if compression else {}
        Image.fromarray(img).save(tmp_path / "s.tif", format="TIFF", **kwargs)
        with tiff_codec.TiffReader(tmp_path / "s.tif") as reader:
            assert np.array_equal(
                reader.read_region(0, 0, 97, 150), img
            )
            assert np.array_equal(reader.read_region(13, 20, 40, 90),
                                  img[20:110, 13:53])

    @pytest.mark.parametrize("compress", [False, True])
    def test_tiled_tiff_roundtrip(self, tmp_path, rng, compress):
        img = random_rgb(rng, 130, 150)
        write_tiled_tiff(tmp_path / "t.tif", img, compress=compress)
        # Pillow confirms the fixture itself is a valid TIFF.
        assert np.array_equal(np.asarray(Image.open(tmp_path / "t.tif")), img)
        with tiff_codec.TiffReader(tmp_path / "t.tif") as reader:
            assert reader.info.tiled
            assert np.array_equal(reader.read_region(0, 0, 150, 130), img)
            assert np.array_equal(reader.read_region(60, 40, 70, 80),
                                  img[40:120, 60:130])

    @pytest.mark.parametrize("compress,predictor", [(False, False), (True, False),
                                                    (True, True)])
    def test_multi_strip_tiff_roundtrip(self, tmp_path, rng, compress, predictor):
        img = random_rgb(rng, 150, 64)
        write_strip_tiff(tmp_path / "s.tif", img, rows_per_strip=32,
                         compress=compress, predictor=predictor)
        # Pillow confirms the fixture itself is a valid TIFF.
        assert np.array_equal(np.asarray(Image.open(tmp_path / "s.tif")), img)
        with tiff_codec.TiffReader(tmp_path / "s.tif") as reader:
            assert len(reader.info.offsets) == 5
            assert np.array_equal(reader.read_region(0, 0, 64, 150), img)
            assert np.array_equal(reader.read_region(9, 40, 30, 70),
                                  img[40:110, 9:39])

    def test_region_read_touches_only_needed_strips(self, tmp_path, rng):
        img = random_rgb(rng, 1500, 64)
        write_strip_tiff(tmp_path / "s.tif", img, rows_per_strip=100)
        with tiff_codec.TiffReader(tmp_path / "s.tif") as reader:
            assert len(reader.info.offsets) == 15
            reader.read_region(0, 150, 64, 50)  # rows 150-199: strip 1 only
            assert reader.chunks_decoded == 1
            assert np.array_equal(reader.read_region(0, 150, 64, 50),
                                  img[150:200])

    def test_multilevel_tiff_reads_level_zero_only(self, tmp_path, rng):
        img = random_rgb(rng, 64, 64)
        small = np.asarray(Image.fromarray(img).resize((32, 32)))
        Image.fromarray(img).save(
            tmp_path / "pyr.tif", format="TIFF",
            append_images=[Image.fromarray(small)], save_all=True,
        )
        with tiff_codec.TiffReader(tmp_path / "pyr.tif") as reader:
            assert (reader.info.width, reader.info.height) == (64, 64)
            assert np.array_equal(reader.read_region(0, 0, 64, 64), img)

    def test_unsupported_compression_rejected(self, tmp_path, rng):
        img = random_rgb(rng, 32, 32)
        Image.fromarray(img).save(tmp_path / "lzw.tif", format="TIFF",
                                  compression="tiff_lzw")
        with pytest.raises(UnsupportedFormatError):
            tiff_codec.TiffReader(tmp_path / "lzw.tif")

    def test_open_slide_tiff_region(self, tmp_path, rng):
        img = random_rgb(rng, 80, 90)
        Image.fromarray(img).save(tmp_path / "s.tif", format="TIFF")
        slide = open_slide(tmp_path / "s.tif")
        assert (slide.width, slide.height) == (90, 80)
        assert np.array_equal(slide.read_region(10, 12, 20, 30), img[12:42, 10:30])


class TestSyntheticGenerator:
    def test_round_trips_dimensions(self, tmp_path):
        cfg = SyntheticSlideConfig(700, 500, "CE", blob_count=1,
                                   blob_radius_px=(80, 120), seed=3)
        slide, mask = generate_synthetic_slide(cfg, tmp_path / "s.png",
                                               tmp_path / "m.png")
        assert (slide.width, slide.height) == (700, 500)
        assert (mask.width, mask.height) == (700, 500)

    def test_blob_count_zero_is_pure_background(self, tmp_path):
        cfg = SyntheticSlideConfig(300, 200, "LAA", blob_count=0, seed=1)
        slide, mask = generate_synthetic_slide(cfg, tmp_path / "s.png",
                                               tmp_path / "m.png")
        assert (slide.read_full() == 255).all()
        assert not mask.read_region(0, 0, 300, 200).any()

    def test_different_seeds_differ(self, tmp_path):
        for seed in (1, 2):
            cfg = SyntheticSlideConfig(400, 300, "CE", blob_count=2,
                                       blob_radius_px=(40, 80), seed=seed)
            generate_synthetic_slide(cfg, tmp_path / f"s{seed}.png",
                                     tmp_path / f"m{seed}.png")
        assert (tmp_path / "s1.png").read_bytes() != (tmp_path / "s2.png").read_bytes()

    def test_identical_config_identical_bytes(self, tmp_path):
        cfg = SyntheticSlideConfig(400, 300, "CE", blob_count=2,
                                   blob_radius_px=(40, 80), seed=9)
        generate_synthetic_slide(cfg, tmp_path / "a.png", tmp_path / "am.png")
        generate_synthetic_slide(cfg, tmp_path / "b.png", tmp_path / "bm.png")
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
        assert (tmp_path / "am.png").read_bytes() == (tmp_path / "bm.png").read_bytes()

    def test_mask_matches_analytic_area_within_5pct(self, tmp_path):
        # Single blob never overlaps itself, so the analytic area is exact.
        cfg = SyntheticSlideConfig(900, 900, "CE", blob_count=1,
                                   blob_radius_px=(200, 200), seed=5)
        _, mask = generate_synthetic_slide(cfg, tmp_path / "s.png",
                                           tmp_path / "m.png")
        measured = mask.read_region(0, 0, 900, 900).sum()
        expected = analytic_blob_area(cfg)
        assert abs(measured - expected) / expected < 0.05

    def test_foreground_differs_from_background(self, tmp_path):
        cfg = SyntheticSlideConfig(500, 400, "CE", blob_count=3,
                                   blob_radius_px=(60, 120), seed=11)
        slide, mask = generate_synthetic_slide(cfg, tmp_path / "s.png",
                                               tmp_path / "m.png")
        pixels = slide.read_full()
        fg = mask.read_region(0, 0, 500, 400)
        assert not (pixels[fg] == (255, 255, 255)).all(axis=1).any()
        assert (pixels[~fg] == 255).all()

    def test_blob_larger_than_slide_errors(self, tmp_path):
        cfg = SyntheticSlideConfig(100, 100, "CE", blob_count=1,
                                   blob_radius_px=(80, 90), seed=0)
        with pytest.raises(ValueError):
            generate_synthetic_slide(cfg, tmp_path / "s.png", tmp_path / "m.png")

    def test_mask_opens_via_open_mask(self, tmp_path):
        cfg = SyntheticSlideConfig(300, 300, "CE", blob_count=1,
                                   blob_radius_px=(50, 80), seed=2)
        _, mask = generate_synthetic_slide(cfg, tmp_path / "s.png",
                                           tmp_path / "m.png")
        again = open_mask(tmp_path / "m.png")
        assert np.array_equal(again.read_region(0, 0, 300, 300),
                              mask.read_region(0, 0, 300, 300))


class TestZeroDimension:
    def test_zero_width_png_is_corrupt(self, tmp_path):
        buf = bytearray(png_codec.PNG_SIGNATURE)
        body = struct.pack(">IIBBBBB", 0, 16, 8, 2, 0, 0, 0)
        buf += struct.pack(">I", len(body)) + b"IHDR" + body
        buf += struct.pack(">I", zlib.crc32(b"IHDR" + body))
        (tmp_path / "z.png").write_bytes(bytes(buf))
        with pytest.raises(CorruptFileError):
            open_slide(tmp_path / "z.png")

    def test_zero_height_tiff_is_corrupt(self, tmp_path, rng):
        img = random_rgb(rng, 8, 8)
        write_strip_tiff(tmp_path / "t.tif", img, rows_per_strip=8)
        data = bytearray((tmp_path / "t.tif").read_bytes())
        # ImageLength entry value lives 8 bytes into its IFD entry
        idx = data.find(struct.pack("<HHI", 257, 4, 1))
        data[idx + 8 : idx + 12] = struct.pack("<I", 0)
        (tmp_path / "z.tif").write_bytes(bytes(data))
        with pytest.raises(CorruptFileError):
            open_slide(tmp_path / "z.tif")


class TestTiffPipelineIntegration:
    def test_tiff_slide_tiles_like_its_png_twin(self, tmp_path, rng):
        from clotpipe.config import RunConfig
        from clotpipe.pipeline import tile_run, write_labels_csv
        from clotpipe.tiler import read_manifest

        pixels = random_rgb(rng, 700, 1300)
        pixels[:, :400] = 255  # white margin so ratios vary
        for fmt, writer in (
            ("png", lambda p: png_codec.write_png(p, pixels)),
            ("tif", lambda p: Image.fromarray(pixels).save(p, format="TIFF")),
        ):
            out = tmp_path / fmt
            (out / "slides").mkdir(parents=True)
            path = out / "slides" / f"s.{fmt}"
            writer(path)
            write_labels_csv(out / "labels.csv", [{
                "slide_id": "s", "path": f"slides/s.{fmt}",
                "mask_path": None, "label": "CE",
            }])
            cfg = RunConfig(output_dir=str(out), seed=1, workers=2)
            tile_run(cfg, out / "labels.csv")

        png_records = read_manifest(tmp_path / "png" / "tiles" / "manifest.jsonl", 600)
        tif_records = read_manifest(tmp_path / "tif" / "tiles" / "manifest.jsonl", 600)
        assert len(png_records) == len(tif_records) > 0
        for a, b in zip(png_records, tif_records):
            assert a.spec.key == b.spec.key
            assert a.content_ratio == b.content_ratio
