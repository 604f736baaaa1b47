import numpy as np
import pytest

from clotpipe import png_codec
from clotpipe.slide_io import SlideImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_png_slide(tmp_path):
    """Write an RGB array as PNG and open it as a SlideImage."""

    counter = {"n": 0}

    def factory(pixels: np.ndarray, slide_id: str | None = None) -> SlideImage:
        counter["n"] += 1
        sid = slide_id or f"slide{counter['n']}"
        path = tmp_path / f"{sid}.png"
        png_codec.write_png(path, pixels)
        from clotpipe.slide_io import open_slide

        return open_slide(path, sid)

    return factory


@pytest.fixture
def textured_tile(rng):
    """Smooth random texture: low-frequency noise upsampled to 128px."""
    from clotpipe.augment import resize

    small = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    return resize(small, 128)
