"""Exception types shared across the pipeline."""


class ClotpipeError(Exception):
    """Base class for errors raised by this package."""


class UnsupportedFormatError(ClotpipeError):
    """The file is recognizable but uses a feature outside the supported subset."""


class CorruptFileError(ClotpipeError):
    """The file is truncated, has bad checksums, or is not a valid image at all."""


class RegionBoundsError(ClotpipeError, ValueError):
    """A region read fell outside the image; callers must clamp or pad explicitly."""


class TileExtractionError(ClotpipeError):
    """I/O failure while extracting a tile; carries the failing tile spec."""

    def __init__(self, spec, cause: BaseException):
        self.spec = spec
        self.cause = cause
        super().__init__(f"failed to extract tile {spec}: {cause}")


class ScoreFormatError(ClotpipeError, ValueError):
    """An external score file violates the CSV contract."""


class LayoutMismatchError(ClotpipeError, ValueError):
    """Model and feature extractor disagree on the feature layout version."""


class NonFiniteGradientError(ClotpipeError, ValueError):
    """A gradient contained NaN/inf; names the offending parameter."""


class TrainingDivergedError(ClotpipeError, RuntimeError):
    """Training loss became non-finite; carries the epoch number."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
