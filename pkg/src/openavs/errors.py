"""Exception hierarchy shared across the pipeline stages."""

from __future__ import annotations


class OpenAVSError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(OpenAVSError):
    """Invalid pipeline or CLI configuration."""


# -- knowledge bank -----------------------------------------------------------

class DuplicateKeyError(OpenAVSError):
    """A description was inserted twice under the same bank key."""


class VideoMismatchError(OpenAVSError):
    """A description's video id does not match the bank it targets."""


class FrozenBankError(OpenAVSError):
    """Insertion attempted after the bank was frozen for translation."""


# -- prompt assembly and parsing ----------------------------------------------

class UnknownVariantError(OpenAVSError):
    """Prompt variant index outside the fixed catalog for that agent kind."""


class MissingFrameError(OpenAVSError):
    """A frame has no audio description, so a complete request cannot be built."""


class MissingModalityError(OpenAVSError):
    """Model-consistency input needs both an image-side and an audio-side description."""


class NoAnswerTagsError(OpenAVSError):
    """Translator reply contained no <answer>...</answer> span."""


# -- transport and services ---------------------------------------------------

class TransportError(OpenAVSError):
    """Connection failure or timeout talking to a service."""


class ServiceError(OpenAVSError):
    """Non-success HTTP status from a service."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"service returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


class RetryExhaustedError(OpenAVSError):
    """All retry attempts failed."""


class InvalidRequestError(OpenAVSError):
    """Request violates a client precondition (e.g. empty translator input)."""


class UnknownFixtureError(OpenAVSError):
    """Scripted mock has no reply recorded for the request digest."""


class MaskShapeMismatchError(OpenAVSError):
    """A returned detection mask does not match the frame dimensions."""


# -- evaluation ----------------------------------------------------------------

class ShapeMismatchError(OpenAVSError):
    """Compared masks have different dimensions."""


# -- cost accounting -----------------------------------------------------------

class UnknownModelError(OpenAVSError):
    """No price-table entry for a model id."""


# -- dataset I/O ----------------------------------------------------------------

class ManifestError(OpenAVSError):
    """Manifest file failed to parse or violates the schema."""


class MissingFileError(OpenAVSError):
    """A path referenced by a manifest does not exist."""


class DecodeError(OpenAVSError):
    """An image file could not be decoded."""


class ShapeZeroError(OpenAVSError):
    """An image decoded to zero pixels."""
