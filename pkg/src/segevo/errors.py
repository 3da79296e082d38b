"""Exception types shared across the package.

Every error raised deliberately by this package derives from ToolkitError, so
callers can catch one base class at orchestration boundaries. Plain OSError is
allowed to propagate for filesystem failures.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ToolkitError):
    """Two rasters that must share a shape do not."""


class EmptySet(ToolkitError):
    """An aggregate was requested over zero elements."""


class InvalidParams(ToolkitError):
    """Distortion parameters violate their structural constraints."""


class IndexOutOfRange(ToolkitError):
    """A row/column/pixel index does not fit the target image."""


class ChannelMismatch(ToolkitError):
    """A channel operation was applied to an image without that channel."""


class InvalidConfig(ToolkitError):
    """A configuration object violates its invariants."""


class MalformedPayload(ToolkitError):
    """A binary payload failed to decode.

    `offset` is the byte offset at which decoding failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyPopulation(ToolkitError):
    """Selection was attempted over an empty population."""


class OracleFailure(ToolkitError):
    """The segmentation oracle failed while evaluating a chromosome."""


class ProtocolError(ToolkitError):
    """A wire frame violated the protocol (bad magic, version, or length)."""


class OracleError(ToolkitError):
    """The remote oracle answered with an explicit error frame."""


class OracleTimeout(ToolkitError):
    """The remote oracle did not answer within the configured timeout."""


class AllZeroDifferences(ToolkitError):
    """Paired samples are identical; the signed-rank test carries no information."""


class LengthMismatch(ToolkitError):
    """Paired sample lists have different lengths."""


class DegenerateVariance(ToolkitError):
    """Pooled standard deviation is zero; the effect size is undefined."""


class TooFewSamples(ToolkitError):
    """A statistic requiring at least two samples per group got fewer."""


class MissingLabel(ToolkitError):
    """A dataset image has no matching label file."""


class DecodeError(ToolkitError):
    """A raster file exists but cannot be decoded."""


class ShapeMismatch(ToolkitError):
    """An image and its label map disagree on spatial size."""


class GateViolation(ToolkitError):
    """An export was attempted below the fidelity threshold."""


class InvalidSpec(ToolkitError):
    """A synthetic scene description is unsatisfiable."""


class IdMismatch(ToolkitError):
    """Two IoU tables do not cover the same id set.

    `only_a` / `only_b` list the ids private to each side.
    """

    def __init__(self, message: str, only_a=(), only_b=()):
        super().__init__(message)
        self.only_a = sorted(only_a)
        self.only_b = sorted(only_b)


class DriftDetected(ToolkitError):
    """Replay found entries whose outputs no longer reproduce.

    `entries` holds (id, reason) pairs.
    """

    def __init__(self, message: str, entries=()):
        super().__init__(message)
        self.entries = list(entries)


class ConfigError(ToolkitError):
    """A config file, flag set, or environment override is unusable."""
