"""Exception types shared across the toolkit."""

from __future__ import annotations


class CanopyBenchError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedFormatError(CanopyBenchError):
    """File is not a format this toolkit can ingest (e.g. multi-band GeoTIFF)."""


class CorruptFileError(CanopyBenchError):
    """Magic/length mismatch or otherwise unreadable CHMF payload."""


class IoFailureError(CanopyBenchError):
    """Underlying I/O failed (unwritable path, disk error)."""


class TileTooLargeError(CanopyBenchError):
    """Requested tile size exceeds the raster extent."""


class GeometryMismatchError(CanopyBenchError):
    """Rasters expected to be co-registered have different geometry."""


class MissingScoreError(CanopyBenchError):
    """A sample record lacks the quality score required for filtering."""


class RecordReadError(CanopyBenchError):
    """Raster read failed for a specific sample record."""

    def __init__(self, record_id: str, cause: Exception):
        super().__init__(f"record {record_id!r}: {cause}")
        self.record_id = record_id
        self.cause = cause


class EmptySampleError(CanopyBenchError):
    """KS test received an empty sample."""


class EmptySplitError(CanopyBenchError):
    """A split required for the distribution report has no usable data."""


class NoValidPixelsError(CanopyBenchError):
    """An operation that needs at least one valid pixel got none."""


class DomainMismatchError(CanopyBenchError):
    """Binary masks do not share the same valid-pixel domain."""


class CrownOutOfBoundsError(CanopyBenchError):
    """A synthetic crown disc does not fit inside the scene."""


class ConfigError(CanopyBenchError):
    """Pipeline configuration is missing, unparseable, or inconsistent."""


class StageFailureError(CanopyBenchError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: Exception | str):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
