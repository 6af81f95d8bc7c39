"""Canopy height map derivation from co-registered elevation rasters.

A CHM is the surface model minus the terrain model: what sticks up above
bare ground. Sensor noise can push the difference slightly negative, so
derivation clamps at zero by default and the clamped count is surfaced
through the anomaly report.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatchError
from .raster import GEOMETRY_TOL, Raster, Units

DEFAULT_MAX_HEIGHT = 120.0  # meters; taller than any plausible canopy


class AnomalyKind(str, enum.Enum):
    NEGATIVE_HEIGHT = "negative_height"
    TOO_TALL = "too_tall"
    CLAMPED_NEGATIVE = "clamped_negative"


@dataclass(frozen=True)
class Anomaly:
    kind: AnomalyKind
    count: int


@dataclass(frozen=True)
class ElevationPair:
    """DSM + DTM with identical geometry, both in meters."""

    dsm: Raster
    dtm: Raster

    def __post_init__(self):
        a, b = self.dsm, self.dtm
        if a.width != b.width or a.height != b.height:
            raise GeometryMismatchError(
                f"DSM is {a.width}x{a.height}, DTM is {b.width}x{b.height}"
            )
        if abs(a.pixel_size - b.pixel_size) > GEOMETRY_TOL:
            raise GeometryMismatchError(
                f"pixel sizes differ: {a.pixel_size} vs {b.pixel_size}"
            )
        if (
            abs(a.origin[0] - b.origin[0]) > GEOMETRY_TOL
            or abs(a.origin[1] - b.origin[1]) > GEOMETRY_TOL
        ):
            raise GeometryMismatchError(f"origins differ: {a.origin} vs {b.origin}")
        if a.units != Units.METERS or b.units != Units.METERS:
            raise GeometryMismatchError("DSM and DTM must be in meters")


def derive_chm(pair: ElevationPair, clamp_negative: bool = True) -> Raster:
    """out = dsm - dtm per pixel; nodata wherever either input is nodata.

    With ``clamp_negative`` (the default) negative differences become 0:
    canopy height above ground cannot be negative, only noisy.
    """
    diff = pair.dsm.values - pair.dtm.values  # NaN propagates the nodata union
    if clamp_negative:
        diff = np.where(diff < 0, np.float32(0.0), diff)
    return Raster(
        values=diff,
        pixel_size=pair.dsm.pixel_size,
        origin=pair.dsm.origin,
        nodata=pair.dsm.nodata,
        units=Units.METERS,
    )


def validate_chm(chm: Raster, max_height: float = DEFAULT_MAX_HEIGHT) -> list[Anomaly]:
    """Report negative pixels (unclamped CHMs) and pixels above max_height.

    Empty list means clean. Nodata pixels never count.
    """
    values = chm.values
    anomalies = []
    n_negative = int(np.sum(values < 0))
    if n_negative:
        anomalies.append(Anomaly(AnomalyKind.NEGATIVE_HEIGHT, n_negative))
    n_tall = int(np.sum(values > max_height))
    if n_tall:
        anomalies.append(Anomaly(AnomalyKind.TOO_TALL, n_tall))
    return anomalies


def derive_and_validate(
    pair: ElevationPair, clamp_negative: bool = True, max_height: float = DEFAULT_MAX_HEIGHT
) -> tuple[Raster, list[Anomaly]]:
    """Derivation plus the anomaly report the CLI prints.

    Anomalies are measured on the raw (unclamped) difference; when clamping
    is on, the negative pixels show up as ``clamped_negative`` instead.
    """
    raw = derive_chm(pair, clamp_negative=False)
    anomalies = validate_chm(raw, max_height=max_height)
    if not clamp_negative:
        return raw, anomalies
    out = raw.with_values(np.where(raw.values < 0, np.float32(0.0), raw.values))
    anomalies = [
        Anomaly(AnomalyKind.CLAMPED_NEGATIVE, a.count) if a.kind == AnomalyKind.NEGATIVE_HEIGHT else a
        for a in anomalies
    ]
    return out, anomalies
