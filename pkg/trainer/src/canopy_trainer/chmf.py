"""CHMF v1 codec: the wire format shared with the evaluation toolkit.

Little-endian layout: magic "CHMF\\x01", width u32, height u32, units u8
(0=meters 1=relative 2=score 3=dimensionless), 3 reserved bytes, nodata f32,
pixel_size f32, origin x/y f64, then width*height f32 row-major values.
Pixels equal to the nodata sentinel load as NaN.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CHMF\x01"
_HEADER = struct.Struct("<5sIIB3xffdd")

UNITS_METERS = 0
UNITS_RELATIVE = 1


@dataclass(frozen=True)
class Grid:
    """A decoded raster: float32 values (NaN = nodata) plus geometry."""

    values: np.ndarray
    pixel_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    nodata: float = float("nan")
    units: int = UNITS_METERS


def read_chmf(path: str | Path) -> Grid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:5] != MAGIC:
        raise ValueError(f"{path}: not a CHMF v1 file")
    _, width, height, units, nodata, pixel_size, ox, oy = _HEADER.unpack_from(data)
    if len(data) != _HEADER.size + 4 * width * height:
        raise ValueError(f"{path}: truncated payload")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(height, width).copy()
    if not np.isnan(nodata):
        values[values == np.float32(nodata)] = np.nan
    return Grid(
        values=values,
        pixel_size=float(pixel_size),
        origin=(ox, oy),
        nodata=float(nodata),
        units=int(units),
    )


def write_chmf(grid: Grid, path: str | Path) -> None:
    values = np.ascontiguousarray(grid.values, dtype="<f4")
    if not np.isnan(grid.nodata):
        values = np.where(np.isnan(values), np.float32(grid.nodata), values)
    header = _HEADER.pack(
        MAGIC,
        values.shape[1],
        values.shape[0],
        grid.units,
        np.float32(grid.nodata),
        np.float32(grid.pixel_size),
        grid.origin[0],
        grid.origin[1],
    )
    Path(path).write_bytes(header + values.tobytes())
