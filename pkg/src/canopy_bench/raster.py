"""Raster data model, CHMF on-disk format, GeoTIFF ingestion, and tiling.

The in-memory convention: ``values`` is a 2-D float32 array (row 0 =
northmost), invalid pixels are NaN regardless of what sentinel the source
file declared, and the declared sentinel is kept on the ``nodata`` field so
writes can restore it. Every statistic downstream treats NaN as "not there".

CHMF v1 wire format (little-endian, bit-exact across implementations):

    magic      5 bytes  "CHMF\\x01"
    width      u32
    height     u32
    units_tag  u8       0=meters 1=relative 2=score 3=dimensionless
    reserved   3 bytes  zero
    nodata     f32
    pixel_size f32
    origin_x   f64
    origin_y   f64
    payload    width*height f32, row-major, row 0 = northmost

Header is 41 bytes; total file size is 41 + 4*width*height.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFileError,
    IoFailureError,
    TileTooLargeError,
    UnsupportedFormatError,
)
from .rng import SplitMix64

CHMF_MAGIC = b"CHMF\x01"
_HEADER = struct.Struct("<5sIIB3xffdd")

GEOMETRY_TOL = 1e-6  # meters, for origin/pixel_size comparisons


class Units(enum.IntEnum):
    METERS = 0
    RELATIVE = 1
    SCORE = 2
    DIMENSIONLESS = 3


@dataclass(frozen=True, eq=False)
class Raster:
    """Single-band float grid with geospatial metadata.

    Immutable after construction (the value buffer is write-locked), so
    instances are safe to share across worker threads.
    """

    values: np.ndarray
    pixel_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    nodata: float = float("nan")
    units: Units = Units.METERS

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError("raster values must be a 2-D grid")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("raster must have positive width and height")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be > 0")
        # pixel_size and nodata live as f32 in the CHMF header; quantize here so
        # write->read round-trips are bit-exact by construction
        nodata = float(np.float32(self.nodata))
        # map the declared sentinel onto NaN so downstream code has one code path
        if not np.isnan(nodata):
            arr = np.where(arr == np.float32(nodata), np.float32(np.nan), arr)
        arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr = arr.copy()  # detach from caller-owned memory
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "pixel_size", float(np.float32(self.pixel_size)))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "nodata", nodata)
        object.__setattr__(self, "units", Units(self.units))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def valid_values(self) -> np.ndarray:
        """1-D array of the valid pixel values."""
        return self.values[self.valid_mask]

    def same_geometry(self, other: "Raster", tol: float = GEOMETRY_TOL) -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and abs(self.pixel_size - other.pixel_size) <= tol
            and abs(self.origin[0] - other.origin[0]) <= tol
            and abs(self.origin[1] - other.origin[1]) <= tol
        )

    def equals_bitwise(self, other: "Raster") -> bool:
        """Metadata and values identical; NaNs compare equal to NaNs."""
        if not (
            self.width == other.width
            and self.height == other.height
            and self.pixel_size == other.pixel_size
            and self.origin == other.origin
            and self.units == other.units
            and (self.nodata == other.nodata or (np.isnan(self.nodata) and np.isnan(other.nodata)))
        ):
            return False
        return np.array_equal(self.values, other.values, equal_nan=True)

    def with_values(self, values: np.ndarray, units: Units | None = None) -> "Raster":
        """New raster with the same geometry and different values."""
        return Raster(
            values=values,
            pixel_size=self.pixel_size,
            origin=self.origin,
            nodata=self.nodata,
            units=self.units if units is None else units,
        )


@dataclass(frozen=True)
class Tile:
    """A square window into a parent raster (partial at grid edges)."""

    parent_id: str
    row_off: int
    col_off: int
    size: int
    values: np.ndarray = field(repr=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def partial(self) -> bool:
        return self.values.shape != (self.size, self.size)


# ---------------------------------------------------------------------------
# CHMF read/write


def write_raster(r: Raster, path: str | Path) -> None:
    """Write canonical CHMF v1. Raises IoFailure if the path is unwritable."""
    header = _HEADER.pack(
        CHMF_MAGIC,
        r.width,
        r.height,
        int(r.units),
        np.float32(r.nodata),
        np.float32(r.pixel_size),
        r.origin[0],
        r.origin[1],
    )
    values = r.values
    if not np.isnan(r.nodata):
        values = np.where(np.isnan(values), np.float32(r.nodata), values)
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def _read_chmf(path: str | Path) -> Raster:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size or data[:5] != CHMF_MAGIC:
        raise CorruptFileError(f"{path}: not a CHMF v1 file")
    magic, width, height, units_tag, nodata, pixel_size, ox, oy = _HEADER.unpack_from(data)
    expected = _HEADER.size + 4 * width * height
    if len(data) != expected:
        raise CorruptFileError(
            f"{path}: payload length {len(data) - _HEADER.size} != width*height*4 = {4 * width * height}"
        )
    if width < 1 or height < 1:
        raise CorruptFileError(f"{path}: zero-sized raster")
    if units_tag > 3:
        raise CorruptFileError(f"{path}: unknown units tag {units_tag}")
    if not pixel_size > 0:
        raise CorruptFileError(f"{path}: non-positive pixel size")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(height, width)
    return Raster(
        values=values,
        pixel_size=float(pixel_size),
        origin=(ox, oy),
        nodata=float(nodata),
        units=Units(units_tag),
    )


# ---------------------------------------------------------------------------
# Minimal GeoTIFF ingestion (single band, uncompressed strips)

_TIFF_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 7: 1, 8: 2, 9: 4, 10: 8, 11: 4, 12: 8}

# (BitsPerSample, SampleFormat) -> numpy dtype character
_SAMPLE_DTYPES = {
    (8, 1): "u1",
    (16, 1): "u2",
    (32, 1): "u4",
    (8, 2): "i1",
    (16, 2): "i2",
    (32, 2): "i4",
    (32, 3): "f4",
    (64, 3): "f8",
}


def _read_ifd_entries(data: bytes, bo: str, ifd_off: int) -> dict[int, tuple[int, int, bytes]]:
    (n_entries,) = struct.unpack_from(bo + "H", data, ifd_off)
    entries = {}
    for i in range(n_entries):
        off = ifd_off + 2 + 12 * i
        tag, typ, count = struct.unpack_from(bo + "HHI", data, off)
        entries[tag] = (typ, count, data[off + 8 : off + 12])
    return entries


def _tag_values(data: bytes, bo: str, entry: tuple[int, int, bytes]) -> list:
    typ, count, inline = entry
    size = _TIFF_TYPE_SIZES.get(typ)
    if size is None:
        raise UnsupportedFormatError(f"unsupported TIFF field type {typ}")
    total = size * count
    if total <= 4:
        raw = inline[:total]
    else:
        (off,) = struct.unpack_from(bo + "I", inline)
        raw = data[off : off + total]
    fmt = {1: "B", 3: "H", 4: "I", 8: "h", 9: "i", 11: "f", 12: "d"}.get(typ)
    if fmt is None:
        if typ == 2:  # ASCII
            return [raw.rstrip(b"\x00").decode("ascii", "replace")]
        if typ == 5:  # RATIONAL
            parts = struct.unpack(bo + f"{2 * count}I", raw)
            return [parts[2 * i] / parts[2 * i + 1] for i in range(count)]
        raise UnsupportedFormatError(f"unsupported TIFF field type {typ}")
    return list(struct.unpack(bo + f"{count}{fmt}", raw))


def _read_geotiff(path: str | Path) -> Raster:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if len(data) < 8:
        raise UnsupportedFormatError(f"{path}: not a TIFF file")
    if data[:2] == b"II":
        bo = "<"
    elif data[:2] == b"MM":
        bo = ">"
    else:
        raise UnsupportedFormatError(f"{path}: not a TIFF file")
    (magic,) = struct.unpack_from(bo + "H", data, 2)
    if magic == 43:
        raise UnsupportedFormatError(f"{path}: BigTIFF is not supported")
    if magic != 42:
        raise UnsupportedFormatError(f"{path}: not a TIFF file")
    (ifd_off,) = struct.unpack_from(bo + "I", data, 4)
    tags = _read_ifd_entries(data, bo, ifd_off)

    def get(tag: int, default=None):
        if tag not in tags:
            return default
        return _tag_values(data, bo, tags[tag])

    if 322 in tags or 324 in tags:
        raise UnsupportedFormatError(f"{path}: tiled TIFF is not supported")
    width = get(256)
    height = get(257)
    if width is None or height is None:
        raise UnsupportedFormatError(f"{path}: missing image dimensions")
    width, height = int(width[0]), int(height[0])
    samples = int(get(277, [1])[0])
    if samples != 1:
        raise UnsupportedFormatError(f"{path}: {samples} bands; only single-band rasters are supported")
    compression = int(get(259, [1])[0])
    if compression != 1:
        raise UnsupportedFormatError(f"{path}: compressed TIFF is not supported")
    bits = int(get(258, [8])[0])
    sample_format = int(get(339, [1])[0])
    dtype = _SAMPLE_DTYPES.get((bits, sample_format))
    if dtype is None:
        raise UnsupportedFormatError(
            f"{path}: non-numeric or unsupported sample type (bits={bits}, format={sample_format})"
        )
    strip_offsets = get(273)
    strip_counts = get(279)
    if strip_offsets is None or strip_counts is None:
        raise UnsupportedFormatError(f"{path}: missing strip layout")
    raw = b"".join(data[o : o + c] for o, c in zip(strip_offsets, strip_counts))
    expected = width * height * (bits // 8)
    if len(raw) < expected:
        raise CorruptFileError(f"{path}: strip data shorter than width*height samples")
    values = np.frombuffer(raw[:expected], dtype=bo + dtype).reshape(height, width)

    pixel_size = 1.0
    scale = get(33550)  # ModelPixelScale
    if scale is not None and len(scale) >= 2:
        sx, sy = float(scale[0]), float(scale[1])
        if abs(sx - sy) > GEOMETRY_TOL:
            raise UnsupportedFormatError(f"{path}: anisotropic pixels ({sx} x {sy}) are not supported")
        pixel_size = sx
    origin = (0.0, 0.0)
    tiepoint = get(33922)  # ModelTiepoint: i,j,k,x,y,z
    if tiepoint is not None and len(tiepoint) >= 6:
        origin = (float(tiepoint[3]), float(tiepoint[4]))
    nodata = float("nan")
    gdal_nodata = get(42113)
    if gdal_nodata:
        try:
            nodata = float(str(gdal_nodata[0]).strip())
        except ValueError:
            raise UnsupportedFormatError(f"{path}: unparseable GDAL nodata tag {gdal_nodata[0]!r}")
    return Raster(
        values=values.astype(np.float32),
        pixel_size=pixel_size,
        origin=origin,
        nodata=nodata,
        units=Units.METERS,
    )


def read_raster(path: str | Path, format: str = "chmf") -> Raster:
    """Read a raster from disk. ``format`` is "chmf" or "geotiff"."""
    if format == "chmf":
        return _read_chmf(path)
    if format == "geotiff":
        return _read_geotiff(path)
    raise UnsupportedFormatError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# Tiling


def random_tiles(r: Raster, size: int, count: int, seed: int, parent_id: str = "") -> list[Tile]:
    """``count`` square tiles with offsets drawn uniformly from all valid
    placements by a seeded SplitMix64 stream (row first, then column).
    """
    if size > min(r.width, r.height):
        raise TileTooLargeError(f"tile size {size} exceeds raster {r.width}x{r.height}")
    if count < 1:
        raise ValueError("count must be >= 1")
    gen = SplitMix64(seed)
    max_row = r.height - size + 1
    max_col = r.width - size + 1
    tiles = []
    for _ in range(count):
        row = gen.bounded(max_row)
        col = gen.bounded(max_col)
        tiles.append(
            Tile(
                parent_id=parent_id,
                row_off=row,
                col_off=col,
                size=size,
                values=r.values[row : row + size, col : col + size],
            )
        )
    return tiles


def grid_tiles(r: Raster, size: int, parent_id: str = "") -> list[Tile]:
    """Non-overlapping tiles covering every pixel exactly once.

    Trailing tiles keep their true (smaller) extent and report partial=True.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    tiles = []
    for row in range(0, r.height, size):
        for col in range(0, r.width, size):
            tiles.append(
                Tile(
                    parent_id=parent_id,
                    row_off=row,
                    col_off=col,
                    size=size,
                    values=r.values[row : row + size, col : col + size],
                )
            )
    return tiles
