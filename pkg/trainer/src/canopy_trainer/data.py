"""Manifest loading, elevation-to-image rendering, and the tile dataset.

The sample manifest is the evaluation toolkit's JSON format (id, image_path,
chm_path, split, exclusion_reason). Input "images" are shaded renderings of
the sample's DSM computed on the fly: a hillshade plus a normalized-height
channel. The rendering is cosmetic; targets always come from the CHM.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chmf import Grid, read_chmf


class DataError(Exception):
    """A sample's rasters are missing or unreadable."""


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image_path: str  # DSM raster rendered to an image at load time
    chm_path: str


def load_samples(manifest_path: str | Path) -> list[Sample]:
    """Non-excluded records from an evaluation-toolkit manifest."""
    with open(manifest_path, encoding="utf-8") as f:
        records = json.load(f)
    samples = []
    for rec in records:
        if rec.get("split") == "excluded":
            continue
        image_path = rec.get("image_path") or ""
        chm_path = rec.get("chm_path") or ""
        if not image_path.endswith(".chmf"):
            # fall back to the conventional sibling DSM of the CHM
            guess = chm_path.replace("_chm.chmf", "_dsm.chmf")
            image_path = guess
        samples.append(Sample(sample_id=rec["id"], image_path=image_path, chm_path=chm_path))
    if not samples:
        raise DataError(f"{manifest_path}: no usable records")
    return samples


def render_image(dsm: Grid) -> np.ndarray:
    """(3, H, W) float32 in [0, 1]: two hillshade channels + relative height.

    Lambertian shading with a fixed NW light at 45 degrees elevation; NaN
    pixels render as 0.
    """
    values = np.nan_to_num(dsm.values.astype(np.float64), nan=0.0)
    gy, gx = np.gradient(values, dsm.pixel_size)
    # surface normal (-gx, -gy, 1) against light direction
    azimuth = math.radians(315.0)
    altitude = math.radians(45.0)
    lx = math.cos(altitude) * math.sin(azimuth)
    ly = math.cos(altitude) * math.cos(azimuth)
    lz = math.sin(altitude)
    norm = np.sqrt(gx * gx + gy * gy + 1.0)
    shade = (-gx * lx - gy * ly + lz) / norm
    shade = np.clip(shade, 0.0, 1.0)
    vmin, vmax = values.min(), values.max()
    rel = (values - vmin) / (vmax - vmin) if vmax > vmin else np.zeros_like(values)
    return np.stack([shade, shade, rel]).astype(np.float32)


def _normalize_target(tile: np.ndarray) -> np.ndarray:
    valid = ~np.isnan(tile)
    if not valid.any():
        return np.zeros_like(tile, dtype=np.float32)
    vmin = float(tile[valid].min())
    vmax = float(tile[valid].max())
    if vmax == vmin:
        out = np.zeros_like(tile, dtype=np.float32)
    else:
        out = ((tile - vmin) / (vmax - vmin)).astype(np.float32)
    return np.where(valid, out, np.float32(0.0))


def build_tiles(
    samples: list[Sample], tile_size: int, normalize_targets: bool
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(image_tile, target_tile, valid_mask) triples from a non-overlapping
    grid over every sample. Raises DataError for unreadable pairs."""
    tiles = []
    for sample in samples:
        try:
            dsm = read_chmf(sample.image_path)
            chm = read_chmf(sample.chm_path)
        except (OSError, ValueError) as exc:
            raise DataError(f"sample {sample.sample_id!r}: {exc}") from exc
        if dsm.values.shape != chm.values.shape:
            raise DataError(f"sample {sample.sample_id!r}: image/CHM geometry differs")
        image = render_image(dsm)
        h, w = chm.values.shape
        for row in range(0, h - tile_size + 1, tile_size):
            for col in range(0, w - tile_size + 1, tile_size):
                target = chm.values[row : row + tile_size, col : col + tile_size]
                valid = ~np.isnan(target)
                prepared = (
                    _normalize_target(target)
                    if normalize_targets
                    else np.where(valid, target, np.float32(0.0)).astype(np.float32)
                )
                tiles.append(
                    (
                        image[:, row : row + tile_size, col : col + tile_size],
                        prepared,
                        valid,
                    )
                )
    if not tiles:
        raise DataError("no training tiles; raster smaller than the tile size?")
    return tiles
