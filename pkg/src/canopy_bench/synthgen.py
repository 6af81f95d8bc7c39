"""Synthetic DSM/DTM/CHM scene generation and controllable pseudo-predictions.

Scenes are the oracle corpus for desk-scale tests: terrain comes from seeded
value noise, crowns are analytic height profiles, and the true CHM is known
in closed form. Everything is a pure function of the scene spec, bitwise
reproducible across platforms.

Determinism constants (fixed for cross-implementation stability):

- lattice hash: SplitMix64 finalizer over ix*0x9E3779B97F4A7C15 ^
  iy*0xC2B2AE3D27D4EB4F ^ seed*0xD6E8FEB86659FD93, top 53 bits -> [0, 1)
- value-noise FBM: 4 octaves, persistence 0.5, lacunarity 2.0, 4 lattice
  cells across the raster at the base octave, smoothstep interpolation
- all heights are quantized to multiples of 2^-12 m (~0.24 mm). Together
  with heights < 2^11 m this keeps dtm + canopy and the later dsm - dtm
  exact in 32-bit floats, so derived CHMs equal the analytic truth bitwise.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CrownOutOfBoundsError
from .raster import Raster, Units, write_raster

_QUANT = 4096.0  # heights live on a 2^-12 m grid

_HASH_X = np.uint64(0x9E3779B97F4A7C15)
_HASH_Y = np.uint64(0xC2B2AE3D27D4EB4F)
_HASH_SEED = np.uint64(0xD6E8FEB86659FD93)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

FBM_OCTAVES = 4
FBM_PERSISTENCE = 0.5
FBM_LACUNARITY = 2.0
FBM_BASE_CELLS = 4  # lattice cells across the raster at octave 0

# salts for the per-pixel gaussian noise field (two independent uniforms)
_NOISE_SALT_A = 0x5DEECE66D
_NOISE_SALT_B = 0x2545F4914F6CDD1D


class CrownShape(str, enum.Enum):
    PARABOLOID = "paraboloid"
    CONE = "cone"


@dataclass(frozen=True)
class Crown:
    center: tuple[float, float]  # (x, y) pixels
    radius: float  # pixels, >= 1
    height: float  # meters, in (0, 120]
    shape: CrownShape = CrownShape.PARABOLOID

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("crown radius must be >= 1 pixel")
        if not (0 < self.height <= 120):
            raise ValueError("crown height must be in (0, 120] m")


@dataclass(frozen=True)
class TerrainSpec:
    base_elevation: float = 100.0
    relief_amplitude: float = 10.0
    seed: int = 0


@dataclass(frozen=True)
class SceneSpec:
    size: int = 256
    pixel_size: float = 1.0
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    crowns: tuple[Crown, ...] = ()
    noise_sigma: float = 0.0

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "pixel_size": self.pixel_size,
            "terrain": {
                "base_elevation": self.terrain.base_elevation,
                "relief_amplitude": self.terrain.relief_amplitude,
                "seed": self.terrain.seed,
            },
            "crowns": [
                {
                    "center": list(c.center),
                    "radius": c.radius,
                    "height": c.height,
                    "shape": c.shape.value,
                }
                for c in self.crowns
            ],
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        t = d.get("terrain", {})
        return cls(
            size=int(d.get("size", 256)),
            pixel_size=float(d.get("pixel_size", 1.0)),
            terrain=TerrainSpec(
                base_elevation=float(t.get("base_elevation", 100.0)),
                relief_amplitude=float(t.get("relief_amplitude", 10.0)),
                seed=int(t.get("seed", 0)),
            ),
            crowns=tuple(
                Crown(
                    center=(float(c["center"][0]), float(c["center"][1])),
                    radius=float(c["radius"]),
                    height=float(c["height"]),
                    shape=CrownShape(c.get("shape", "paraboloid")),
                )
                for c in d.get("crowns", [])
            ),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
        )


# ---------------------------------------------------------------------------
# Deterministic noise fields


def _hash_uniform(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Uniform [0, 1) per lattice point, from integer coordinates and seed."""
    with np.errstate(over="ignore"):
        z = (
            ix.astype(np.uint64) * _HASH_X
            ^ iy.astype(np.uint64) * _HASH_Y
            ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _HASH_SEED
        )
        z ^= z >> np.uint64(30)
        z *= _MIX1
        z ^= z >> np.uint64(27)
        z *= _MIX2
        z ^= z >> np.uint64(31)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _value_noise(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """Bilinear value noise with smoothstep easing, in [0, 1)."""
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    v00 = _hash_uniform(ix, iy, seed)
    v10 = _hash_uniform(ix + 1, iy, seed)
    v01 = _hash_uniform(ix, iy + 1, seed)
    v11 = _hash_uniform(ix + 1, iy + 1, seed)
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    top = v00 + (v10 - v00) * sx
    bottom = v01 + (v11 - v01) * sx
    return top + (bottom - top) * sy


def _fbm(size: int, seed: int) -> np.ndarray:
    """Fractal value noise over a size x size grid, normalized to [0, 1)."""
    rows, cols = np.mgrid[0:size, 0:size]
    total = np.zeros((size, size), dtype=np.float64)
    amplitude = 1.0
    norm = 0.0
    freq = FBM_BASE_CELLS / size
    for octave in range(FBM_OCTAVES):
        total += amplitude * _value_noise(cols * freq, rows * freq, seed + octave)
        norm += amplitude
        amplitude *= FBM_PERSISTENCE
        freq *= FBM_LACUNARITY
    return total / norm


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(values * _QUANT) / _QUANT


# ---------------------------------------------------------------------------
# Scene generation


def _canopy_field(spec: SceneSpec) -> np.ndarray:
    """Analytic canopy height: max over crown profiles, quantized, with the
    in-disc support floored at one quantum so it matches the discs exactly."""
    size = spec.size
    canopy = np.zeros((size, size), dtype=np.float64)
    inside_any = np.zeros((size, size), dtype=bool)
    rows, cols = np.mgrid[0:size, 0:size]
    for crown in spec.crowns:
        cx, cy = crown.center
        r = crown.radius
        if cx - r < 0 or cy - r < 0 or cx + r > size - 1 or cy + r > size - 1:
            raise CrownOutOfBoundsError(
                f"crown at ({cx}, {cy}) radius {r} leaves the {size}x{size} scene"
            )
        d = np.sqrt((cols - cx) ** 2 + (rows - cy) ** 2)
        inside = d < r
        if crown.shape == CrownShape.PARABOLOID:
            profile = crown.height * (1.0 - (d / r) ** 2)
        else:
            profile = crown.height * (1.0 - d / r)
        canopy = np.where(inside, np.maximum(canopy, profile), canopy)
        inside_any |= inside
    canopy = _quantize(canopy)
    canopy[inside_any] = np.maximum(canopy[inside_any], 1.0 / _QUANT)
    return canopy


def generate_scene(spec: SceneSpec) -> tuple[Raster, Raster, Raster]:
    """(dsm, dtm, chm_true) for the spec; identical spec -> identical bits.

    dtm is smooth seeded terrain, canopy is the analytic crown field, dsm =
    dtm + canopy + gaussian noise on canopy pixels, and chm_true is the
    pre-noise canopy.
    """
    t = spec.terrain
    dtm64 = _quantize(t.base_elevation + t.relief_amplitude * (2.0 * _fbm(spec.size, t.seed) - 1.0))
    canopy = _canopy_field(spec)

    noisy_canopy = canopy
    if spec.noise_sigma > 0:
        rows, cols = np.mgrid[0 : spec.size, 0 : spec.size]
        u1 = _hash_uniform(cols, rows, t.seed ^ _NOISE_SALT_A)
        u2 = _hash_uniform(cols, rows, t.seed ^ _NOISE_SALT_B)
        gauss = np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)
        noise = _quantize(spec.noise_sigma * gauss)
        noisy_canopy = np.where(canopy > 0, canopy + noise, canopy)

    def make(values64: np.ndarray) -> Raster:
        return Raster(
            values=values64.astype(np.float32),
            pixel_size=spec.pixel_size,
            origin=(0.0, 0.0),
            nodata=float("nan"),
            units=Units.METERS,
        )

    dsm = make(dtm64 + noisy_canopy)
    dtm = make(dtm64)
    chm_true = make(canopy)
    return dsm, dtm, chm_true


# ---------------------------------------------------------------------------
# Pseudo-prediction perturbations


class PerturbModel(str, enum.Enum):
    SCALE = "scale"
    BLUR = "blur"
    DROPOUT_SMALL_TREES = "dropout_small_trees"


def perturb_prediction(
    chm: Raster, model: PerturbModel | str, magnitude: float, seed: int = 0
) -> Raster:
    """Deterministic degraded copies of a CHM for metric studies.

    scale multiplies heights by ``magnitude``; blur applies a nodata-aware
    box filter of radius ``magnitude``; dropout_small_trees zeroes every
    pixel shorter than ``magnitude`` (the failure mode of predictors that
    miss low vegetation). The current models are noise-free; ``seed`` is
    accepted for forward compatibility.
    """
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    model = PerturbModel(model)
    if model == PerturbModel.SCALE:
        return chm.with_values(chm.values * np.float32(magnitude))
    if model == PerturbModel.DROPOUT_SMALL_TREES:
        # NaN < magnitude is False, so nodata placement survives untouched
        with np.errstate(invalid="ignore"):
            dropped = np.where(chm.values < magnitude, np.float32(0.0), chm.values)
        return chm.with_values(dropped)
    # box blur over valid pixels, truncated at edges; nodata stays nodata
    radius = int(magnitude)
    if radius == 0:
        return chm.with_values(chm.values)
    valid = chm.valid_mask
    filled = np.where(valid, chm.values.astype(np.float64), 0.0)
    sums = _box_sum(filled, radius)
    counts = _box_sum(valid.astype(np.float64), radius)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts
    out = np.where(valid, mean.astype(np.float32), np.float32(np.nan))
    return chm.with_values(out)


def _box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2r+1)^2 window around each pixel, truncated at edges."""
    h, w = a.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    rows = np.arange(h)
    cols = np.arange(w)
    r0 = np.clip(rows - radius, 0, h)[:, None]
    r1 = np.clip(rows + radius + 1, 0, h)[:, None]
    c0 = np.clip(cols - radius, 0, w)[None, :]
    c1 = np.clip(cols + radius + 1, 0, w)[None, :]
    return integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]


# ---------------------------------------------------------------------------
# The desk-v1 fixture corpus


def desk_v1_specs() -> list[tuple[str, SceneSpec]]:
    """Twelve 256x256 noise-free scenes, seeds 1-12, crown layouts derived
    deterministically from each seed. Regenerate rather than commit binaries.
    """
    from .rng import SplitMix64

    specs = []
    size = 256
    for seed in range(1, 13):
        gen = SplitMix64(seed)
        n_crowns = 6 + gen.bounded(10)
        crowns = []
        for _ in range(n_crowns):
            radius = float(4 + gen.bounded(18))
            span = int(size - 2 * radius - 2)
            cx = radius + 1 + gen.bounded(span)
            cy = radius + 1 + gen.bounded(span)
            height = 1.5 + gen.uniform() * 28.0
            shape = CrownShape.PARABOLOID if gen.bounded(2) == 0 else CrownShape.CONE
            crowns.append(Crown(center=(float(cx), float(cy)), radius=radius, height=height, shape=shape))
        specs.append(
            (
                f"scene{seed:02d}",
                SceneSpec(
                    size=size,
                    pixel_size=1.0,
                    terrain=TerrainSpec(base_elevation=80.0 + 5.0 * seed, relief_amplitude=12.0, seed=seed),
                    crowns=tuple(crowns),
                    noise_sigma=0.0,
                ),
            )
        )
    return specs


def write_scene(spec: SceneSpec, out_dir: str | Path, scene_id: str) -> dict[str, str]:
    """Materialize one scene as CHMF triplets plus a spec echo; returns the
    paths written keyed by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dsm, dtm, chm_true = generate_scene(spec)
    paths = {
        "dsm": str(out / f"{scene_id}_dsm.chmf"),
        "dtm": str(out / f"{scene_id}_dtm.chmf"),
        "chm": str(out / f"{scene_id}_chm.chmf"),
        "spec": str(out / f"{scene_id}_spec.json"),
    }
    write_raster(dsm, paths["dsm"])
    write_raster(dtm, paths["dtm"])
    write_raster(chm_true, paths["chm"])
    with open(paths["spec"], "w", encoding="utf-8") as f:
        json.dump(spec.to_dict(), f, indent=2)
        f.write("\n")
    return paths
