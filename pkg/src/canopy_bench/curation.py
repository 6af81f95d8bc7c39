"""Dataset filtering, split manifests, and KS-test split validation.

Curation drops two kinds of samples: those scored below the quality
threshold by an external image-quality scorer, and those whose CHM contains
no positive canopy pixel at all. Both filters annotate rather than delete,
so the output manifest still accounts for every input record.

The two-sample Kolmogorov-Smirnov test checks that height distributions are
comparable across train/val/test splits.
"""

from __future__ import annotations

import enum
import json
import math
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptySampleError,
    EmptySplitError,
    MissingScoreError,
    RecordReadError,
)
from .raster import read_raster
from .rng import SplitMix64, mix64

DEFAULT_QUALITY_THRESHOLD = 2.5
KS_SUBSAMPLE_SIZE = 100_000  # per split, for per_pixel_subsample
_KS_SERIES_EPS = 1e-10
_KS_MAX_TERMS = 1_000_000


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
    EXCLUDED = "excluded"


class ExclusionReason(str, enum.Enum):
    NONE = "none"
    LOW_QUALITY = "low_quality"
    EMPTY_CANOPY = "empty_canopy"


class HeightSource(str, enum.Enum):
    PER_PIXEL_SUBSAMPLE = "per_pixel_subsample"
    PER_SAMPLE_MAX = "per_sample_max"


# fixed salts keep subsample streams distinct per split yet reproducible
_SPLIT_SALT = {
    Split.TRAIN: 0x745241494E,
    Split.VAL: 0x56414C,
    Split.TEST: 0x54455354,
}


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    chm_path: str
    quality_score: float | None = None
    split: Split = Split.TRAIN
    exclusion_reason: ExclusionReason = ExclusionReason.NONE

    def __post_init__(self):
        if self.quality_score is not None and not (0.0 <= self.quality_score <= 5.0):
            raise ValueError(f"quality_score {self.quality_score} outside [0, 5]")
        excluded = self.split == Split.EXCLUDED
        has_reason = self.exclusion_reason != ExclusionReason.NONE
        if excluded != has_reason:
            raise ValueError("split=excluded iff exclusion_reason != none")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_path": self.image_path,
            "chm_path": self.chm_path,
            "quality_score": self.quality_score,
            "split": self.split.value,
            "exclusion_reason": self.exclusion_reason.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        return cls(
            id=d["id"],
            image_path=d.get("image_path", ""),
            chm_path=d.get("chm_path", ""),
            quality_score=d.get("quality_score"),
            split=Split(d.get("split", "train")),
            exclusion_reason=ExclusionReason(d.get("exclusion_reason", "none")),
        )


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


def load_manifest(path: str | Path) -> list[SampleRecord]:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise ValueError(f"{path}: manifest must be a JSON array of sample records")
    return [SampleRecord.from_dict(d) for d in data]


def save_manifest(records: list[SampleRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in records], f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# Filters


def filter_by_quality(
    records: list[SampleRecord], threshold: float = DEFAULT_QUALITY_THRESHOLD
) -> list[SampleRecord]:
    """Mark records scored strictly below ``threshold`` as excluded.

    Order is preserved and nothing is dropped; a record at exactly the
    threshold is kept.
    """
    missing = [r.id for r in records if r.quality_score is None]
    if missing:
        raise MissingScoreError(f"records without quality_score: {missing[:5]}")
    out = []
    for r in records:
        if r.quality_score < threshold:
            out.append(replace(r, split=Split.EXCLUDED, exclusion_reason=ExclusionReason.LOW_QUALITY))
        else:
            out.append(r)
    return out


def filter_empty_canopy(records: list[SampleRecord]) -> list[SampleRecord]:
    """Exclude records whose CHM has no valid pixel with height > 0."""
    out = []
    for r in records:
        try:
            chm = read_raster(r.chm_path, "chmf")
        except Exception as exc:
            raise RecordReadError(r.id, exc) from exc
        if bool(np.any(chm.values > 0)):
            out.append(r)
        else:
            out.append(replace(r, split=Split.EXCLUDED, exclusion_reason=ExclusionReason.EMPTY_CANOPY))
    return out


def apply_score_cmd(records: list[SampleRecord], score_cmd: str) -> list[SampleRecord]:
    """Fill missing quality scores by running an external scorer per image.

    The hook is invoked as ``score_cmd <image_path>`` and must print one
    float on stdout. Records that already carry a score are untouched.
    """
    out = []
    for r in records:
        if r.quality_score is not None:
            out.append(r)
            continue
        proc = subprocess.run(
            score_cmd.split() + [r.image_path], capture_output=True, text=True, check=False
        )
        if proc.returncode != 0:
            raise RecordReadError(r.id, RuntimeError(f"score command failed: {proc.stderr.strip()}"))
        try:
            score = float(proc.stdout.strip())
        except ValueError as exc:
            raise RecordReadError(r.id, exc) from exc
        out.append(replace(r, quality_score=score))
    return out


# ---------------------------------------------------------------------------
# Two-sample Kolmogorov-Smirnov test


def _kolmogorov_sf(lam: float) -> float:
    """Asymptotic Kolmogorov survival function 2*sum((-1)^(k-1) exp(-2 k^2 lam^2)).

    Terms are strictly decreasing, so truncating when a term drops below
    1e-10 bounds the error by 1e-10. The limit at lam=0 is 1.
    """
    if lam <= 0.0:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, _KS_MAX_TERMS + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += sign * term
        if term < _KS_SERIES_EPS:
            break
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(sample_a, sample_b) -> KsResult:
    """Exact sup-distance between the two empirical CDFs, asymptotic p-value.

    The sweep advances through the merged sorted values and measures the CDF
    gap only after consuming every copy of a value from both samples, so
    ties (e.g. many exact-zero heights) are handled exactly.

    p = 2*sum_k (-1)^(k-1) exp(-2 k^2 lam^2) with
    lam = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D and ne = n1*n2/(n1+n2).
    """
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    n1, n2 = a.size, b.size
    if n1 < 1 or n2 < 1:
        raise EmptySampleError("both samples must be non-empty")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("samples must be finite")

    i = j = 0
    d = 0.0
    while i < n1 and j < n2:
        x = min(a[i], b[j])
        while i < n1 and a[i] == x:
            i += 1
        while j < n2 and b[j] == x:
            j += 1
        gap = abs(i / n1 - j / n2)
        if gap > d:
            d = gap
    # once one sample is exhausted its CDF sits at 1 and the gap at every
    # remaining point only shrinks, so the loop has already seen the sup

    ne = n1 * n2 / (n1 + n2)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    return KsResult(statistic=d, p_value=_kolmogorov_sf(lam), n1=n1, n2=n2)


# ---------------------------------------------------------------------------
# Split distribution report


def _split_heights(
    records: list[SampleRecord],
    split: Split,
    height_source: HeightSource,
    seed: int,
    subsample_size: int,
) -> np.ndarray:
    members = [r for r in records if r.split == split]
    if not members:
        raise EmptySplitError(f"split {split.value!r} has no records")
    if height_source == HeightSource.PER_SAMPLE_MAX:
        maxima = []
        for r in members:
            try:
                chm = read_raster(r.chm_path, "chmf")
            except Exception as exc:
                raise RecordReadError(r.id, exc) from exc
            valid = chm.valid_values()
            if valid.size:
                maxima.append(float(valid.max()))
        if not maxima:
            raise EmptySplitError(f"split {split.value!r} has no valid pixels")
        return np.asarray(maxima, dtype=np.float64)

    chunks = []
    for r in members:
        try:
            chm = read_raster(r.chm_path, "chmf")
        except Exception as exc:
            raise RecordReadError(r.id, exc) from exc
        chunks.append(chm.valid_values().astype(np.float64))
    pool = np.concatenate(chunks) if chunks else np.empty(0)
    if pool.size == 0:
        raise EmptySplitError(f"split {split.value!r} has no valid pixels")
    if pool.size <= subsample_size:
        return pool
    # seeded without-replacement subsample; the stream is salted with a fixed
    # per-split constant so the three splits do not share index sequences
    gen = SplitMix64(mix64(seed) ^ _SPLIT_SALT[split])
    idx = gen.shuffle_take(pool.size, subsample_size)
    return pool[np.asarray(idx, dtype=np.int64)]


def split_distribution_report(
    manifest: list[SampleRecord],
    height_source: HeightSource = HeightSource.PER_PIXEL_SUBSAMPLE,
    seed: int = 0,
    subsample_size: int = KS_SUBSAMPLE_SIZE,
) -> list[tuple[str, KsResult]]:
    """KS results for (train, val) and (train, test) height distributions."""
    heights = {
        split: _split_heights(manifest, split, height_source, seed, subsample_size)
        for split in (Split.TRAIN, Split.VAL, Split.TEST)
    }
    return [
        ("train-val", ks_two_sample(heights[Split.TRAIN], heights[Split.VAL])),
        ("train-test", ks_two_sample(heights[Split.TRAIN], heights[Split.TEST])),
    ]


def format_ks_line(pair: str, result: KsResult) -> str:
    return (
        f"pair={pair} D={result.statistic!r} p={result.p_value!r} "
        f"n1={result.n1} n2={result.n2}"
    )
