"""Evaluation metrics: MAE, tree-extent IoU, tree-masked Pearson correlation,
min-max normalization, and deterministic streaming aggregation across tiles.

All statistics run over the pixels valid in BOTH rasters of a pair and
accumulate in float64. Aggregation combines per-tile partials in tile order
with compensated summation, so the result is bitwise identical no matter how
many workers computed the tiles.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainMismatchError, GeometryMismatchError, NoValidPixelsError
from .raster import GEOMETRY_TOL, Raster, Units

TREE_THRESHOLD = 1e-4  # meters; separates trees from exact-zero ground


class Aggregation(str, enum.Enum):
    MICRO = "micro"
    MACRO = "macro"


class PcRegion(str, enum.Enum):
    GT_TREE = "gt_tree"
    UNION_TREE = "union_tree"


class NormalizeScope(str, enum.Enum):
    PER_TILE = "per_tile"
    PER_DATASET = "per_dataset"


class MaskSource(str, enum.Enum):
    RAW = "raw"  # masks from pre-normalization heights
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class EvalPair:
    """Prediction/ground-truth rasters with identical geometry."""

    prediction: Raster
    ground_truth: Raster

    def __post_init__(self):
        p, g = self.prediction, self.ground_truth
        if p.width != g.width or p.height != g.height:
            raise GeometryMismatchError(
                f"prediction is {p.width}x{p.height}, ground truth is {g.width}x{g.height}"
            )
        if abs(p.pixel_size - g.pixel_size) > GEOMETRY_TOL:
            raise GeometryMismatchError("pixel sizes differ")
        if (
            abs(p.origin[0] - g.origin[0]) > GEOMETRY_TOL
            or abs(p.origin[1] - g.origin[1]) > GEOMETRY_TOL
        ):
            raise GeometryMismatchError("origins differ")

    @property
    def valid_mask(self) -> np.ndarray:
        return self.prediction.valid_mask & self.ground_truth.valid_mask


@dataclass(frozen=True)
class BinaryMask:
    """Tree/background decision per pixel, defined only on the valid domain."""

    values: np.ndarray
    domain: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", self.values & self.domain)

    @property
    def count(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True)
class MetricReport:
    mae: float
    iou: float
    pearson: float | None
    n_valid: int
    n_tree_gt: int
    n_tree_pred: int
    aggregation: Aggregation
    pc_defined_tiles: int = 0
    pc_undefined_tiles: int = 0
    empty_union_tiles: int = 0

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "iou": self.iou,
            "pearson": self.pearson,
            "n_valid": self.n_valid,
            "n_tree_gt": self.n_tree_gt,
            "n_tree_pred": self.n_tree_pred,
            "aggregation": self.aggregation.value,
            "pc_defined_tiles": self.pc_defined_tiles,
            "pc_undefined_tiles": self.pc_undefined_tiles,
            "empty_union_tiles": self.empty_union_tiles,
        }


# ---------------------------------------------------------------------------
# Per-pair metrics


def mae(pair: EvalPair) -> float:
    """Mean absolute error over the jointly valid pixels."""
    mask = pair.valid_mask
    n = int(mask.sum())
    if n == 0:
        raise NoValidPixelsError("no jointly valid pixels")
    diff = np.abs(
        pair.prediction.values[mask].astype(np.float64)
        - pair.ground_truth.values[mask].astype(np.float64)
    )
    return float(diff.sum() / n)


def tree_mask(r: Raster, threshold: float = TREE_THRESHOLD) -> BinaryMask:
    """mask = value > threshold on valid pixels (strict >, so exact zeros are
    background); nodata pixels are outside the domain entirely."""
    domain = r.valid_mask
    with np.errstate(invalid="ignore"):
        values = r.values > np.float32(threshold)
    return BinaryMask(values=values, domain=domain)


def iou_counts(pred_mask: BinaryMask, gt_mask: BinaryMask) -> tuple[int, int]:
    """(intersection, union) pixel counts; raises on mismatched domains."""
    if pred_mask.domain.shape != gt_mask.domain.shape or not np.array_equal(
        pred_mask.domain, gt_mask.domain
    ):
        raise DomainMismatchError("masks cover different valid-pixel sets")
    inter = int((pred_mask.values & gt_mask.values).sum())
    union = int((pred_mask.values | gt_mask.values).sum())
    return inter, union


def iou(pred_mask: BinaryMask, gt_mask: BinaryMask) -> float:
    """|intersection| / |union|; an empty union means both agree there are no
    trees and scores 1 (callers can flag it via iou_counts)."""
    inter, union = iou_counts(pred_mask, gt_mask)
    if union == 0:
        return 1.0
    return inter / union


def pair_tree_masks(pair: EvalPair, threshold: float = TREE_THRESHOLD) -> tuple[BinaryMask, BinaryMask]:
    """(prediction mask, ground-truth mask) over the pair's joint valid domain,
    ready for iou()."""
    valid = pair.valid_mask
    with np.errstate(invalid="ignore"):
        pred = pair.prediction.values > np.float32(threshold)
        gt = pair.ground_truth.values > np.float32(threshold)
    return BinaryMask(values=pred, domain=valid), BinaryMask(values=gt, domain=valid)


def pearson_tree(pair: EvalPair, region: PcRegion = PcRegion.GT_TREE) -> float | None:
    """Sample Pearson correlation over tree pixels; None when undefined
    (region smaller than 2 pixels or either variable constant)."""
    valid = pair.valid_mask
    gt = pair.ground_truth.values
    pred = pair.prediction.values
    with np.errstate(invalid="ignore"):
        if region == PcRegion.GT_TREE:
            mask = valid & (gt > np.float32(TREE_THRESHOLD))
        else:
            mask = valid & ((gt > np.float32(TREE_THRESHOLD)) | (pred > np.float32(TREE_THRESHOLD)))
    return _pearson(pred[mask].astype(np.float64), gt[mask].astype(np.float64))


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    n = x.size
    if n < 2:
        return None
    mx = x.sum() / n
    my = y.sum() / n
    dx = x - mx
    dy = y - my
    sxx = float((dx * dx).sum())
    syy = float((dy * dy).sum())
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float((dx * dy).sum()) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def minmax_normalize(r: Raster) -> tuple[Raster, bool]:
    """(v - min) / (max - min) over valid pixels -> relative heights in [0, 1].

    Returns (normalized raster, degenerate flag); a constant raster maps to
    all zeros with the flag set.
    """
    valid = r.valid_mask
    if not valid.any():
        raise NoValidPixelsError("cannot normalize a raster with no valid pixels")
    vmin = float(r.values[valid].min())
    vmax = float(r.values[valid].max())
    if vmax == vmin:
        out = np.where(valid, np.float32(0.0), np.float32(np.nan))
        return r.with_values(out, units=Units.RELATIVE), True
    scaled = (r.values.astype(np.float64) - vmin) / (vmax - vmin)
    out = np.where(valid, scaled.astype(np.float32), np.float32(np.nan))
    return r.with_values(out, units=Units.RELATIVE), False


# ---------------------------------------------------------------------------
# Streaming evaluation


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = TREE_THRESHOLD
    aggregation: Aggregation = Aggregation.MICRO
    normalize: tuple[str, ...] = ("pred", "gt")  # subset of {"pred", "gt"}
    normalize_scope: NormalizeScope = NormalizeScope.PER_TILE
    mask_source: MaskSource = MaskSource.RAW
    pc_region: PcRegion = PcRegion.GT_TREE
    workers: int = 1
    tile_size: int | None = None  # grid-retile large rasters when set

    def to_dict(self) -> dict:
        # semantic fields only: worker count must not leak into reports
        return {
            "threshold": self.threshold,
            "aggregation": self.aggregation.value,
            "normalize": list(self.normalize),
            "normalize_scope": self.normalize_scope.value,
            "mask_source": self.mask_source.value,
            "pc_region": self.pc_region.value,
            "tile_size": self.tile_size,
        }


@dataclass(frozen=True)
class TileMetrics:
    tile_id: str
    n_valid: int
    abs_err_sum: float
    mae: float
    intersection: int
    union: int
    iou: float
    pearson: float | None
    n_tree_gt: int
    n_tree_pred: int
    empty_union: bool

    def to_dict(self) -> dict:
        return {
            "id": self.tile_id,
            "n_valid": self.n_valid,
            "mae": self.mae,
            "iou": self.iou,
            "pearson": self.pearson,
            "n_tree_gt": self.n_tree_gt,
            "n_tree_pred": self.n_tree_pred,
            "empty_union": self.empty_union,
        }


@dataclass(frozen=True)
class EvalUnit:
    """One aggregation unit: an id plus the prediction/ground-truth pair."""

    unit_id: str
    prediction: Raster
    ground_truth: Raster


@dataclass
class EvalResult:
    aggregate: MetricReport
    tiles: list[TileMetrics] = field(default_factory=list)
    config: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "aggregate": self.aggregate.to_dict(),
            "tiles": [t.to_dict() for t in self.tiles],
        }


def _kahan_sum(values) -> float:
    total = 0.0
    c = 0.0
    for v in values:
        y = v - c
        t = total + y
        c = (t - total) - y
        total = t
    return total


def _dataset_range(units: list[EvalUnit], which: str) -> tuple[float, float]:
    vmin = np.inf
    vmax = -np.inf
    for u in units:
        r = u.prediction if which == "pred" else u.ground_truth
        valid = r.valid_values()
        if valid.size:
            vmin = min(vmin, float(valid.min()))
            vmax = max(vmax, float(valid.max()))
    if not np.isfinite(vmin):
        raise NoValidPixelsError("no valid pixels in the corpus")
    return vmin, vmax


def _normalize_with_range(r: Raster, vmin: float, vmax: float) -> Raster:
    valid = r.valid_mask
    if vmax == vmin:
        out = np.where(valid, np.float32(0.0), np.float32(np.nan))
    else:
        scaled = (r.values.astype(np.float64) - vmin) / (vmax - vmin)
        out = np.where(valid, scaled.astype(np.float32), np.float32(np.nan))
    return r.with_values(out, units=Units.RELATIVE)


def _tile_metrics(unit: EvalUnit, config: EvalConfig, ranges: dict) -> TileMetrics:
    pred_raw = unit.prediction
    gt_raw = unit.ground_truth
    pair_raw = EvalPair(prediction=pred_raw, ground_truth=gt_raw)
    valid = pair_raw.valid_mask
    n_valid = int(valid.sum())
    if n_valid == 0:
        return TileMetrics(
            tile_id=unit.unit_id,
            n_valid=0,
            abs_err_sum=0.0,
            mae=0.0,
            intersection=0,
            union=0,
            iou=1.0,
            pearson=None,
            n_tree_gt=0,
            n_tree_pred=0,
            empty_union=True,
        )

    pred = pred_raw
    gt = gt_raw
    if "pred" in config.normalize:
        if config.normalize_scope == NormalizeScope.PER_TILE:
            pred, _ = minmax_normalize(pred_raw)
        else:
            pred = _normalize_with_range(pred_raw, *ranges["pred"])
    if "gt" in config.normalize:
        if config.normalize_scope == NormalizeScope.PER_TILE:
            gt, _ = minmax_normalize(gt_raw)
        else:
            gt = _normalize_with_range(gt_raw, *ranges["gt"])

    # masks default to pre-normalization (metric) heights; both are built on
    # the pair's joint valid domain so the IoU counts share one pixel set
    mask_pred_src = pred_raw if config.mask_source == MaskSource.RAW else pred
    mask_gt_src = gt_raw if config.mask_source == MaskSource.RAW else gt
    with np.errstate(invalid="ignore"):
        pred_tree = valid & (mask_pred_src.values > np.float32(config.threshold))
        gt_tree = valid & (mask_gt_src.values > np.float32(config.threshold))
    inter = int((pred_tree & gt_tree).sum())
    union = int((pred_tree | gt_tree).sum())

    pred64 = pred.values[valid].astype(np.float64)
    gt64 = gt.values[valid].astype(np.float64)
    abs_err_sum = float(np.abs(pred64 - gt64).sum())

    region = gt_tree if config.pc_region == PcRegion.GT_TREE else (gt_tree | pred_tree)
    pc = _pearson(pred.values[region].astype(np.float64), gt.values[region].astype(np.float64))

    return TileMetrics(
        tile_id=unit.unit_id,
        n_valid=n_valid,
        abs_err_sum=abs_err_sum,
        mae=abs_err_sum / n_valid,
        intersection=inter,
        union=union,
        iou=1.0 if union == 0 else inter / union,
        pearson=pc,
        n_tree_gt=int(gt_tree.sum()),
        n_tree_pred=int(pred_tree.sum()),
        empty_union=union == 0,
    )


def _retile(units: list[EvalUnit], size: int) -> list[EvalUnit]:
    from .raster import grid_tiles

    out = []
    for u in units:
        pred_tiles = grid_tiles(u.prediction, size, parent_id=u.unit_id)
        gt_tiles = grid_tiles(u.ground_truth, size, parent_id=u.unit_id)
        for pt, gt_t in zip(pred_tiles, gt_tiles):
            tid = f"{u.unit_id}:{pt.row_off}:{pt.col_off}"
            out.append(
                EvalUnit(
                    unit_id=tid,
                    prediction=u.prediction.with_values(pt.values),
                    ground_truth=u.ground_truth.with_values(gt_t.values),
                )
            )
    return out


def evaluate(units, config: EvalConfig = EvalConfig()) -> EvalResult:
    """Per-tile metrics plus a deterministic aggregate.

    micro pools pixels: MAE = sum|err| / sum n_valid, IoU = sum inter / sum
    union. PC always aggregates as the unweighted mean of the defined
    per-tile values (there is no meaningful pixel-pooled correlation across
    differently normalized tiles). macro takes unweighted means of per-tile
    metrics. Partials combine in unit order with compensated summation, so
    reports are identical for any worker count.
    """
    units = list(units)
    if not units:
        raise NoValidPixelsError("no evaluation pairs supplied")
    if config.tile_size:
        units = _retile(units, config.tile_size)

    ranges = {}
    if config.normalize_scope == NormalizeScope.PER_DATASET:
        if "pred" in config.normalize:
            ranges["pred"] = _dataset_range(units, "pred")
        if "gt" in config.normalize:
            ranges["gt"] = _dataset_range(units, "gt")

    if config.workers <= 1:
        tiles = [_tile_metrics(u, config, ranges) for u in units]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            tiles = list(pool.map(lambda u: _tile_metrics(u, config, ranges), units))

    scored = [t for t in tiles if t.n_valid > 0]
    if not scored:
        raise NoValidPixelsError("no pair has any valid pixel")

    n_valid = sum(t.n_valid for t in scored)
    n_tree_gt = sum(t.n_tree_gt for t in scored)
    n_tree_pred = sum(t.n_tree_pred for t in scored)
    pcs = [t.pearson for t in scored if t.pearson is not None]
    pc_mean = _kahan_sum(pcs) / len(pcs) if pcs else None
    empty_union_tiles = sum(1 for t in scored if t.empty_union)

    if config.aggregation == Aggregation.MICRO:
        total_err = _kahan_sum(t.abs_err_sum for t in scored)
        total_inter = sum(t.intersection for t in scored)
        total_union = sum(t.union for t in scored)
        agg = MetricReport(
            mae=total_err / n_valid,
            iou=1.0 if total_union == 0 else total_inter / total_union,
            pearson=pc_mean,
            n_valid=n_valid,
            n_tree_gt=n_tree_gt,
            n_tree_pred=n_tree_pred,
            aggregation=Aggregation.MICRO,
            pc_defined_tiles=len(pcs),
            pc_undefined_tiles=len(scored) - len(pcs),
            empty_union_tiles=empty_union_tiles,
        )
    else:
        agg = MetricReport(
            mae=_kahan_sum(t.mae for t in scored) / len(scored),
            iou=_kahan_sum(t.iou for t in scored) / len(scored),
            pearson=pc_mean,
            n_valid=n_valid,
            n_tree_gt=n_tree_gt,
            n_tree_pred=n_tree_pred,
            aggregation=Aggregation.MACRO,
            pc_defined_tiles=len(pcs),
            pc_undefined_tiles=len(scored) - len(pcs),
            empty_union_tiles=empty_union_tiles,
        )
    return EvalResult(aggregate=agg, tiles=tiles, config=config)
