"""Pairing prediction/ground-truth rasters on disk into evaluation units."""

from __future__ import annotations

from pathlib import Path

from .errors import GeometryMismatchError
from .metrics import EvalUnit
from .raster import read_raster

_ROLE_SUFFIXES = ("_pred", "_chm", "_gt", "_dsm", "_dtm")


def canonical_id(path: str | Path) -> str:
    """File stem with any role suffix (_pred, _chm, _gt, ...) stripped."""
    stem = Path(path).stem
    for suffix in _ROLE_SUFFIXES:
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def index_rasters(directory: str | Path) -> dict[str, Path]:
    """Map canonical sample id -> CHMF path for every raster in a directory."""
    out: dict[str, Path] = {}
    for path in sorted(Path(directory).glob("*.chmf")):
        cid = canonical_id(path)
        if cid in out:
            raise ValueError(f"duplicate sample id {cid!r} in {directory}")
        out[cid] = path
    return out


def load_eval_units(
    pred_dir: str | Path,
    gt_dir: str | Path,
    ids: list[str] | None = None,
) -> list[EvalUnit]:
    """One EvalUnit per sample id present in both directories, id-sorted.

    ``ids`` restricts the pairing (e.g. to a curated manifest's kept
    records). Predictions without a ground truth are an error; extra ground
    truths are ignored.
    """
    pred_index = index_rasters(pred_dir)
    gt_index = index_rasters(gt_dir)
    if ids is not None:
        pred_index = {k: v for k, v in pred_index.items() if k in set(ids)}
    missing = sorted(set(pred_index) - set(gt_index))
    if missing:
        raise FileNotFoundError(f"no ground truth for prediction ids {missing[:5]}")
    if not pred_index:
        raise FileNotFoundError(f"no prediction rasters found in {pred_dir}")
    units = []
    for cid in sorted(pred_index):
        pred = read_raster(pred_index[cid], "chmf")
        gt = read_raster(gt_index[cid], "chmf")
        if pred.width != gt.width or pred.height != gt.height:
            raise GeometryMismatchError(
                f"sample {cid!r}: prediction {pred.width}x{pred.height} vs "
                f"ground truth {gt.width}x{gt.height}"
            )
        units.append(EvalUnit(unit_id=cid, prediction=pred, ground_truth=gt))
    return units
