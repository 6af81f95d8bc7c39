"""Prediction export: one CHMF raster per sample, geometry copied from the
ground truth, plus the run manifest beside them."""

from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path

import numpy as np
import torch

from .chmf import Grid, UNITS_RELATIVE, read_chmf, write_chmf
from .data import load_samples, render_image
from .model import build_model
from .schedule import TrainConfig

log = logging.getLogger("canopy_trainer")


def load_checkpoint(ckpt_dir: str | Path) -> tuple[torch.nn.Module, TrainConfig]:
    path = Path(ckpt_dir)
    if path.is_dir():
        path = path / "checkpoint.pt"
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = build_model(payload["backbone"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, TrainConfig(**payload["config"])


def export_predictions(
    ckpt_dir: str | Path,
    manifest_path: str | Path,
    out_dir: str | Path,
    identity: bool = False,
) -> list[str]:
    """Write <id>_pred.chmf for every non-excluded sample; returns the ids
    that failed (callers exit non-zero when non-empty).

    ``identity`` bypasses the model and copies ground truth, the bridge
    sanity mode that must score MAE=0/IoU=1/PC=1 in the evaluator.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_samples(manifest_path)
    model = None
    if not identity:
        model, _ = load_checkpoint(ckpt_dir)

    failures: list[str] = []
    for sample in samples:
        try:
            gt = read_chmf(sample.chm_path)
            if identity:
                prediction = gt.values.astype(np.float32)
            else:
                image = torch.from_numpy(render_image(read_chmf(sample.image_path))).unsqueeze(0)
                with torch.no_grad():
                    prediction = model(image).squeeze(0).numpy().astype(np.float32)
            # nodata placement mirrors the ground truth
            prediction = np.where(np.isnan(gt.values), np.float32(np.nan), prediction)
            write_chmf(
                Grid(
                    values=prediction,
                    pixel_size=gt.pixel_size,
                    origin=gt.origin,
                    nodata=gt.nodata,
                    units=UNITS_RELATIVE,
                ),
                out / f"{sample.sample_id}_pred.chmf",
            )
        except Exception as exc:  # keep exporting the rest
            log.error("sample=%s export failed: %s", sample.sample_id, exc)
            failures.append(sample.sample_id)

    ckpt_manifest = Path(ckpt_dir) / "run_manifest.json" if Path(ckpt_dir).is_dir() else None
    if ckpt_manifest is not None and ckpt_manifest.exists():
        shutil.copyfile(ckpt_manifest, out / "run_manifest.json")
    else:
        (out / "run_manifest.json").write_text(
            json.dumps({"model_id": "identity" if identity else "unknown", "finetuned": False})
            + "\n",
            encoding="utf-8",
        )
    return failures
