"""Fine-tuning loop: AdamW + MSE with the warmup/linear-decay schedule."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from .data import build_tiles, load_samples
from .model import build_model, count_params_millions, estimate_gflops
from .schedule import TrainConfig, lr_at_step

log = logging.getLogger("canopy_trainer")

# back-derived defaults matching the evaluation toolkit's cost estimator
DEFAULT_GPU_POWER_KW = 0.30
DEFAULT_PRICE_PER_HOUR = 0.80
DEFAULT_CARBON_INTENSITY = 0.311


class _TileDataset(torch.utils.data.Dataset):
    def __init__(self, tiles):
        self.tiles = tiles

    def __len__(self):
        return len(self.tiles)

    def __getitem__(self, idx):
        image, target, valid = self.tiles[idx]
        return (
            torch.from_numpy(image.copy()),
            torch.from_numpy(target.copy()),
            torch.from_numpy(valid.copy()),
        )


def masked_mse(pred: torch.Tensor, target: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    diff = (pred - target) ** 2
    weight = valid.to(diff.dtype)
    return (diff * weight).sum() / weight.sum().clamp(min=1.0)


def finetune(
    manifest_path: str | Path,
    cfg: TrainConfig,
    backbone: str,
    out_dir: str | Path,
    dataset_id: str = "",
) -> tuple[Path, dict]:
    """Train on the manifest's samples; write checkpoint.pt plus
    run_manifest.json and return (checkpoint path, manifest dict)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)

    samples = load_samples(manifest_path)
    tiles = build_tiles(samples, cfg.tile_size, cfg.normalize_targets)
    loader = torch.utils.data.DataLoader(
        _TileDataset(tiles),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
    )

    model = build_model(backbone)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.max_lr)
    total_steps = cfg.epochs * len(loader)

    start = time.perf_counter()
    loss_history: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        for image, target, valid in loader:
            step += 1
            lr = lr_at_step(step, total_steps, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss = masked_mse(model(image), target, valid)
            loss.backward()
            optimizer.step()
            loss_history.append(float(loss.item()))
            log.info("step=%d/%d lr=%.3g loss=%.6f", step, total_steps, lr, loss_history[-1])
    wall_hours = (time.perf_counter() - start) / 3600.0

    checkpoint_path = out / "checkpoint.pt"
    torch.save(
        {"state_dict": model.state_dict(), "backbone": backbone, "config": cfg.to_dict()},
        checkpoint_path,
    )

    sample_grid = tiles[0][1].shape  # representative tile extent for the flops figure
    adamw_defaults = torch.optim.AdamW([torch.zeros(1, requires_grad=True)]).defaults
    run_manifest = {
        "model_id": backbone,
        "n_params_millions": count_params_millions(model),
        "gflops": estimate_gflops(model, *sample_grid),
        "finetuned": True,
        "dataset_id": dataset_id or Path(manifest_path).stem,
        "wall_hours": wall_hours,
        "gpu_name": "cpu",
        "gpu_power_kw": DEFAULT_GPU_POWER_KW,
        "price_per_hour": DEFAULT_PRICE_PER_HOUR,
        "carbon_intensity": DEFAULT_CARBON_INTENSITY,
        "extra": {
            "train_config": cfg.to_dict(),
            "optimizer": {
                "name": "AdamW",
                # betas/weight decay are framework defaults, recorded not chosen
                "betas": list(adamw_defaults["betas"]),
                "weight_decay": adamw_defaults["weight_decay"],
                "eps": adamw_defaults["eps"],
            },
            "n_train_tiles": len(tiles),
            "total_steps": total_steps,
            "first_epoch_mean_loss": float(np.mean(loss_history[: len(loader)])),
            "final_epoch_mean_loss": float(np.mean(loss_history[-len(loader) :])),
        },
    }
    manifest_out = out / "run_manifest.json"
    manifest_out.write_text(json.dumps(run_manifest, indent=2) + "\n", encoding="utf-8")
    return checkpoint_path, run_manifest


def save_untrained(cfg: TrainConfig, backbone: str, out_dir: str | Path) -> Path:
    """Checkpoint of a freshly initialized model (the no-training baseline)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    model = build_model(backbone)
    path = out / "checkpoint.pt"
    torch.save(
        {"state_dict": model.state_dict(), "backbone": backbone, "config": cfg.to_dict()}, path
    )
    return path
