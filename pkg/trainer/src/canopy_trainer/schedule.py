"""Training configuration and the warmup/linear-decay learning-rate schedule."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 8
    max_lr: float = 5e-6
    warmup_fraction: float = 0.05
    schedule: str = "warmup_linear_decay"
    loss: str = "mse"
    normalize_targets: bool = True
    tile_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.warmup_fraction < 1.0):
            raise ValueError("warmup_fraction must be in (0, 1)")
        if not self.max_lr > 0:
            raise ValueError("max_lr must be > 0")
        if self.schedule != "warmup_linear_decay":
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.loss != "mse":
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))


def lr_at_step(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> max_lr over the first ceil(warmup_fraction * total)
    steps, then linear decay back to 0 at total_steps."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = math.ceil(cfg.warmup_fraction * total_steps)
    if step <= warmup:
        return cfg.max_lr * step / warmup
    return cfg.max_lr * (total_steps - step) / (total_steps - warmup)
