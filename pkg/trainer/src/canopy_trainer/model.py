"""Backbones for height regression from rendered elevation images."""

from __future__ import annotations

import torch
from torch import nn

BACKBONES = ("toy_cnn", "foundation_small", "foundation_base")


class BackboneUnavailableError(Exception):
    """Requested backbone needs externally supplied weights."""


class ToyCnn(nn.Module):
    """Few-thousand-parameter conv stack: enough to prove the training loop
    learns on synthetic scenes in CPU minutes."""

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 16, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 1, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x).squeeze(1)


def build_model(backbone: str) -> nn.Module:
    if backbone == "toy_cnn":
        return ToyCnn()
    if backbone in ("foundation_small", "foundation_base"):
        raise BackboneUnavailableError(
            f"{backbone} needs released depth-foundation checkpoints, which are "
            "not bundled; fine-tune them on a GPU host with the weights on disk"
        )
    raise ValueError(f"unknown backbone {backbone!r}; choose from {BACKBONES}")


def count_params_millions(model: nn.Module) -> float:
    return sum(p.numel() for p in model.parameters()) / 1e6


def estimate_gflops(model: nn.Module, height: int, width: int) -> float:
    """Analytic multiply-add count for the conv stack at the given input size."""
    total = 0.0
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            k = module.kernel_size[0] * module.kernel_size[1]
            total += 2.0 * k * module.in_channels * module.out_channels * height * width
    return total / 1e9
