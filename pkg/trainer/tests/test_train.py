from __future__ import annotations

import json

import numpy as np
import pytest
import torch

from canopy_trainer.data import DataError, build_tiles, load_samples, render_image
from canopy_trainer.chmf import Grid, read_chmf
from canopy_trainer.model import BackboneUnavailableError, ToyCnn, build_model, count_params_millions
from canopy_trainer.schedule import TrainConfig
from canopy_trainer.train import finetune, masked_mse


class TestData:
    def test_load_skips_excluded(self, tmp_path):
        records = [
            {"id": "a", "image_path": "a_dsm.chmf", "chm_path": "a_chm.chmf",
             "split": "train", "exclusion_reason": "none"},
            {"id": "b", "image_path": "b_dsm.chmf", "chm_path": "b_chm.chmf",
             "split": "excluded", "exclusion_reason": "low_quality"},
        ]
        path = tmp_path / "m.json"
        path.write_text(json.dumps(records))
        samples = load_samples(path)
        assert [s.sample_id for s in samples] == ["a"]

    def test_image_path_fallback_to_dsm(self, tmp_path):
        records = [
            {"id": "a", "image_path": "photo.png", "chm_path": "x_chm.chmf",
             "split": "train", "exclusion_reason": "none"}
        ]
        path = tmp_path / "m.json"
        path.write_text(json.dumps(records))
        assert load_samples(path)[0].image_path == "x_dsm.chmf"

    def test_render_image_shape_and_range(self, desk_corpus):
        dsm = read_chmf(desk_corpus["scenes"] / "scene01_dsm.chmf")
        image = render_image(dsm)
        assert image.shape == (3, 256, 256)
        assert image.min() >= 0.0 and image.max() <= 1.0
        assert image.std() > 0.0  # shading carries signal

    def test_normalized_targets_in_unit_interval(self, desk_corpus):
        samples = load_samples(desk_corpus["manifest"])[:3]
        tiles = build_tiles(samples, 64, normalize_targets=True)
        assert len(tiles) == 3 * 16
        for _, target, valid in tiles:
            assert target.min() >= 0.0
            assert target.max() <= 1.0
            assert valid.all()

    def test_unreadable_pair_is_data_error(self, tmp_path):
        records = [
            {"id": "ghost", "image_path": str(tmp_path / "no_dsm.chmf"),
             "chm_path": str(tmp_path / "no_chm.chmf"),
             "split": "train", "exclusion_reason": "none"}
        ]
        path = tmp_path / "m.json"
        path.write_text(json.dumps(records))
        with pytest.raises(DataError):
            build_tiles(load_samples(path), 64, True)


class TestModel:
    def test_toy_cnn_is_tiny(self):
        model = ToyCnn()
        assert count_params_millions(model) < 0.01  # a few thousand parameters

    def test_foundation_backbones_need_weights(self):
        with pytest.raises(BackboneUnavailableError):
            build_model("foundation_small")
        with pytest.raises(ValueError):
            build_model("resnet152")

    def test_forward_shape(self):
        model = ToyCnn()
        out = model(torch.zeros(2, 3, 64, 64))
        assert out.shape == (2, 64, 64)


class TestOptimization:
    def test_gradient_matches_finite_differences(self):
        # 2-parameter linear head, double precision, central differences
        torch.manual_seed(0)
        model = torch.nn.Linear(1, 1).double()
        x = torch.linspace(-1, 1, 32, dtype=torch.float64).unsqueeze(1)
        y = 3.0 * x - 0.5

        def loss_value():
            return torch.nn.functional.mse_loss(model(x), y)

        loss = loss_value()
        loss.backward()
        grads = [p.grad.item() for p in model.parameters()]

        eps = 1e-6
        for idx, p in enumerate(model.parameters()):
            with torch.no_grad():
                p.add_(eps)
                up = loss_value().item()
                p.add_(-2 * eps)
                down = loss_value().item()
                p.add_(eps)
            numeric = (up - down) / (2 * eps)
            assert abs(numeric - grads[idx]) <= 1e-4 * max(1.0, abs(numeric))

    def test_adamw_step_moves_against_gradient(self):
        torch.manual_seed(0)
        model = torch.nn.Linear(1, 1).double()
        # weight decay off so the update direction is pure -sign(gradient)
        opt = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=0.0)
        x = torch.linspace(-1, 1, 32, dtype=torch.float64).unsqueeze(1)
        y = 3.0 * x - 0.5
        before = [p.detach().clone() for p in model.parameters()]
        loss = torch.nn.functional.mse_loss(model(x), y)
        loss.backward()
        grads = [p.grad.detach().clone() for p in model.parameters()]
        opt.step()
        for prev, now, grad in zip(before, model.parameters(), grads):
            move = (now.detach() - prev).item()
            assert move * grad.item() < 0  # opposite signs

    def test_masked_mse_ignores_invalid(self):
        pred = torch.tensor([[1.0, 5.0]])
        target = torch.tensor([[0.0, 0.0]])
        valid = torch.tensor([[True, False]])
        assert masked_mse(pred, target, valid).item() == pytest.approx(1.0)


class TestFinetune:
    def test_loss_decreases_on_learnable_data(self, desk_corpus, tmp_path):
        cfg = TrainConfig(epochs=3, batch_size=8, max_lr=1e-3, seed=1)
        _, manifest = finetune(
            desk_corpus["manifest"], cfg, "toy_cnn", tmp_path / "ckpt", dataset_id="desk-v1"
        )
        extra = manifest["extra"]
        assert extra["final_epoch_mean_loss"] < extra["first_epoch_mean_loss"]
        assert extra["optimizer"]["name"] == "AdamW"
        assert manifest["finetuned"] is True
        assert (tmp_path / "ckpt" / "checkpoint.pt").exists()
        assert (tmp_path / "ckpt" / "run_manifest.json").exists()
