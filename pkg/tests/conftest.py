from __future__ import annotations

import numpy as np
import pytest

from canopy_bench.raster import Raster, Units, write_raster
from canopy_bench.synthgen import PerturbModel, desk_v1_specs, generate_scene, perturb_prediction


def random_raster(
    rng: np.random.Generator,
    height: int,
    width: int,
    nodata_fraction: float = 0.0,
    low: float = 0.0,
    high: float = 30.0,
    pixel_size: float = 1.0,
    origin: tuple[float, float] = (0.0, 0.0),
    units: Units = Units.METERS,
) -> Raster:
    values = rng.uniform(low, high, size=(height, width)).astype(np.float32)
    if nodata_fraction > 0:
        mask = rng.random((height, width)) < nodata_fraction
        values[mask] = np.nan
    return Raster(values=values, pixel_size=pixel_size, origin=origin, units=units)


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The 12-scene desk-v1 fixture materialized once per session.

    Layout: gt/ dsm/ dtm/ hold the scene triplets; pred/ holds deterministic
    pseudo-predictions (per-scene scale factors) for evaluation tests.
    """
    root = tmp_path_factory.mktemp("desk_v1")
    gt_dir = root / "gt"
    dsm_dir = root / "dsm"
    dtm_dir = root / "dtm"
    pred_dir = root / "pred"
    for d in (gt_dir, dsm_dir, dtm_dir, pred_dir):
        d.mkdir()
    for i, (scene_id, spec) in enumerate(desk_v1_specs()):
        dsm, dtm, chm_true = generate_scene(spec)
        write_raster(dsm, dsm_dir / f"{scene_id}_dsm.chmf")
        write_raster(dtm, dtm_dir / f"{scene_id}_dtm.chmf")
        write_raster(chm_true, gt_dir / f"{scene_id}_chm.chmf")
        pred = perturb_prediction(chm_true, PerturbModel.SCALE, 0.8 + 0.03 * i)
        write_raster(pred, pred_dir / f"{scene_id}_pred.chmf")
    return root
