from __future__ import annotations

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from canopy_bench.raster import Raster, read_raster, write_raster
from canopy_bench.service import create_app

from conftest import random_raster


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


class TestHealthAndInfo:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"

    def test_raster_info(self, client, tmp_path):
        rng = np.random.default_rng(1)
        r = random_raster(rng, 6, 9, nodata_fraction=0.2, pixel_size=2.0, origin=(10.0, 20.0))
        path = tmp_path / "info.chmf"
        write_raster(r, path)
        body = client.get("/raster/info", params={"path": str(path)}).json()
        assert (body["width"], body["height"]) == (9, 6)
        assert body["pixel_size"] == 2.0
        assert body["origin"] == [10.0, 20.0]
        assert body["n_valid"] == r.n_valid

    def test_missing_file_is_structured_error(self, client):
        resp = client.get("/raster/info", params={"path": "/no/such.chmf"})
        assert resp.status_code == 400
        assert resp.json()["error"]["type"] == "IoFailureError"


class TestDeriveEndpoint:
    def test_derive_writes_and_reports(self, client, tmp_path):
        dtm = Raster(values=np.full((8, 8), 10.0, dtype=np.float32))
        values = np.full((8, 8), 11.0, dtype=np.float32)
        values[0, 0] = 8.0  # dsm below dtm -> negative height, clamped
        values[2, 2] = 200.0  # 190 m after subtraction -> too tall
        dsm = Raster(values=values)
        dsm_path, dtm_path, out_path = (
            tmp_path / "a_dsm.chmf",
            tmp_path / "a_dtm.chmf",
            tmp_path / "a_chm.chmf",
        )
        write_raster(dsm, dsm_path)
        write_raster(dtm, dtm_path)
        body = client.post(
            "/chm/derive",
            json={
                "dsm_path": str(dsm_path),
                "dtm_path": str(dtm_path),
                "out_path": str(out_path),
                "max_height": 120.0,
            },
        ).json()
        kinds = {a["kind"]: a["count"] for a in body["anomalies"]}
        assert kinds == {"clamped_negative": 1, "too_tall": 1}
        chm = read_raster(out_path)
        assert chm.values[0, 0] == 0.0  # clamped

    def test_geometry_mismatch_maps_to_400(self, client, tmp_path):
        a = Raster(values=np.zeros((4, 4), dtype=np.float32))
        b = Raster(values=np.zeros((5, 4), dtype=np.float32))
        pa, pb = tmp_path / "a.chmf", tmp_path / "b.chmf"
        write_raster(a, pa)
        write_raster(b, pb)
        resp = client.post(
            "/chm/derive",
            json={"dsm_path": str(pa), "dtm_path": str(pb), "out_path": str(tmp_path / "o.chmf")},
        )
        assert resp.status_code == 400
        assert resp.json()["error"]["type"] == "GeometryMismatchError"


class TestKsEndpoint:
    def test_identical(self, client):
        body = client.post(
            "/curation/ks", json={"sample_a": [1, 2, 3], "sample_b": [1, 2, 3]}
        ).json()
        assert body["statistic"] == 0.0
        assert body["p_value"] == 1.0

    def test_empty_sample_maps_to_400(self, client):
        resp = client.post("/curation/ks", json={"sample_a": [], "sample_b": [1.0]})
        assert resp.status_code == 400
        assert resp.json()["error"]["type"] == "EmptySampleError"


class TestEvaluateEndpoint:
    def test_evaluate_writes_report(self, client, tmp_path, desk_corpus):
        report_path = tmp_path / "report.json"
        body = client.post(
            "/metrics/evaluate",
            json={
                "pred_dir": str(desk_corpus / "pred"),
                "gt_dir": str(desk_corpus / "gt"),
                "normalize": "none",
                "report_path": str(report_path),
            },
        ).json()
        assert len(body["tiles"]) == 12
        assert body["aggregate"]["aggregation"] == "micro"
        assert "MAE=" in body["summary"]
        saved = json.loads(report_path.read_text())
        assert saved["aggregate"] == body["aggregate"]

    def test_validation_error_is_422(self, client):
        resp = client.post("/metrics/evaluate", json={"pred_dir": 5})
        assert resp.status_code == 422

    def test_mixed_role_directory_is_400(self, client, desk_corpus, tmp_path):
        # a directory holding dsm/dtm/chm files has colliding sample ids and
        # must come back as a structured ValueError, not a 500
        scenes = tmp_path / "scenes"
        scenes.mkdir()
        for name in ("x_dsm.chmf", "x_chm.chmf"):
            src = next((desk_corpus / "gt").glob("*.chmf"))
            (scenes / name).write_bytes(src.read_bytes())
        resp = client.post(
            "/metrics/evaluate",
            json={"pred_dir": str(desk_corpus / "pred"), "gt_dir": str(scenes)},
        )
        assert resp.status_code == 400
        assert resp.json()["error"]["type"] == "ValueError"


class TestSynthAndCost:
    def test_synth_desk_v1(self, client, tmp_path):
        out = tmp_path / "scenes"
        body = client.post(
            "/synth/generate", json={"out_dir": str(out), "desk_v1": True}
        ).json()
        assert len(body["files"]) == 12 * 4
        assert len(list(out.glob("*_chm.chmf"))) == 12

    def test_synth_single_spec(self, client, tmp_path):
        spec = {
            "size": 32,
            "pixel_size": 1.0,
            "terrain": {"base_elevation": 50, "relief_amplitude": 3, "seed": 4},
            "crowns": [{"center": [16, 16], "radius": 6, "height": 10, "shape": "cone"}],
            "noise_sigma": 0.0,
        }
        body = client.post(
            "/synth/generate", json={"out_dir": str(tmp_path), "spec": spec, "scene_id": "t"}
        ).json()
        assert any(f.endswith("t_chm.chmf") for f in body["files"])
        chm = read_raster(tmp_path / "t_chm.chmf")
        assert float(chm.values.max()) == pytest.approx(10.0, abs=1e-3)

    def test_cost_estimate(self, client):
        body = client.post(
            "/cost/estimate", json={"model_id": "m", "wall_hours": 2.61}
        ).json()
        assert body["dollars_rounded"] == 2.09

    def test_benchmark_table(self, client, tmp_path, desk_corpus):
        report_path = tmp_path / "r.json"
        client.post(
            "/metrics/evaluate",
            json={
                "pred_dir": str(desk_corpus / "pred"),
                "gt_dir": str(desk_corpus / "gt"),
                "report_path": str(report_path),
            },
        )
        body = client.post(
            "/benchmark/table",
            json={
                "rows": [
                    {
                        "manifest": {"model_id": "toy", "dataset_id": "desk"},
                        "reports": {"desk": str(report_path)},
                    }
                ]
            },
        ).json()
        assert "toy" in body["text"]
        assert "desk MAE" in body["text"]


class TestPipelineEndpoint:
    def test_run_and_skip(self, client, tmp_path, desk_corpus):
        cfg = tmp_path / "run.ini"
        cfg.write_text(
            f"""
[pipeline]
out_dir = {tmp_path / 'out'}

[evaluate]
pred_dir = {desk_corpus / 'pred'}
gt_dir = {desk_corpus / 'gt'}
report = report.json
""",
            encoding="utf-8",
        )
        first = client.post("/pipeline/run", json={"config_path": str(cfg)}).json()
        assert first["exit_status"] == 0
        assert first["stages"] == [{"name": "evaluate", "status": "ran"}]
        second = client.post("/pipeline/run", json={"config_path": str(cfg)}).json()
        assert second["stages"] == [{"name": "evaluate", "status": "skipped"}]

    def test_stage_failure_is_500(self, client, tmp_path, desk_corpus):
        cfg = tmp_path / "bad.ini"
        cfg.write_text(
            f"""
[pipeline]
out_dir = {tmp_path / 'out2'}

[evaluate]
pred_dir = {desk_corpus / 'pred'}
gt_dir = {tmp_path / 'missing'}
report = report.json
""",
            encoding="utf-8",
        )
        resp = client.post("/pipeline/run", json={"config_path": str(cfg)})
        assert resp.status_code == 500
        err = resp.json()["error"]
        assert err["type"] == "StageFailureError"
        assert err["stage"] == "evaluate"

    def test_config_error_is_400(self, client, tmp_path):
        cfg = tmp_path / "broken.ini"
        cfg.write_text("[nope]\n", encoding="utf-8")
        resp = client.post("/pipeline/run", json={"config_path": str(cfg)})
        assert resp.status_code == 400
        assert resp.json()["error"]["type"] == "ConfigError"
