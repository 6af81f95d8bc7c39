"""FastAPI service wrapping the core toolkit.

Every operation the CLI offers is exposed as an endpoint taking
server-local paths. Domain errors map onto structured JSON error bodies:
config problems are 400 with type=ConfigError, stage failures are 500 with
the failing stage name, and everything else surfaces its exception type.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..chm import ElevationPair, derive_and_validate
from ..corpus import load_eval_units
from ..curation import (
    ExclusionReason,
    HeightSource,
    SampleRecord,
    Split,
    apply_score_cmd,
    filter_by_quality,
    filter_empty_canopy,
    ks_two_sample,
    load_manifest,
    save_manifest,
    split_distribution_report,
)
from ..errors import CanopyBenchError, ConfigError, StageFailureError
from ..metrics import evaluate
from ..pipeline import effective_workers, metric_summary_text, run_pipeline
from ..raster import read_raster, write_raster
from ..reporting import RunManifest, estimate_cost, render_benchmark_table
from ..synthgen import SceneSpec, desk_v1_specs, write_scene
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="canopy-bench", version=__version__)

    @app.exception_handler(CanopyBenchError)
    async def handle_domain_error(request, exc: CanopyBenchError):
        status = 400
        stage = None
        if isinstance(exc, StageFailureError):
            status = 500
            stage = exc.stage
        body = schemas.ErrorBody(type=type(exc).__name__, message=str(exc), stage=stage)
        return JSONResponse(status_code=status, content={"error": body.model_dump()})

    @app.exception_handler(FileNotFoundError)
    async def handle_missing_file(request, exc: FileNotFoundError):
        body = schemas.ErrorBody(type="FileNotFound", message=str(exc))
        return JSONResponse(status_code=400, content={"error": body.model_dump()})

    @app.exception_handler(ValueError)
    async def handle_value_error(request, exc: ValueError):
        body = schemas.ErrorBody(type="ValueError", message=str(exc))
        return JSONResponse(status_code=400, content={"error": body.model_dump()})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.get("/raster/info", response_model=schemas.RasterInfoResponse)
    def raster_info(path: str, format: str = "chmf"):
        r = read_raster(path, format)
        return schemas.RasterInfoResponse(
            path=path,
            width=r.width,
            height=r.height,
            pixel_size=r.pixel_size,
            origin=r.origin,
            nodata=None if math.isnan(r.nodata) else r.nodata,
            units=r.units.name.lower(),
            n_valid=r.n_valid,
        )

    @app.post("/chm/derive", response_model=schemas.DeriveChmResponse)
    def chm_derive(req: schemas.DeriveChmRequest):
        pair = ElevationPair(
            dsm=read_raster(req.dsm_path, req.input_format),
            dtm=read_raster(req.dtm_path, req.input_format),
        )
        chm, anomalies = derive_and_validate(
            pair, clamp_negative=req.clamp_negative, max_height=req.max_height
        )
        write_raster(chm, req.out_path)
        return schemas.DeriveChmResponse(
            out_path=req.out_path,
            anomalies=[schemas.AnomalyModel(kind=a.kind.value, count=a.count) for a in anomalies],
        )

    @app.post("/curation/run", response_model=schemas.CurateResponse)
    def curation_run(req: schemas.CurateRequest):
        records = load_manifest(req.manifest_path)
        if req.score_cmd:
            records = apply_score_cmd(records, req.score_cmd)
        if req.quality_threshold is not None:
            records = filter_by_quality(records, req.quality_threshold)
        if req.empty_canopy:
            records = filter_empty_canopy(records)
        save_manifest(records, req.out_path)
        ks = []
        if req.ks_report:
            report = split_distribution_report(
                records, HeightSource(req.height_source), seed=req.seed
            )
            ks = [
                schemas.KsResultModel(
                    pair=pair, statistic=res.statistic, p_value=res.p_value, n1=res.n1, n2=res.n2
                )
                for pair, res in report
            ]
        return schemas.CurateResponse(
            out_path=req.out_path,
            records=[schemas.SampleRecordModel(**r.to_dict()) for r in records],
            n_kept=sum(1 for r in records if r.split != Split.EXCLUDED),
            n_excluded_low_quality=sum(
                1 for r in records if r.exclusion_reason == ExclusionReason.LOW_QUALITY
            ),
            n_excluded_empty_canopy=sum(
                1 for r in records if r.exclusion_reason == ExclusionReason.EMPTY_CANOPY
            ),
            ks=ks,
        )

    @app.post("/curation/ks", response_model=schemas.KsResultModel)
    def curation_ks(req: schemas.KsRequest):
        res = ks_two_sample(req.sample_a, req.sample_b)
        return schemas.KsResultModel(
            pair="a-b", statistic=res.statistic, p_value=res.p_value, n1=res.n1, n2=res.n2
        )

    @app.post("/metrics/evaluate", response_model=schemas.EvaluateResponse)
    def metrics_evaluate(req: schemas.EvaluateRequest):
        config = _eval_config_from_request(req)
        ids = None
        if req.manifest_path:
            records = load_manifest(req.manifest_path)
            ids = [r.id for r in records if r.split != Split.EXCLUDED]
        units = load_eval_units(req.pred_dir, req.gt_dir, ids=ids)
        result = evaluate(units, config)
        payload = result.to_dict()
        if req.report_path:
            Path(req.report_path).parent.mkdir(parents=True, exist_ok=True)
            Path(req.report_path).write_text(
                json.dumps(payload, indent=2) + "\n", encoding="utf-8"
            )
        return schemas.EvaluateResponse(
            report_path=req.report_path,
            aggregate=schemas.MetricReportModel(**payload["aggregate"]),
            tiles=[schemas.TileRowModel(**t) for t in payload["tiles"]],
            summary=metric_summary_text(payload["aggregate"], dataset=Path(req.gt_dir).name),
        )

    @app.post("/synth/generate", response_model=schemas.SynthResponse)
    def synth_generate(req: schemas.SynthRequest):
        files: list[str] = []
        if req.desk_v1:
            for scene_id, spec in desk_v1_specs():
                files.extend(write_scene(spec, req.out_dir, scene_id).values())
            return schemas.SynthResponse(files=files)
        if req.spec_path:
            spec = SceneSpec.from_dict(
                json.loads(Path(req.spec_path).read_text(encoding="utf-8"))
            )
        elif req.spec is not None:
            spec = SceneSpec.from_dict(req.spec)
        else:
            raise ConfigError("synth needs spec_path, spec, or desk_v1=true")
        files.extend(write_scene(spec, req.out_dir, req.scene_id).values())
        return schemas.SynthResponse(files=files)

    @app.post("/cost/estimate", response_model=schemas.CostResponse)
    def cost_estimate(manifest: schemas.RunManifestModel):
        report = estimate_cost(RunManifest.from_dict(manifest.model_dump()))
        return schemas.CostResponse(**report.to_dict())

    @app.post("/benchmark/table", response_model=schemas.BenchmarkTableResponse)
    def benchmark_table(req: schemas.BenchmarkTableRequest):
        rows = []
        for row in req.rows:
            reports = {}
            for ds, report_path in row.reports.items():
                report = json.loads(Path(report_path).read_text(encoding="utf-8"))
                reports[ds] = report.get("aggregate", report)
            rows.append((RunManifest.from_dict(row.manifest.model_dump()), reports))
        return schemas.BenchmarkTableResponse(text=render_benchmark_table(rows))

    @app.post("/pipeline/run", response_model=schemas.PipelineRunResponse)
    def pipeline_run(req: schemas.PipelineRunRequest):
        result = run_pipeline(req.config_path)
        return schemas.PipelineRunResponse(
            exit_status=result.exit_status,
            stages=[schemas.StageStatusModel(name=s.name, status=s.status) for s in result.stages],
        )

    return app


def _eval_config_from_request(req: schemas.EvaluateRequest):
    from ..metrics import Aggregation, EvalConfig, MaskSource, NormalizeScope, PcRegion

    normalize_raw = req.normalize.strip()
    normalize = () if normalize_raw in ("none", "") else tuple(
        part.strip() for part in normalize_raw.split(",")
    )
    for part in normalize:
        if part not in ("pred", "gt"):
            raise ConfigError(f"normalize must be 'pred,gt', a subset, or 'none'; got {part!r}")
    region_map = {
        "gt": PcRegion.GT_TREE,
        "gt_tree": PcRegion.GT_TREE,
        "union": PcRegion.UNION_TREE,
        "union_tree": PcRegion.UNION_TREE,
    }
    if req.pc_region not in region_map:
        raise ConfigError(f"unknown pc_region {req.pc_region!r}")
    try:
        aggregation = Aggregation(req.aggregation)
        scope = NormalizeScope(req.normalize_scope)
        mask_source = MaskSource(req.mask_source)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return EvalConfig(
        threshold=req.threshold,
        aggregation=aggregation,
        normalize=normalize,
        normalize_scope=scope,
        mask_source=mask_source,
        pc_region=region_map[req.pc_region],
        workers=effective_workers(req.workers),
        tile_size=req.tile_size,
    )


app = create_app()
