"""Pydantic request/response models for the HTTP API.

Paths in requests are interpreted on the server's filesystem; the CLI runs
the app in-process by default so they resolve locally.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    type: str
    message: str
    stage: str | None = None


class RasterInfoResponse(BaseModel):
    path: str
    width: int
    height: int
    pixel_size: float
    origin: tuple[float, float]
    nodata: float | None
    units: str
    n_valid: int


class DeriveChmRequest(BaseModel):
    dsm_path: str
    dtm_path: str
    out_path: str
    clamp_negative: bool = True
    max_height: float = 120.0
    input_format: str = "chmf"


class AnomalyModel(BaseModel):
    kind: str
    count: int


class DeriveChmResponse(BaseModel):
    out_path: str
    anomalies: list[AnomalyModel]


class SampleRecordModel(BaseModel):
    id: str
    image_path: str = ""
    chm_path: str = ""
    quality_score: float | None = None
    split: str = "train"
    exclusion_reason: str = "none"


class KsResultModel(BaseModel):
    pair: str
    statistic: float
    p_value: float
    n1: int
    n2: int


class CurateRequest(BaseModel):
    manifest_path: str
    out_path: str
    quality_threshold: float | None = 2.5
    empty_canopy: bool = True
    ks_report: bool = False
    height_source: str = "per_pixel_subsample"
    seed: int = 0
    score_cmd: str | None = None


class CurateResponse(BaseModel):
    out_path: str
    records: list[SampleRecordModel]
    n_kept: int
    n_excluded_low_quality: int
    n_excluded_empty_canopy: int
    ks: list[KsResultModel] = Field(default_factory=list)


class KsRequest(BaseModel):
    sample_a: list[float]
    sample_b: list[float]


class MetricReportModel(BaseModel):
    mae: float
    iou: float
    pearson: float | None
    n_valid: int
    n_tree_gt: int
    n_tree_pred: int
    aggregation: str
    pc_defined_tiles: int
    pc_undefined_tiles: int
    empty_union_tiles: int


class TileRowModel(BaseModel):
    id: str
    n_valid: int
    mae: float
    iou: float
    pearson: float | None
    n_tree_gt: int
    n_tree_pred: int
    empty_union: bool


class EvaluateRequest(BaseModel):
    pred_dir: str
    gt_dir: str
    manifest_path: str | None = None
    threshold: float = 1e-4
    aggregation: str = "micro"
    normalize: str = "pred,gt"  # comma list or "none"
    normalize_scope: str = "per_tile"
    mask_source: str = "raw"
    pc_region: str = "gt"
    workers: int | None = None
    tile_size: int | None = None
    report_path: str | None = None


class EvaluateResponse(BaseModel):
    report_path: str | None
    aggregate: MetricReportModel
    tiles: list[TileRowModel]
    summary: str


class SynthRequest(BaseModel):
    out_dir: str
    spec_path: str | None = None
    spec: dict | None = None
    scene_id: str = "scene"
    desk_v1: bool = False


class SynthResponse(BaseModel):
    files: list[str]


class RunManifestModel(BaseModel):
    model_id: str
    n_params_millions: float = 0.0
    gflops: float = 0.0
    finetuned: bool = False
    dataset_id: str = ""
    wall_hours: float = 0.0
    gpu_name: str = ""
    gpu_power_kw: float = 0.30
    price_per_hour: float = 0.80
    carbon_intensity: float = 0.311
    extra: dict = Field(default_factory=dict)


class CostResponse(BaseModel):
    dollars: float
    kg_co2: float
    kwh: float
    dollars_rounded: float
    kg_co2_rounded: float
    kwh_rounded: float


class BenchmarkRowModel(BaseModel):
    manifest: RunManifestModel
    reports: dict[str, str]  # dataset id -> evaluation report path


class BenchmarkTableRequest(BaseModel):
    rows: list[BenchmarkRowModel]


class BenchmarkTableResponse(BaseModel):
    text: str


class PipelineRunRequest(BaseModel):
    config_path: str


class StageStatusModel(BaseModel):
    name: str
    status: str


class PipelineRunResponse(BaseModel):
    exit_status: int
    stages: list[StageStatusModel]
