"""Pipeline orchestration: staged runs with content-hash skipping.

A run is described by an INI-style UTF-8 config with one section per stage.
Stages execute strictly in the canonical order ingest -> chm_derive ->
curate -> evaluate -> report; only sections present in the config run.
Each stage's inputs (files plus its own config section) are content-hashed;
a re-run with unchanged inputs skips the stage and leaves its outputs
byte-identical.

Config schema (all paths relative to the config file's directory):

    [pipeline]
    out_dir = runs/demo          # required; stage outputs and state live here
    seed = 0

    [ingest]
    manifest = samples.json      # existing manifest, or:
    image_dir = images/
    chm_dir = chms/
    scores = scores.json         # optional {id: score} sidecar

    [chm_derive]
    dsm_dir = elevation/
    dtm_dir = elevation/
    out_subdir = chm
    clamp_negative = true
    max_height = 120

    [curate]
    manifest = ...               # default: ingest output
    quality_threshold = 2.5      # omit to skip quality filtering
    empty_canopy = true
    ks_report = false
    height_source = per_pixel_subsample

    [evaluate]
    pred_dir = preds/            # required
    gt_dir = gt/                 # required
    manifest = ...               # optional: restrict to kept record ids
    threshold = 1e-4
    aggregation = micro
    normalize = pred,gt          # or none
    normalize_scope = per_tile
    pc_region = gt               # or union
    workers = 1                  # CANOPY_BENCH_WORKERS overrides
    tile_size =                  # optional grid retiling
    report = report.json

    [report]
    rows = rows.json             # [{manifest|manifest_path, reports: {ds: path}}]
    # or: run_manifest = run.json  (single row; uses the evaluate report)
    out = benchmark.txt

Exit codes (CLI): 0 success, 2 config error, 3 stage failure.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .chm import DEFAULT_MAX_HEIGHT, ElevationPair, derive_and_validate
from .corpus import canonical_id, index_rasters, load_eval_units
from .curation import (
    HeightSource,
    SampleRecord,
    Split,
    filter_by_quality,
    filter_empty_canopy,
    format_ks_line,
    load_manifest,
    save_manifest,
    split_distribution_report,
)
from .errors import CanopyBenchError, ConfigError, StageFailureError
from .metrics import (
    Aggregation,
    EvalConfig,
    MaskSource,
    NormalizeScope,
    PcRegion,
    evaluate,
)
from .raster import read_raster, write_raster
from .reporting import RunManifest, estimate_cost, render_benchmark_table

log = logging.getLogger("canopy_bench.pipeline")

STAGE_ORDER = ("ingest", "chm_derive", "curate", "evaluate", "report")
WORKERS_ENV = "CANOPY_BENCH_WORKERS"


@dataclass
class StageStatus:
    name: str
    status: str  # ran | skipped


@dataclass
class PipelineResult:
    exit_status: int
    stages: list[StageStatus]


def effective_workers(requested: int | None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer")
    return max(1, requested or 1)


def metric_summary_text(aggregate: dict, dataset: str = "") -> str:
    """Plain-text one-row summary in the benchmark column order."""
    pc = aggregate.get("pearson")
    return (
        f"dataset={dataset or '-'} MAE={aggregate['mae']:.4f} "
        f"IoU={aggregate['iou']:.4f} PC={'-' if pc is None else f'{pc:.4f}'} "
        f"agg={aggregate['aggregation']} n_valid={aggregate['n_valid']}"
    )


# ---------------------------------------------------------------------------
# Config handling


def load_config(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if "pipeline" not in parser or "out_dir" not in parser["pipeline"]:
        raise ConfigError("config needs a [pipeline] section with out_dir")
    return parser


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


# ---------------------------------------------------------------------------
# Content hashing for stage skipping


def _hash_file(h, path: Path) -> None:
    h.update(str(path.name).encode())
    h.update(path.read_bytes())


def _hash_inputs(section_items: dict, paths: list[Path]) -> str:
    h = hashlib.sha256()
    for key in sorted(section_items):
        h.update(f"{key}={section_items[key]}\n".encode())
    for path in paths:
        if path.is_dir():
            for child in sorted(path.iterdir()):
                if child.is_file():
                    _hash_file(h, child)
        elif path.is_file():
            _hash_file(h, path)
        else:
            h.update(f"missing:{path}\n".encode())
    return h.hexdigest()


class _State:
    def __init__(self, out_dir: Path):
        self.path = out_dir / "state.json"
        self.data = {}
        if self.path.exists():
            try:
                self.data = json.loads(self.path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                self.data = {}

    def should_skip(self, stage: str, input_hash: str) -> bool:
        entry = self.data.get(stage)
        if not entry or entry.get("hash") != input_hash:
            return False
        return all(Path(p).exists() for p in entry.get("outputs", []))

    def record(self, stage: str, input_hash: str, outputs: list[Path]) -> None:
        self.data[stage] = {"hash": input_hash, "outputs": [str(p) for p in outputs]}
        self.path.write_text(json.dumps(self.data, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Stages: each returns (input paths for hashing, runner) so hashing happens
# before any work


def _stage_ingest(cfg, base: Path, out_dir: Path):
    sec = cfg["ingest"]
    out_path = out_dir / "manifest.json"
    inputs: list[Path] = []
    if "manifest" in sec:
        inputs.append(_resolve(base, sec["manifest"]))
    else:
        for key in ("image_dir", "chm_dir"):
            if key not in sec:
                raise ConfigError("[ingest] needs either manifest or image_dir + chm_dir")
            inputs.append(_resolve(base, sec[key]))
        if "scores" in sec:
            inputs.append(_resolve(base, sec["scores"]))

    def run() -> list[Path]:
        if "manifest" in sec:
            records = load_manifest(_resolve(base, sec["manifest"]))
        else:
            image_dir = _resolve(base, sec["image_dir"])
            chm_index = index_rasters(_resolve(base, sec["chm_dir"]))
            scores = {}
            if "scores" in sec:
                scores = json.loads(_resolve(base, sec["scores"]).read_text(encoding="utf-8"))
            records = []
            for cid, chm_path in sorted(chm_index.items()):
                image_path = image_dir / f"{cid}.png"
                records.append(
                    SampleRecord(
                        id=cid,
                        image_path=str(image_path),
                        chm_path=str(chm_path),
                        quality_score=scores.get(cid),
                    )
                )
        for r in records:
            if r.chm_path and not Path(r.chm_path).exists():
                raise FileNotFoundError(f"record {r.id!r}: missing CHM {r.chm_path}")
        save_manifest(records, out_path)
        return [out_path]

    return inputs, run


def _stage_chm_derive(cfg, base: Path, out_dir: Path):
    sec = cfg["chm_derive"]
    for key in ("dsm_dir", "dtm_dir"):
        if key not in sec:
            raise ConfigError(f"[chm_derive] needs {key}")
    dsm_dir = _resolve(base, sec["dsm_dir"])
    dtm_dir = _resolve(base, sec["dtm_dir"])
    chm_out = out_dir / sec.get("out_subdir", "chm")
    inputs = [dsm_dir, dtm_dir]

    def run() -> list[Path]:
        clamp = sec.getboolean("clamp_negative", fallback=True)
        max_height = sec.getfloat("max_height", fallback=DEFAULT_MAX_HEIGHT)
        chm_out.mkdir(parents=True, exist_ok=True)
        dsm_files = sorted(dsm_dir.glob("*_dsm.chmf")) or sorted(dsm_dir.glob("*.chmf"))
        if not dsm_files:
            raise FileNotFoundError(f"no DSM rasters in {dsm_dir}")
        outputs = []
        for dsm_path in dsm_files:
            cid = canonical_id(dsm_path)
            dtm_path = dtm_dir / f"{cid}_dtm.chmf"
            if not dtm_path.exists():
                dtm_path = dtm_dir / dsm_path.name
            if not dtm_path.exists():
                raise FileNotFoundError(f"no DTM matching {dsm_path.name}")
            pair = ElevationPair(
                dsm=read_raster(dsm_path, "chmf"), dtm=read_raster(dtm_path, "chmf")
            )
            chm, anomalies = derive_and_validate(pair, clamp_negative=clamp, max_height=max_height)
            for a in anomalies:
                log.info("sample=%s anomaly kind=%s count=%d", cid, a.kind.value, a.count)
            out_path = chm_out / f"{cid}_chm.chmf"
            write_raster(chm, out_path)
            outputs.append(out_path)
        return outputs

    return inputs, run


def _stage_curate(cfg, base: Path, out_dir: Path, seed: int):
    sec = cfg["curate"]
    manifest_path = (
        _resolve(base, sec["manifest"]) if "manifest" in sec else out_dir / "manifest.json"
    )
    out_path = out_dir / "curated.json"
    # the empty-canopy filter reads every record's CHM, so those files are
    # inputs for skip-hashing too (builders run after upstream stages, so the
    # manifest exists by now on any successful path)
    inputs = [manifest_path]
    if manifest_path.exists():
        try:
            for r in load_manifest(manifest_path):
                if r.chm_path:
                    inputs.append(Path(r.chm_path))
        except (OSError, ValueError, KeyError):
            pass  # unusable manifest surfaces as a stage failure inside run()

    def run() -> list[Path]:
        records = load_manifest(manifest_path)
        if "quality_threshold" in sec:
            records = filter_by_quality(records, sec.getfloat("quality_threshold"))
        if sec.getboolean("empty_canopy", fallback=True):
            records = filter_empty_canopy(records)
        save_manifest(records, out_path)
        if sec.getboolean("ks_report", fallback=False):
            source = HeightSource(sec.get("height_source", "per_pixel_subsample"))
            for pair_name, result in split_distribution_report(records, source, seed=seed):
                print(format_ks_line(pair_name, result))
        return [out_path]

    return inputs, run


def parse_eval_section(sec) -> EvalConfig:
    normalize_raw = sec.get("normalize", "pred,gt").strip()
    normalize = () if normalize_raw in ("none", "") else tuple(
        part.strip() for part in normalize_raw.split(",")
    )
    for part in normalize:
        if part not in ("pred", "gt"):
            raise ConfigError(f"normalize must be 'pred,gt', a subset, or 'none'; got {part!r}")
    pc_region = {"gt": PcRegion.GT_TREE, "gt_tree": PcRegion.GT_TREE,
                 "union": PcRegion.UNION_TREE, "union_tree": PcRegion.UNION_TREE}.get(
        sec.get("pc_region", "gt")
    )
    if pc_region is None:
        raise ConfigError(f"unknown pc_region {sec.get('pc_region')!r}")
    try:
        aggregation = Aggregation(sec.get("aggregation", "micro"))
        scope = NormalizeScope(sec.get("normalize_scope", "per_tile"))
        mask_source = MaskSource(sec.get("mask_source", "raw"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tile_size_raw = sec.get("tile_size", "").strip()
    return EvalConfig(
        threshold=sec.getfloat("threshold", fallback=1e-4),
        aggregation=aggregation,
        normalize=normalize,
        normalize_scope=scope,
        mask_source=mask_source,
        pc_region=pc_region,
        workers=effective_workers(sec.getint("workers", fallback=1)),
        tile_size=int(tile_size_raw) if tile_size_raw else None,
    )


def _stage_evaluate(cfg, base: Path, out_dir: Path):
    sec = cfg["evaluate"]
    for key in ("pred_dir", "gt_dir"):
        if key not in sec:
            raise ConfigError(f"[evaluate] needs {key}")
    pred_dir = _resolve(base, sec["pred_dir"])
    gt_dir = _resolve(base, sec["gt_dir"])
    report_path = _resolve(out_dir, sec.get("report", "report.json"))
    inputs = [pred_dir, gt_dir]
    manifest_path = None
    if "manifest" in sec:
        manifest_path = _resolve(base, sec["manifest"])
        inputs.append(manifest_path)

    def run() -> list[Path]:
        config = parse_eval_section(sec)
        ids = None
        if manifest_path is not None:
            records = load_manifest(manifest_path)
            ids = [r.id for r in records if r.split != Split.EXCLUDED]
        units = load_eval_units(pred_dir, gt_dir, ids=ids)
        result = evaluate(units, config)
        payload = result.to_dict()
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(metric_summary_text(payload["aggregate"], dataset=gt_dir.name))
        return [report_path]

    return inputs, run


def _stage_report(cfg, base: Path, out_dir: Path):
    sec = cfg["report"]
    out_path = _resolve(out_dir, sec.get("out", "benchmark.txt"))
    eval_report_name = cfg["evaluate"].get("report", "report.json") if "evaluate" in cfg else "report.json"
    inputs: list[Path] = []
    if "rows" in sec:
        inputs.append(_resolve(base, sec["rows"]))
    if "run_manifest" in sec:
        inputs.append(_resolve(base, sec["run_manifest"]))
        inputs.append(_resolve(out_dir, eval_report_name))

    def run() -> list[Path]:
        rows = []
        if "rows" in sec:
            spec = json.loads(_resolve(base, sec["rows"]).read_text(encoding="utf-8"))
            for entry in spec:
                if "manifest_path" in entry:
                    manifest = RunManifest.load(_resolve(base, entry["manifest_path"]))
                else:
                    manifest = RunManifest.from_dict(entry["manifest"])
                reports = {}
                for ds, report_ref in entry.get("reports", {}).items():
                    report = json.loads(_resolve(base, report_ref).read_text(encoding="utf-8"))
                    reports[ds] = report.get("aggregate", report)
                rows.append((manifest, reports))
        elif "run_manifest" in sec:
            manifest = RunManifest.load(_resolve(base, sec["run_manifest"]))
            eval_report_path = _resolve(out_dir, eval_report_name)
            report = json.loads(eval_report_path.read_text(encoding="utf-8"))
            rows.append((manifest, {manifest.dataset_id or "dataset": report["aggregate"]}))
        else:
            raise ConfigError("[report] needs rows or run_manifest")
        lines = [render_benchmark_table(rows), ""]
        for manifest, _ in rows:
            cost = estimate_cost(manifest)
            lines.append(
                f"{manifest.model_id}: {manifest.wall_hours:g} h on {manifest.gpu_name or 'unknown GPU'}"
                f" -> ${cost.dollars:.2f}, {cost.kwh:.2f} kWh, {cost.kg_co2:.2f} kg CO2"
            )
        text = "\n".join(lines) + "\n"
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
        print(text, end="")
        return [out_path]

    return inputs, run


# ---------------------------------------------------------------------------


def run_pipeline(config_path: str | Path) -> PipelineResult:
    """Execute the configured stages in order with hash-based skipping.

    Raises ConfigError for unusable configs; stage failures are wrapped in
    StageFailureError. Callers map these to exit codes 2 and 3.
    """
    config_path = Path(config_path)
    cfg = load_config(config_path)
    base = config_path.parent
    out_dir = _resolve(base, cfg["pipeline"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg["pipeline"].getint("seed", fallback=0)

    builders = {
        "ingest": lambda: _stage_ingest(cfg, base, out_dir),
        "chm_derive": lambda: _stage_chm_derive(cfg, base, out_dir),
        "curate": lambda: _stage_curate(cfg, base, out_dir, seed),
        "evaluate": lambda: _stage_evaluate(cfg, base, out_dir),
        "report": lambda: _stage_report(cfg, base, out_dir),
    }

    state = _State(out_dir)
    statuses: list[StageStatus] = []
    for stage in STAGE_ORDER:
        if stage not in cfg:
            continue
        try:
            inputs, runner = builders[stage]()
        except ConfigError:
            raise
        except CanopyBenchError as exc:
            raise ConfigError(f"[{stage}] {exc}") from exc
        section_items = dict(cfg[stage])
        section_items["__seed__"] = str(seed)
        input_hash = _hash_inputs(section_items, inputs)
        if state.should_skip(stage, input_hash):
            log.info("stage=%s status=skipped", stage)
            statuses.append(StageStatus(stage, "skipped"))
            continue
        try:
            outputs = runner()
        except ConfigError:
            raise
        except Exception as exc:
            log.error("stage=%s status=failed error=%s", stage, exc)
            raise StageFailureError(stage, exc) from exc
        state.record(stage, input_hash, outputs)
        log.info("stage=%s status=ran", stage)
        statuses.append(StageStatus(stage, "ran"))
    return PipelineResult(exit_status=0, stages=statuses)
