"""Command-line interface: a thin client over the HTTP service.

By default the service app runs in-process (ASGI transport), so commands
work with no server running; ``--server URL`` or CANOPY_BENCH_SERVER points
the same commands at a remote instance instead.

Exit codes: 0 success, 2 config/usage error, 3 pipeline stage failure,
1 any other error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import httpx

SERVER_ENV = "CANOPY_BENCH_SERVER"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_STAGE = 3

_CONFIG_ERROR_TYPES = {"ConfigError", "RequestValidationError", "ValidationError"}


class ServiceError(Exception):
    def __init__(self, error_type: str, message: str, stage: str | None = None):
        super().__init__(message)
        self.error_type = error_type
        self.stage = stage

    @property
    def exit_code(self) -> int:
        if self.error_type in _CONFIG_ERROR_TYPES:
            return EXIT_CONFIG
        if self.error_type == "StageFailureError":
            return EXIT_STAGE
        return EXIT_ERROR


class Client:
    """Sync facade over the async HTTP client; in-process unless a server
    URL is given."""

    def __init__(self, server: str | None):
        self.server = server

    def _make_client(self) -> httpx.AsyncClient:
        if self.server:
            return httpx.AsyncClient(base_url=self.server, timeout=None)
        from .service.app import app

        return httpx.AsyncClient(
            transport=httpx.ASGITransport(app=app), base_url="http://canopy-bench", timeout=None
        )

    def call(self, method: str, path: str, **kwargs) -> dict:
        async def go():
            async with self._make_client() as client:
                return await client.request(method, path, **kwargs)

        response = asyncio.run(go())
        if response.status_code >= 400:
            try:
                body = response.json()
            except json.JSONDecodeError:
                raise ServiceError("HttpError", response.text)
            if "error" in body:
                err = body["error"]
                raise ServiceError(err.get("type", "Error"), err.get("message", ""), err.get("stage"))
            # FastAPI validation errors arrive as {"detail": [...]}
            raise ServiceError("RequestValidationError", json.dumps(body.get("detail", body)))
        return response.json()


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--server",
        default=os.environ.get(SERVER_ENV),
        help="remote service URL (default: run the service in-process)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="canopy-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    chm = sub.add_parser("chm", help="canopy height map operations")
    chm_sub = chm.add_subparsers(dest="chm_command", required=True)
    derive = chm_sub.add_parser("derive", help="derive CHM = DSM - DTM")
    derive.add_argument("--dsm", required=True)
    derive.add_argument("--dtm", required=True)
    derive.add_argument("--out", required=True)
    derive.add_argument("--no-clamp", action="store_true", help="keep negative heights")
    derive.add_argument("--max-height", type=float, default=120.0)
    derive.add_argument("--format", default="chmf", choices=["chmf", "geotiff"])
    _add_common(derive)

    curate = sub.add_parser("curate", help="filter a sample manifest")
    curate.add_argument("--manifest", required=True)
    curate.add_argument("--out", required=True)
    curate.add_argument("--quality-threshold", type=float, default=2.5)
    curate.add_argument("--no-quality", action="store_true", help="skip the quality filter")
    curate.add_argument("--no-empty-canopy", action="store_true", help="skip the canopy filter")
    curate.add_argument("--ks-report", action="store_true")
    curate.add_argument("--height-source", default="per_pixel_subsample",
                        choices=["per_pixel_subsample", "per_sample_max"])
    curate.add_argument("--seed", type=int, default=0)
    curate.add_argument("--score-cmd", help="external scorer invoked per image")
    _add_common(curate)

    ev = sub.add_parser("evaluate", help="score predictions against ground truth")
    ev.add_argument("--pred-dir", required=True)
    ev.add_argument("--gt-dir", required=True)
    ev.add_argument("--manifest")
    ev.add_argument("--threshold", type=float, default=1e-4)
    ev.add_argument("--agg", default="micro", choices=["micro", "macro"])
    ev.add_argument("--normalize", default="pred,gt")
    ev.add_argument("--normalize-scope", default="per_tile", choices=["per_tile", "per_dataset"])
    ev.add_argument("--pc-region", default="gt", choices=["gt", "union"])
    ev.add_argument("--workers", type=int)
    ev.add_argument("--tile-size", type=int)
    ev.add_argument("--report", required=True)
    _add_common(ev)

    synth = sub.add_parser("synth", help="generate synthetic scenes")
    synth.add_argument("--spec", help="scene spec JSON")
    synth.add_argument("--out-dir", required=True)
    synth.add_argument("--scene-id", default="scene")
    synth.add_argument("--desk-v1", action="store_true", help="write the 12-scene fixture corpus")
    _add_common(synth)

    cost = sub.add_parser("cost", help="compute cost / carbon estimate for a run manifest")
    cost.add_argument("--manifest", required=True)
    _add_common(cost)

    report = sub.add_parser("report", help="render the benchmark table")
    report.add_argument("--rows", required=True, help="JSON: [{manifest, reports:{ds: path}}]")
    report.add_argument("--out")
    _add_common(report)

    run = sub.add_parser("run", help="run a staged pipeline from a config file")
    run.add_argument("config")
    _add_common(run)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)

    return parser


# ---------------------------------------------------------------------------
# Command handlers


def _cmd_chm_derive(args, client: Client) -> int:
    body = client.call(
        "POST",
        "/chm/derive",
        json={
            "dsm_path": args.dsm,
            "dtm_path": args.dtm,
            "out_path": args.out,
            "clamp_negative": not args.no_clamp,
            "max_height": args.max_height,
            "input_format": args.format,
        },
    )
    for anomaly in body["anomalies"]:
        print(f"anomaly kind={anomaly['kind']} count={anomaly['count']}")
    if not body["anomalies"]:
        print("no anomalies")
    print(f"wrote {body['out_path']}")
    return EXIT_OK


def _cmd_curate(args, client: Client) -> int:
    body = client.call(
        "POST",
        "/curation/run",
        json={
            "manifest_path": args.manifest,
            "out_path": args.out,
            "quality_threshold": None if args.no_quality else args.quality_threshold,
            "empty_canopy": not args.no_empty_canopy,
            "ks_report": args.ks_report,
            "height_source": args.height_source,
            "seed": args.seed,
            "score_cmd": args.score_cmd,
        },
    )
    for ks in body["ks"]:
        print(
            f"pair={ks['pair']} D={ks['statistic']!r} p={ks['p_value']!r} "
            f"n1={ks['n1']} n2={ks['n2']}"
        )
    print(
        f"kept={body['n_kept']} low_quality={body['n_excluded_low_quality']} "
        f"empty_canopy={body['n_excluded_empty_canopy']} -> {body['out_path']}"
    )
    return EXIT_OK


def _cmd_evaluate(args, client: Client) -> int:
    body = client.call(
        "POST",
        "/metrics/evaluate",
        json={
            "pred_dir": args.pred_dir,
            "gt_dir": args.gt_dir,
            "manifest_path": args.manifest,
            "threshold": args.threshold,
            "aggregation": args.agg,
            "normalize": args.normalize,
            "normalize_scope": args.normalize_scope,
            "pc_region": args.pc_region,
            "workers": args.workers,
            "tile_size": args.tile_size,
            "report_path": args.report,
        },
    )
    print(body["summary"])
    print(f"report -> {body['report_path']}")
    return EXIT_OK


def _cmd_synth(args, client: Client) -> int:
    body = client.call(
        "POST",
        "/synth/generate",
        json={
            "out_dir": args.out_dir,
            "spec_path": args.spec,
            "scene_id": args.scene_id,
            "desk_v1": args.desk_v1,
        },
    )
    print(f"wrote {len(body['files'])} files to {args.out_dir}")
    return EXIT_OK


def _cmd_cost(args, client: Client) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    body = client.call("POST", "/cost/estimate", json=manifest)
    print(
        f"dollars={body['dollars_rounded']:.2f} kwh={body['kwh_rounded']:.2f} "
        f"kg_co2={body['kg_co2_rounded']:.2f}"
    )
    return EXIT_OK


def _cmd_report(args, client: Client) -> int:
    rows = json.loads(Path(args.rows).read_text(encoding="utf-8"))
    body = client.call("POST", "/benchmark/table", json={"rows": rows})
    print(body["text"])
    if args.out:
        Path(args.out).write_text(body["text"] + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_run(args, client: Client) -> int:
    body = client.call("POST", "/pipeline/run", json={"config_path": str(Path(args.config).resolve())})
    for stage in body["stages"]:
        print(f"stage={stage['name']} status={stage['status']}")
    return int(body["exit_status"])


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("canopy_bench.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return _cmd_serve(args)
    client = Client(getattr(args, "server", None))
    handlers = {
        "chm": _cmd_chm_derive,
        "curate": _cmd_curate,
        "evaluate": _cmd_evaluate,
        "synth": _cmd_synth,
        "cost": _cmd_cost,
        "report": _cmd_report,
        "run": _cmd_run,
    }
    try:
        return handlers[args.command](args, client)
    except ServiceError as exc:
        where = f" (stage={exc.stage})" if exc.stage else ""
        print(f"error [{exc.error_type}]{where}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
