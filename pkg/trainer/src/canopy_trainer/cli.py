"""canopy-trainer CLI: `train` a backbone on a sample manifest, `export`
predictions as CHMF rasters for the evaluation toolkit."""

from __future__ import annotations

import argparse
import logging
import sys

from .data import DataError
from .model import BackboneUnavailableError
from .schedule import TrainConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="canopy-trainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fine-tune a backbone on image/CHM pairs")
    train.add_argument("--manifest", required=True)
    train.add_argument("--config", help="TrainConfig JSON (defaults used when omitted)")
    train.add_argument("--backbone", default="toy_cnn")
    train.add_argument("--out", required=True)
    train.add_argument("--dataset-id", default="")

    export = sub.add_parser("export", help="write CHMF predictions for a manifest")
    export.add_argument("--ckpt", required=True)
    export.add_argument("--manifest", required=True)
    export.add_argument("--out", required=True)
    export.add_argument(
        "--identity", action="store_true", help="copy ground truth (bridge sanity mode)"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            from .train import finetune

            cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
            ckpt, manifest = finetune(
                args.manifest, cfg, args.backbone, args.out, dataset_id=args.dataset_id
            )
            print(f"checkpoint -> {ckpt}")
            print(
                f"final epoch loss {manifest['extra']['final_epoch_mean_loss']:.6f} "
                f"({manifest['extra']['total_steps']} steps, {manifest['wall_hours']:.4f} h)"
            )
            return 0

        from .export import export_predictions

        failures = export_predictions(args.ckpt, args.manifest, args.out, identity=args.identity)
        if failures:
            print(f"failed samples: {failures}", file=sys.stderr)
            return 1
        print(f"predictions -> {args.out}")
        return 0
    except (DataError, BackboneUnavailableError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
