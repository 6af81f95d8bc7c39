#!/usr/bin/env python3
"""Materialize the desk-v1 fixture corpus (12 scenes, seeds 1-12, 256x256).

The corpus is deterministic, so it is regenerated on demand instead of
committing raster binaries. Default output: tests/data/desk-v1/.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from canopy_bench.synthgen import desk_v1_specs, write_scene


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out-dir",
        default=str(Path(__file__).resolve().parent.parent / "tests" / "data" / "desk-v1"),
    )
    args = parser.parse_args()
    out_dir = Path(args.out_dir)
    for scene_id, spec in desk_v1_specs():
        paths = write_scene(spec, out_dir, scene_id)
        print(f"{scene_id}: {paths['chm']}")
    print(f"corpus written to {out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
