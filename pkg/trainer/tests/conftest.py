from __future__ import annotations

import json
import subprocess
import sys

import pytest


def run_bench(*args: str) -> subprocess.CompletedProcess:
    """Invoke the evaluation toolkit's CLI (the external interface)."""
    return subprocess.run(
        [sys.executable, "-m", "canopy_bench", *args],
        capture_output=True,
        text=True,
        check=False,
    )


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """desk-v1 scenes materialized through the toolkit CLI, plus a manifest."""
    root = tmp_path_factory.mktemp("trainer_desk")
    scenes = root / "scenes"
    proc = run_bench("synth", "--desk-v1", "--out-dir", str(scenes))
    assert proc.returncode == 0, proc.stderr
    records = []
    for i in range(1, 13):
        sid = f"scene{i:02d}"
        records.append(
            {
                "id": sid,
                "image_path": str(scenes / f"{sid}_dsm.chmf"),
                "chm_path": str(scenes / f"{sid}_chm.chmf"),
                "quality_score": 4.0,
                "split": "train",
                "exclusion_reason": "none",
            }
        )
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps(records, indent=2), encoding="utf-8")
    gt_dir = scenes  # *_chm.chmf files double as the evaluation ground truth
    return {"root": root, "scenes": scenes, "manifest": manifest, "gt_dir": gt_dir}
