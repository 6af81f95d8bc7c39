"""Run manifests, compute-cost / carbon estimates, and benchmark tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# Defaults are back-derived from published per-run figures, not vendor quotes;
# every report that uses them says so in its footer.
DEFAULT_PRICE_PER_HOUR = 0.80  # USD/h, consistent with the $2.09 / 2.61 h run
DEFAULT_GPU_POWER_KW = 0.30  # RTX A6000 board power
DEFAULT_CARBON_INTENSITY = 0.311  # kgCO2/kWh, back-solved from 0.14 kg at 1.5 h

FOOTER_NOTE = (
    "price/carbon constants are back-derived defaults; the published $1.24 for 1.5 h "
    "is inconsistent with $2.09 for 2.61 h under any single hourly rate"
)


@dataclass(frozen=True)
class RunManifest:
    model_id: str
    n_params_millions: float = 0.0
    gflops: float = 0.0
    finetuned: bool = False
    dataset_id: str = ""
    wall_hours: float = 0.0
    gpu_name: str = ""
    gpu_power_kw: float = DEFAULT_GPU_POWER_KW
    price_per_hour: float = DEFAULT_PRICE_PER_HOUR
    carbon_intensity: float = DEFAULT_CARBON_INTENSITY
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.wall_hours < 0:
            raise ValueError("wall_hours must be >= 0")
        if not self.gpu_power_kw > 0:
            raise ValueError("gpu_power_kw must be > 0")
        if self.carbon_intensity < 0:
            raise ValueError("carbon_intensity must be >= 0")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "n_params_millions": self.n_params_millions,
            "gflops": self.gflops,
            "finetuned": self.finetuned,
            "dataset_id": self.dataset_id,
            "wall_hours": self.wall_hours,
            "gpu_name": self.gpu_name,
            "gpu_power_kw": self.gpu_power_kw,
            "price_per_hour": self.price_per_hour,
            "carbon_intensity": self.carbon_intensity,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(
            model_id=d["model_id"],
            n_params_millions=float(d.get("n_params_millions", 0.0)),
            gflops=float(d.get("gflops", 0.0)),
            finetuned=bool(d.get("finetuned", False)),
            dataset_id=d.get("dataset_id", ""),
            wall_hours=float(d.get("wall_hours", 0.0)),
            gpu_name=d.get("gpu_name", ""),
            gpu_power_kw=float(d.get("gpu_power_kw", DEFAULT_GPU_POWER_KW)),
            price_per_hour=float(d.get("price_per_hour", DEFAULT_PRICE_PER_HOUR)),
            carbon_intensity=float(d.get("carbon_intensity", DEFAULT_CARBON_INTENSITY)),
            extra=d.get("extra", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class CostReport:
    dollars: float
    kg_co2: float
    kwh: float

    def to_dict(self) -> dict:
        return {
            "dollars": self.dollars,
            "kg_co2": self.kg_co2,
            "kwh": self.kwh,
            "dollars_rounded": round(self.dollars, 2),
            "kg_co2_rounded": round(self.kg_co2, 2),
            "kwh_rounded": round(self.kwh, 2),
        }


def estimate_cost(manifest: RunManifest) -> CostReport:
    """dollars = hours x rate; kwh = hours x power; co2 = kwh x intensity.

    Values are returned unrounded; display rounding is two decimals.
    """
    kwh = manifest.wall_hours * manifest.gpu_power_kw
    return CostReport(
        dollars=manifest.wall_hours * manifest.price_per_hour,
        kg_co2=kwh * manifest.carbon_intensity,
        kwh=kwh,
    )


# ---------------------------------------------------------------------------
# Benchmark table

# metric name -> True when higher is better
_METRIC_HIGHER_BETTER = {"MAE": False, "IoU": True, "PC": True}
BEST_MARK = "*"
SECOND_MARK = "^"


def _rank_marks(values: list[float | None], higher_better: bool) -> list[str]:
    """One mark per row: best, second-best, or nothing. Ties share marks."""
    defined = sorted({v for v in values if v is not None}, reverse=higher_better)
    marks = []
    for v in values:
        if v is None:
            marks.append("")
        elif defined and v == defined[0]:
            marks.append(BEST_MARK)
        elif len(defined) > 1 and v == defined[1]:
            marks.append(SECOND_MARK)
        else:
            marks.append("")
    return marks


def render_benchmark_table(rows: list[tuple[RunManifest, dict[str, dict]]]) -> str:
    """Fixed-width text table in the benchmark layout.

    ``rows`` pairs a run manifest with {dataset_id: metric-report dict}; the
    metric dicts need keys mae/iou/pearson. Best value per metric column is
    marked '*' and second-best '^' (ties marked on every tied row).
    """
    if not rows:
        raise ValueError("need at least one benchmark row")
    datasets: list[str] = []
    for _, per_dataset in rows:
        for ds in per_dataset:
            if ds not in datasets:
                datasets.append(ds)

    header = ["Model", "FT", "#Params", "GFLOPs"]
    for ds in datasets:
        for metric, higher in _METRIC_HIGHER_BETTER.items():
            header.append(f"{ds} {metric}{'↑' if higher else '↓'}")

    # collect raw metric values column by column so best/second marks are right
    columns: dict[tuple[str, str], list[float | None]] = {}
    for ds in datasets:
        for metric_key, name in (("mae", "MAE"), ("iou", "IoU"), ("pearson", "PC")):
            vals = []
            for _, per_dataset in rows:
                report = per_dataset.get(ds)
                vals.append(None if report is None else report.get(metric_key))
            columns[(ds, name)] = vals

    marks = {
        key: _rank_marks(vals, _METRIC_HIGHER_BETTER[key[1]]) for key, vals in columns.items()
    }

    body = []
    for i, (manifest, _) in enumerate(rows):
        row = [
            manifest.model_id,
            "yes" if manifest.finetuned else "no",
            f"{manifest.n_params_millions:g}M",
            f"{manifest.gflops:g}",
        ]
        for ds in datasets:
            for name in ("MAE", "IoU", "PC"):
                v = columns[(ds, name)][i]
                cell = "-" if v is None else f"{v:.4f}{marks[(ds, name)][i]}"
                row.append(cell)
        body.append(row)

    widths = [max(len(header[c]), *(len(r[c]) for r in body)) for c in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for row in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    lines.append("")
    lines.append(f"{BEST_MARK} best, {SECOND_MARK} second-best per metric column")
    lines.append(FOOTER_NOTE)
    return "\n".join(lines)
