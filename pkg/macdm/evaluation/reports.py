"""
Serialisable evaluation results.

Reports never carry wall-clock fields, so two runs with the same seeds serialise identically.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from .metrics import ClassificationMetrics, ConfusionCounts

# Published operating points and scores, recorded beside desk-scale numbers for context only.
REFERENCE_POINTS: Dict[str, str] = {
    "guidance": "g=300, Z=800 at T=1000 on 256x256 radiographs",
    "fid_mask_conditioned": "89.87 (Inception features)",
    "fid_without_masks": "99.71 (Inception features)",
    "independent_test_triple": "sensitivity 87.50%, specificity 91.10%, accuracy 90.60%",
    "dice_real_vs_real_plus_augmented": "0.74±0.03 -> 0.85±0.04",
}


class MetricsBlock(BaseModel):
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: Optional[float] = Field(None, ge=0, le=1)
    sensitivity: Optional[float] = Field(None, ge=0, le=1)
    specificity: Optional[float] = Field(None, ge=0, le=1)

    @classmethod
    def from_counts(cls, counts: ConfusionCounts) -> "MetricsBlock":
        m = ClassificationMetrics.partial(counts)
        return cls(
            tp=counts.tp,
            fp=counts.fp,
            tn=counts.tn,
            fn=counts.fn,
            accuracy=m.accuracy,
            sensitivity=m.sensitivity,
            specificity=m.specificity,
        )


class ClassificationResult(BaseModel):
    condition: str
    folds: List[MetricsBlock] = Field(default_factory=list)
    pooled: MetricsBlock
    accuracy_mean: float = Field(ge=0, le=1)
    accuracy_std: float = Field(ge=0)
    best_fold: Optional[int] = None
    independent: Optional[MetricsBlock] = None


class SegmentationResult(BaseModel):
    condition: str
    dice_mean: float = Field(ge=0, le=1)
    dice_std: float = Field(ge=0)
    n_train: int
    n_test: int


class FidResult(BaseModel):
    label: str
    value: float = Field(ge=0)
    extractor_sha256: str
    n_a: int
    n_b: int
    note: str = "desk-scale feature extractor; not comparable with Inception-based FID"


class SweepPoint(BaseModel):
    gradient_scale: float = Field(ge=0)
    start_step: int = Field(ge=0)
    target_rate: float = Field(ge=0, le=1)
    lesion_rate: float = Field(ge=0, le=1)
    fid: float = Field(ge=0)


class SweepReport(BaseModel):
    points: List[SweepPoint]
    selected: SweepPoint
    fid_tolerance: float


class ReportProvenance(BaseModel):
    seeds: Dict[str, int] = Field(default_factory=dict)
    checkpoints: Dict[str, str] = Field(default_factory=dict, description="name -> sha256")
    datasets: Dict[str, str] = Field(default_factory=dict, description="name -> manifest hash")
    config_hash: Optional[str] = None


class MetricsReport(BaseModel):
    classification: List[ClassificationResult] = Field(default_factory=list)
    segmentation: List[SegmentationResult] = Field(default_factory=list)
    fid: List[FidResult] = Field(default_factory=list)
    sweep: Optional[SweepReport] = None
    provenance: ReportProvenance = Field(default_factory=ReportProvenance)
    reference_points: Dict[str, str] = Field(default_factory=lambda: dict(REFERENCE_POINTS))

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        provenance = ReportProvenance(
            seeds={**self.provenance.seeds, **other.provenance.seeds},
            checkpoints={**self.provenance.checkpoints, **other.provenance.checkpoints},
            datasets={**self.provenance.datasets, **other.provenance.datasets},
            config_hash=other.provenance.config_hash or self.provenance.config_hash,
        )
        return MetricsReport(
            classification=self.classification + other.classification,
            segmentation=self.segmentation + other.segmentation,
            fid=self.fid + other.fid,
            sweep=other.sweep or self.sweep,
            provenance=provenance,
        )


def _fmt(value: Optional[float], percent: bool = True) -> str:
    if value is None:
        return "undefined"
    return f"{100 * value:.2f}%" if percent else f"{value:.4f}"


def table_rows(report: MetricsReport) -> List[List[str]]:
    rows = [["section", "condition", "split", "accuracy", "sensitivity", "specificity", "dice", "fid"]]
    for result in report.classification:
        for split, block in (("cv", result.pooled), ("independent", result.independent)):
            if block is None:
                continue
            rows.append(
                [
                    "classification",
                    result.condition,
                    split,
                    _fmt(block.accuracy),
                    _fmt(block.sensitivity),
                    _fmt(block.specificity),
                    "",
                    "",
                ]
            )
    for seg in report.segmentation:
        dice = f"{seg.dice_mean:.2f}±{seg.dice_std:.2f}"
        rows.append(["segmentation", seg.condition, "test", "", "", "", dice, ""])
    for fid in report.fid:
        rows.append(["fid", fid.label, "", "", "", "", "", f"{fid.value:.4f}"])
    return rows


def render_text(report: MetricsReport) -> str:
    rows = table_rows(report)
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table_rows(report))
    return buf.getvalue()


def write_report(report: MetricsReport, directory: Path) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": directory / "metrics.json",
        "csv": directory / "metrics.csv",
        "text": directory / "metrics.txt",
    }
    paths["json"].write_text(report.model_dump_json(indent=2), encoding="utf-8")
    paths["csv"].write_text(render_csv(report), encoding="utf-8")
    paths["text"].write_text(render_text(report), encoding="utf-8")
    return paths
