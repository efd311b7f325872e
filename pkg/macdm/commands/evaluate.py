from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from macdm.core.exceptions import ConfigError, InsufficientDataError
from macdm.core.hashing import config_hash
from macdm.core.seeding import derive_seed
from macdm.evaluation.fid import Images, fid_with_extractor, noise_images
from macdm.evaluation.protocols import (
    Condition,
    run_classification_protocol,
    run_segmentation_protocol,
    scarce_subset,
)
from macdm.evaluation.reports import MetricsReport, ReportProvenance, render_text, write_report
from macdm.models import ArtifactKind
from macdm.phantoms.enums import Label
from macdm.phantoms.folds import assign_folds, holdout_split
from macdm.phantoms.storage import atomic_directory, load_dataset, manifest_hash
from macdm.phantoms.triplet import Corpus

from .deps import CommandContext, add_common_output, output_dir, require_dataset
from .sample import downstream_judge

logger = logging.getLogger(__name__)

EXTRACTOR_NAME = "extractor.pt"


def parse_named(items: Optional[List[str]], flag: str) -> Dict[str, List[Path]]:
    """NAME=DIR[,DIR...] pairs; a bare DIR is named after its directory."""
    named: Dict[str, List[Path]] = {}
    for item in items or []:
        name, sep, paths = item.partition("=")
        if not sep:
            name, paths = Path(item.split(",")[0]).name, item
        dirs = [Path(p) for p in paths.split(",") if p]
        if not name or name in named or not dirs:
            raise ConfigError(f"{flag} names must be unique and non-empty, got {item!r}")
        named[name] = dirs
    return named


def load_merged(paths: Sequence[Path]) -> Corpus:
    """One corpus from several dataset directories of equal resolution."""
    corpus = load_dataset(paths[0])
    for path in paths[1:]:
        corpus = corpus.merged_with(load_dataset(path))
    return corpus


def _provenance(ctx: CommandContext, datasets: Dict[str, Path], **checkpoints: str) -> ReportProvenance:
    s = ctx.settings
    return ReportProvenance(
        seeds={"seed": s.seed, "downstream": s.downstream.seed, "segmenter": s.segmenter.seed},
        checkpoints=dict(checkpoints),
        datasets={name: manifest_hash(path) for name, path in datasets.items()},
        config_hash=config_hash(s.resolved()),
    )


def _write(run, report: MetricsReport, out: Path, overwrite: bool) -> MetricsReport:
    atomic_directory(out, lambda staging: write_report(report, staging), overwrite)
    run.add_output("report", ArtifactKind.REPORT, out / "metrics.json")
    run.finish(out)
    logger.info("report written to %s\n%s", out, render_text(report))
    return report


def run_eval_classify(
    ctx: CommandContext,
    data: Path,
    synthetic: Dict[str, Union[Path, Sequence[Path]]],
    out: Path,
    independent: Optional[Path] = None,
    scarce: bool = False,
    overwrite: bool = False,
) -> MetricsReport:
    """
    Stratified k-fold CV for the real baseline and each real + synthetic condition.

    A condition may name several synthetic datasets (e.g. normal→CML and normal→normal
    translations); they are merged before being added to the training folds.
    """
    s = ctx.settings
    sources = {name: [p] if isinstance(p, Path) else list(p) for name, p in synthetic.items()}
    with ctx.recorder("eval-classify") as run:
        datasets: Dict[str, Path] = {"real": data}
        for name, paths in sources.items():
            for path in paths:
                datasets[f"synthetic:{name}" if len(paths) == 1 else f"synthetic:{name}:{path.name}"] = path
        if independent is not None:
            datasets["independent"] = independent
        for name, path in datasets.items():
            run.add_input(name, ArtifactKind.DATASET, path)
        real = require_dataset(data, "--data")
        if scarce:
            real = scarce_subset(real, s.evaluation.scarce_normal, s.evaluation.scarce_cml, s.seed)
        if scarce or real.manifest.num_folds is None:
            real = assign_folds(real, s.phantoms.folds, s.seed)
        conditions = [Condition("real")]
        conditions += [Condition(f"real+{name}", load_merged(paths)) for name, paths in sources.items()]
        test = load_dataset(independent) if independent is not None else None
        results = run_classification_protocol(real, conditions, s.downstream, test, ctx.device)
        report = MetricsReport(classification=results, provenance=_provenance(ctx, datasets))
        return _write(run, report, out, overwrite)


def segmentation_split(ctx: CommandContext, real: Corpus, test: Optional[Corpus]) -> tuple[Corpus, Corpus]:
    if test is not None:
        return real, test
    fraction = ctx.settings.evaluation.segmentation_test_fraction
    return holdout_split(real, fraction, derive_seed(ctx.settings.seed, "holdout"))


def run_eval_segment(
    ctx: CommandContext,
    data: Path,
    synthetic: Path,
    out: Path,
    test: Optional[Path] = None,
    overwrite: bool = False,
) -> MetricsReport:
    """Real only, augmented only and real + augmented lesion segmenters on one test split."""
    s = ctx.settings
    with ctx.recorder("eval-segment") as run:
        datasets = {"real": data, "synthetic": synthetic}
        if test is not None:
            datasets["test"] = test
        for name, path in datasets.items():
            run.add_input(name, ArtifactKind.DATASET, path)
        real = require_dataset(data, "--data")
        train, test_corpus = segmentation_split(ctx, real, load_dataset(test) if test is not None else None)
        results = run_segmentation_protocol(train, load_dataset(synthetic), test_corpus, s.segmenter, ctx.device)
        report = MetricsReport(segmentation=results, provenance=_provenance(ctx, datasets))
        return _write(run, report, out, overwrite)


def run_fid(
    ctx: CommandContext,
    a: Path,
    b: Path,
    out: Path,
    extractor: Optional[Path] = None,
    noise_baseline: bool = False,
    overwrite: bool = False,
    label: Optional[Label] = None,
) -> MetricsReport:
    """
    FID between two datasets under a phantom-trained feature extractor.

    Without --extractor one is trained on all of dataset A and saved next to the report. With
    `label`, both sides are restricted to that class before the feature statistics are fitted
    (e.g. translated CML against real CML).
    """
    with ctx.recorder("fid") as run:
        run.add_input("a", ArtifactKind.DATASET, a)
        run.add_input("b", ArtifactKind.DATASET, b)
        if extractor is not None:
            run.add_input("extractor", ArtifactKind.CHECKPOINT, extractor)
        corpus_a, corpus_b = require_dataset(a, "A"), require_dataset(b, "B")
        ref: Images = corpus_a
        other: Images = corpus_b
        name_a, name_b = a.name, b.name
        if label is not None:
            ref, other = corpus_a.of_label(label), corpus_b.of_label(label)
            name_a, name_b = f"{a.name}[{label.value}]", f"{b.name}[{label.value}]"
            if len(ref) < 2 or len(other) < 2:
                raise InsufficientDataError(
                    f"FID needs at least 2 {label.value} records per side, got {len(ref)} and {len(other)}"
                )
        holder: dict = {}

        def fill(staging: Path) -> None:
            model, digest = downstream_judge(ctx, corpus_a, extractor, None if extractor else staging / EXTRACTOR_NAME)
            results = [fid_with_extractor(ref, other, model, digest, f"{name_a} vs {name_b}")]
            if noise_baseline:
                size, seed = corpus_a.manifest.resolution, derive_seed(ctx.settings.seed, "noise")
                noise = noise_images(len(other), size, seed)
                results.append(fid_with_extractor(ref, noise, model, digest, f"{name_a} vs noise"))
            report = MetricsReport(fid=results, provenance=_provenance(ctx, {"a": a, "b": b}, extractor=digest))
            write_report(report, staging)
            holder["report"] = report

        atomic_directory(out, fill, overwrite)
        run.add_output("report", ArtifactKind.REPORT, out / "metrics.json")
        run.finish(out)
    return holder["report"]


def _eval_classify(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "eval-classify")
    synthetic = parse_named(args.synthetic, "--synthetic")
    run_eval_classify(ctx, args.data, synthetic, out, args.independent, args.scarce, args.overwrite)
    print(out)
    return 0


def _eval_segment(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "eval-segment")
    run_eval_segment(ctx, args.data, args.synthetic, out, args.test, args.overwrite)
    print(out)
    return 0


def _fid(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "fid")
    label = Label(args.label) if args.label else None
    report = run_fid(ctx, args.a, args.b, out, args.extractor, args.noise_baseline, args.overwrite, label)
    for result in report.fid:
        print(f"{result.label}: {result.value:.6f}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("eval-classify", help="k-fold CV plus independent testing per condition.")
    add_common_output(p)
    p.add_argument("--data", type=Path, required=True, help="Real dataset (folds are reused when present).")
    p.add_argument(
        "--synthetic", action="append", default=None, metavar="NAME=DIR[,DIR]",
        help="Synthetic dataset(s) merged and added to the real training folds; repeat for more conditions.",
    )
    p.add_argument("--independent", type=Path, default=None, help="Independent test dataset.")
    p.add_argument(
        "--scarce", action="store_true",
        help="Subsample the real data to evaluation.scarce_normal / scarce_cml records first.",
    )
    p.add_argument("--iterations", dest="downstream.iterations", type=int, default=None)
    p.set_defaults(handler=_eval_classify)

    p = subparsers.add_parser("eval-segment", help="Real / augmented / real+augmented lesion segmentation.")
    add_common_output(p)
    p.add_argument("--data", type=Path, required=True, help="Real dataset.")
    p.add_argument("--synthetic", type=Path, required=True, help="Translated dataset with generated masks.")
    p.add_argument(
        "--test", type=Path, default=None,
        help="Test dataset; without it a stratified holdout of --data is used.",
    )
    p.add_argument("--iterations", dest="segmenter.iterations", type=int, default=None)
    p.set_defaults(handler=_eval_segment)

    p = subparsers.add_parser("fid", help="Fréchet distance between two datasets.")
    add_common_output(p)
    p.add_argument("a", type=Path, help="Reference dataset.")
    p.add_argument("b", type=Path, help="Compared dataset.")
    p.add_argument("--extractor", type=Path, default=None, help="Downstream classifier checkpoint.")
    p.add_argument("--noise-baseline", action="store_true", help="Also report FID of pure-noise images.")
    p.add_argument(
        "--label", choices=[label.value for label in Label], default=None,
        help="Compare only records of this class on both sides.",
    )
    p.set_defaults(handler=_fid)
