from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from macdm.core.exceptions import ConfigError
from macdm.core.hashing import config_hash
from macdm.diffusion.enums import SamplerKind
from macdm.evaluation.downstream import PhantomResNet, load_downstream, train_downstream_classifier
from macdm.evaluation.protocols import sweep_guidance
from macdm.evaluation.reports import MetricsReport, ReportProvenance, SweepReport, write_report
from macdm.models import ArtifactKind
from macdm.networks.checkpoint import checkpoint_digest, state_digest
from macdm.phantoms.enums import Label
from macdm.phantoms.storage import atomic_directory, manifest_hash
from macdm.phantoms.triplet import Corpus, LabeledTriplet
from macdm.sampling.results import SampleResult, write_samples
from macdm.sampling.translate import SamplingModels, generate_unconditional, translate_batch
from macdm.schemas.sampling import GuidanceSpec

from .deps import CommandContext, add_common_output, output_dir, require_dataset

logger = logging.getLogger(__name__)

JUDGE_NAME = "judge.pt"


def translation_sources(corpus: Corpus, spec: GuidanceSpec, limit: Optional[int] = None) -> List[LabeledTriplet]:
    """Normal records unless non-normal inputs are allowed; at most `limit` of them, in corpus order."""
    sources = list(corpus) if spec.allow_non_normal else corpus.of_label(Label.NORMAL)
    return sources[:limit] if limit is not None else sources


def run_translate(
    ctx: CommandContext,
    data: Path,
    denoiser: Path,
    classifier: Optional[Path],
    out: Path,
    limit: Optional[int] = None,
    overwrite: bool = False,
) -> List[SampleResult]:
    spec = ctx.settings.guidance
    with ctx.recorder("translate") as run:
        run.add_input("dataset", ArtifactKind.DATASET, data)
        run.add_input("denoiser", ArtifactKind.CHECKPOINT, denoiser)
        if classifier is not None:
            run.add_input("classifier", ArtifactKind.CHECKPOINT, classifier)
        run.add_seed("guidance", spec.seed)
        corpus = require_dataset(data, "--data")
        models = SamplingModels.from_checkpoints(denoiser, classifier, ctx.device)
        sources = translation_sources(corpus, spec, limit)
        if not sources:
            raise ConfigError(f"{data} holds no records to translate")
        results = translate_batch(sources, models, spec, progress=ctx.progress)
        write_samples(results, out, models.resolution, ctx.settings.phantoms.lossless, overwrite)
        run.add_output("dataset", ArtifactKind.DATASET, out)
        run.finish(out)
    return results


def run_generate(
    ctx: CommandContext,
    denoiser: Path,
    classifier: Optional[Path],
    out: Path,
    count: int,
    overwrite: bool = False,
) -> List[SampleResult]:
    spec = ctx.settings.guidance
    with ctx.recorder("generate") as run:
        run.add_input("denoiser", ArtifactKind.CHECKPOINT, denoiser)
        if classifier is not None:
            run.add_input("classifier", ArtifactKind.CHECKPOINT, classifier)
        run.add_seed("guidance", spec.seed)
        models = SamplingModels.from_checkpoints(denoiser, classifier, ctx.device)
        results = generate_unconditional(models, spec, count, progress=ctx.progress)
        write_samples(results, out, models.resolution, ctx.settings.phantoms.lossless, overwrite)
        run.add_output("dataset", ArtifactKind.DATASET, out)
        run.finish(out)
    return results


def downstream_judge(
    ctx: CommandContext, real: Corpus, judge: Optional[Path], save_to: Optional[Path]
) -> tuple[PhantomResNet, str]:
    """A loaded judge checkpoint, or a fresh downstream classifier trained on the real corpus."""
    if judge is not None:
        model, _ = load_downstream(judge, ctx.device)
        return model, checkpoint_digest(judge)
    model, _ = train_downstream_classifier(real, ctx.settings.downstream, ctx.device, save_to, progress=ctx.progress)
    return model, state_digest(model)


def run_sweep(
    ctx: CommandContext,
    data: Path,
    denoiser: Path,
    classifier: Path,
    out: Path,
    judge: Optional[Path] = None,
    start_steps: Optional[Sequence[int]] = None,
    overwrite: bool = False,
) -> SweepReport:
    if classifier is None:
        raise ConfigError("sweep-guidance needs --classifier")
    s = ctx.settings
    holder: dict = {}
    with ctx.recorder("sweep-guidance") as run:
        run.add_input("dataset", ArtifactKind.DATASET, data)
        run.add_input("denoiser", ArtifactKind.CHECKPOINT, denoiser)
        run.add_input("classifier", ArtifactKind.CHECKPOINT, classifier)
        if judge is not None:
            run.add_input("judge", ArtifactKind.CHECKPOINT, judge)
        corpus = require_dataset(data, "--data")
        models = SamplingModels.from_checkpoints(denoiser, classifier, ctx.device)
        spec = s.guidance
        sources = corpus.of_label(Label.NORMAL)[: s.evaluation.sweep_sources]
        reference = corpus.of_label(spec.target_class)
        if not sources or not reference:
            raise ConfigError("sweep needs normal sources and reference records of the target class")

        def fill(staging: Path) -> None:
            model, digest = downstream_judge(ctx, corpus, judge, None if judge else staging / JUDGE_NAME)
            report = sweep_guidance(
                models, sources, reference, model, digest, spec,
                s.evaluation.sweep_scales, start_steps, s.evaluation.fid_tolerance,
            )
            provenance = ReportProvenance(
                seeds={"guidance": spec.seed, "downstream": s.downstream.seed},
                checkpoints={
                    "denoiser": checkpoint_digest(denoiser),
                    "classifier": checkpoint_digest(classifier),
                    "judge": digest,
                },
                datasets={"real": manifest_hash(data)},
                config_hash=config_hash(s.resolved()),
            )
            write_report(MetricsReport(sweep=report, provenance=provenance), staging)
            holder["report"] = report

        atomic_directory(out, fill, overwrite)
        run.add_output("report", ArtifactKind.REPORT, out / "metrics.json")
        run.finish(out)
    selected = holder["report"].selected
    logger.info("selected operating point g=%s Z=%d", selected.gradient_scale, selected.start_step)
    return holder["report"]


def _translate(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "translated")
    results = run_translate(
        ctx, args.data, args.denoiser_path, args.classifier_path, out, args.limit, args.overwrite
    )
    print(f"{out} ({len(results)} records)")
    return 0


def _generate(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "generated")
    results = run_generate(ctx, args.denoiser_path, args.classifier_path, out, args.count, args.overwrite)
    print(f"{out} ({len(results)} records)")
    return 0


def _sweep(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "sweep")
    report = run_sweep(
        ctx, args.data, args.denoiser_path, args.classifier_path, out, args.judge, args.start_steps, args.overwrite
    )
    print(f"g={report.selected.gradient_scale} Z={report.selected.start_step}")
    return 0


def _guidance_flags(p: argparse.ArgumentParser) -> None:
    add_common_output(p)
    p.add_argument("--denoiser", dest="denoiser_path", type=Path, required=True, help="denoiser.pt checkpoint.")
    p.add_argument("--classifier", dest="classifier_path", type=Path, default=None, help="classifier.pt checkpoint.")
    p.add_argument(
        "--target", dest="guidance.target_class", choices=[label.value for label in Label], default=None,
        help="Class to steer towards.",
    )
    p.add_argument("--gradient-scale", dest="guidance.gradient_scale", type=float, default=None, help="g.")
    p.add_argument("--ddim-steps", dest="guidance.ddim_steps", type=int, default=None)
    p.add_argument("--eta", dest="guidance.eta", type=float, default=None)
    p.add_argument("--sampler", dest="guidance.sampler", choices=[kind.value for kind in SamplerKind], default=None)
    p.add_argument(
        "--no-masks", dest="weights", action="store_const", const={"w1": 1.0, "w2": 0.0, "w3": 0.0},
        default=None, help="Mask-free models: masks are carried through (translate) or left empty.",
    )


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("translate", help="Translate normal records towards a target class.")
    _guidance_flags(p)
    p.add_argument("--data", type=Path, required=True, help="Source dataset directory.")
    p.add_argument("--start-step", dest="guidance.start_step", type=int, default=None, help="Z.")
    p.add_argument("--limit", type=int, default=None, help="Translate at most this many records.")
    p.add_argument(
        "--allow-non-normal", dest="guidance.allow_non_normal", action="store_const", const=True,
        default=None, help="Also translate CML records.",
    )
    p.set_defaults(handler=_translate)

    p = subparsers.add_parser("generate", help="Sample new records from pure noise.")
    _guidance_flags(p)
    p.add_argument("--count", type=int, required=True)
    p.set_defaults(handler=_generate)

    p = subparsers.add_parser("sweep-guidance", help="Grid over g (and Z) scored by target rate and FID.")
    _guidance_flags(p)
    p.add_argument("--data", type=Path, required=True, help="Real dataset: normal sources and FID reference.")
    p.add_argument("--judge", type=Path, default=None, help="Downstream classifier checkpoint to score with.")
    p.add_argument("--start-steps", type=int, nargs="+", default=None, help="Z values to sweep.")
    p.add_argument(
        "--scales", dest="evaluation.sweep_scales", type=float, nargs="+", default=None, help="g values."
    )
    p.set_defaults(handler=_sweep)
