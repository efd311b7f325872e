"""
`repro-all`: the whole pipeline from one seed.

Each stage writes its own subdirectory (with its own run manifest) under the output root; the
merged MetricsReport lands in `<out>/report/`. Two executions with the same config produce
identical report JSON in deterministic mode.
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Tuple

from macdm.core.config import SEEDED_SECTIONS
from macdm.core.exceptions import ConfigError
from macdm.core.hashing import config_hash
from macdm.evaluation.reports import MetricsReport, ReportProvenance, write_report
from macdm.models import ArtifactKind
from macdm.networks.checkpoint import checkpoint_digest
from macdm.phantoms.enums import Label
from macdm.phantoms.storage import atomic_directory, manifest_hash
from macdm.schemas.training import ChannelWeights

from .data import phantom_gen
from .deps import CommandContext, add_common_output, output_dir
from .evaluate import EXTRACTOR_NAME, run_eval_classify, run_eval_segment, run_fid
from .sample import run_generate, run_sweep, run_translate
from .train import run_train_classifier, run_train_diffusion

logger = logging.getLogger(__name__)

REPORT_DIR = "report"
MASK_FREE = "mask-free"
DATASET_STAGES = (
    "phantoms",
    "independent",
    "translated",
    "translated-normal",
    "translated-mask-free",
    "translated-normal-mask-free",
    "generated",
)
STAGES = DATASET_STAGES + (
    "denoiser",
    "classifier",
    "denoiser-mask-free",
    "classifier-mask-free",
    "fid",
    "fid-macdm",
    "fid-mask-free",
    "eval-classify",
    "eval-segment",
    "sweep",
)


def _derived(ctx: CommandContext, **guidance) -> CommandContext:
    settings = ctx.settings.model_copy(update={"guidance": ctx.settings.guidance.model_copy(update=guidance)})
    return CommandContext(settings, ctx.sessions, ctx.argv)


def _models(ctx: CommandContext, paths: Dict[str, Path], suffix: str, overwrite: bool) -> Tuple[Path, Path]:
    denoiser = run_train_diffusion(ctx, paths["phantoms"], paths[f"denoiser{suffix}"], overwrite).path
    classifier = run_train_classifier(
        ctx, paths["phantoms"], paths[f"classifier{suffix}"], overwrite, held_out=paths["independent"]
    ).path
    return denoiser, classifier


def _translations(
    ctx: CommandContext, paths: Dict[str, Path], suffix: str, denoiser: Path, classifier: Path, overwrite: bool
) -> List[Path]:
    """Normal→CML and normal→normal translations of every normal training record."""
    outputs = []
    for target, name in ((Label.CML, f"translated{suffix}"), (Label.NORMAL, f"translated-normal{suffix}")):
        run_translate(
            _derived(ctx, target_class=target), paths["phantoms"], denoiser, classifier, paths[name],
            overwrite=overwrite,
        )
        outputs.append(paths[name])
    return outputs


def repro_all(ctx: CommandContext, root: Path, skip_sweep: bool = False, overwrite: bool = False) -> MetricsReport:
    """
    Phantoms, the mask-conditioned models and a mask-free baseline pair, their translations,
    FID (unconditional samples and translated CML against real CML), downstream classification
    with both augmented sets side by side, segmentation and the guidance sweep.
    """
    s = ctx.settings
    if root.exists() and any(root.iterdir()) and not overwrite:
        raise ConfigError(f"{root} is not empty; pass --overwrite to reuse it")
    root.mkdir(parents=True, exist_ok=True)
    paths = {name: root / name for name in STAGES}

    # Stage manifests carry no argv: they are re-run through repro-all, not individually.
    stage = CommandContext(s, ctx.sessions, [])
    baseline = CommandContext(s.with_weights(ChannelWeights.mask_free()), ctx.sessions, [])
    suffix = f"-{MASK_FREE}"

    with ctx.recorder("repro-all") as run:
        logger.info("repro-all: seed %d into %s", s.seed, root)
        phantom_gen(stage, paths["phantoms"], overwrite=overwrite)
        phantom_gen(stage, paths["independent"], shifted=True, overwrite=overwrite)
        denoiser, classifier = _models(stage, paths, "", overwrite)
        augmented = _translations(stage, paths, "", denoiser, classifier, overwrite)
        logger.info("repro-all: mask-free baseline")
        free_denoiser, free_classifier = _models(baseline, paths, suffix, overwrite)
        free_augmented = _translations(baseline, paths, suffix, free_denoiser, free_classifier, overwrite)
        run_generate(
            _derived(stage, gradient_scale=0.0),
            denoiser, None, paths["generated"], s.evaluation.fid_samples, overwrite,
        )

        reports = [
            run_fid(
                stage, paths["phantoms"], paths["generated"], paths["fid"],
                noise_baseline=True, overwrite=overwrite,
            )
        ]
        # One extractor for every FID so the values are comparable.
        extractor = paths["fid"] / EXTRACTOR_NAME
        for source, out in (("translated", "fid-macdm"), (f"translated{suffix}", f"fid{suffix}")):
            reports.append(
                run_fid(
                    stage, paths["phantoms"], paths[source], paths[out], extractor,
                    overwrite=overwrite, label=Label.CML,
                )
            )
        reports += [
            run_eval_classify(
                stage, paths["phantoms"], {"macdm": augmented, MASK_FREE: free_augmented},
                paths["eval-classify"], paths["independent"], overwrite=overwrite,
            ),
            # Mask-free samples carry the source masks, so only generated lesions can train a segmenter.
            run_eval_segment(
                stage, paths["phantoms"], paths["translated"], paths["eval-segment"], overwrite=overwrite
            ),
        ]
        merged = MetricsReport()
        for report in reports:
            merged = merged.merge(report)
        if not skip_sweep:
            sweep = run_sweep(
                _derived(stage, target_class=Label.CML),
                paths["phantoms"], denoiser, classifier, paths["sweep"], overwrite=overwrite,
            )
            merged = merged.merge(MetricsReport(sweep=sweep))

        provenance = ReportProvenance(
            seeds={"seed": s.seed, **{name: getattr(s, name).seed for name in SEEDED_SECTIONS}},
            checkpoints={
                "denoiser": checkpoint_digest(denoiser),
                "classifier": checkpoint_digest(classifier),
                f"denoiser{suffix}": checkpoint_digest(free_denoiser),
                f"classifier{suffix}": checkpoint_digest(free_classifier),
                "extractor": checkpoint_digest(extractor),
            },
            datasets={name: manifest_hash(paths[name]) for name in DATASET_STAGES},
            config_hash=config_hash(s.resolved()),
        )
        merged = merged.merge(MetricsReport(provenance=provenance))
        report_dir = root / REPORT_DIR
        atomic_directory(report_dir, lambda staging: write_report(merged, staging), overwrite)
        run.add_output("report", ArtifactKind.REPORT, report_dir / "metrics.json")
        run.finish(report_dir)
    return merged


def _repro_all(ctx: CommandContext, args: argparse.Namespace) -> int:
    root = output_dir(ctx, args, "repro")
    repro_all(ctx, root, args.skip_sweep, args.overwrite)
    print(root / REPORT_DIR / "metrics.json")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("repro-all", help="Run the full pipeline with pinned seeds.")
    add_common_output(p)
    p.add_argument("--skip-sweep", action="store_true", help="Leave out the guidance sweep.")
    p.set_defaults(handler=_repro_all)
