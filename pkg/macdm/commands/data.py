from __future__ import annotations

import argparse
import logging
from pathlib import Path

from macdm.models import ArtifactKind
from macdm.phantoms.folds import assign_folds
from macdm.phantoms.generator import DEFAULT_STYLE, PhantomStyle, generate_corpus
from macdm.phantoms.storage import save_dataset

from .deps import CommandContext, add_common_output, output_dir

logger = logging.getLogger(__name__)

INDEPENDENT_PREFIX = "ind-"


def phantom_gen(ctx: CommandContext, out: Path, shifted: bool = False, overwrite: bool = False) -> Path:
    """
    Generate and save a phantom dataset.

    The default corpus gets stratified folds; `shifted` produces the independent test corpus
    (shifted acquisition style, `ind-` ids, no folds).
    """
    cfg = ctx.settings.phantoms
    with ctx.recorder("phantom-gen") as run:
        if shifted:
            corpus = generate_corpus(
                cfg.independent_normal,
                cfg.independent_cml,
                cfg.size,
                ctx.settings.seed,
                style=PhantomStyle.shifted(),
                prefix=INDEPENDENT_PREFIX,
            )
        else:
            corpus = generate_corpus(cfg.n_normal, cfg.n_cml, cfg.size, ctx.settings.seed, style=DEFAULT_STYLE)
            corpus = assign_folds(corpus, cfg.folds, ctx.settings.seed)
        save_dataset(corpus, out, lossless=cfg.lossless, overwrite=overwrite)
        run.add_output("dataset", ArtifactKind.DATASET, out)
        run.finish(out)
    return out


def _phantom_gen(ctx: CommandContext, args: argparse.Namespace) -> int:
    out = output_dir(ctx, args, "phantoms-independent" if args.shifted else "phantoms")
    phantom_gen(ctx, out, shifted=args.shifted, overwrite=args.overwrite)
    print(out)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("phantom-gen", help="Generate a procedural phantom dataset.")
    add_common_output(p)
    p.add_argument("--n-normal", dest="phantoms.n_normal", type=int, default=None)
    p.add_argument("--n-cml", dest="phantoms.n_cml", type=int, default=None)
    p.add_argument("--size", dest="phantoms.size", type=int, default=None, help="Image side length.")
    p.add_argument("--folds", dest="phantoms.folds", type=int, default=None)
    p.add_argument(
        "--lossless", dest="phantoms.lossless", action="store_const", const=True, default=None,
        help="Also store float32 .npy images.",
    )
    p.add_argument(
        "--shifted", action="store_true",
        help="Independent test corpus with shifted contrast/noise (uses phantoms.independent_* counts).",
    )
    p.set_defaults(handler=_phantom_gen)
