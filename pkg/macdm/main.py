"""
Command-line entry point: `python -m macdm <subcommand> ...`.

Exit codes: 0 success, 1 other toolkit error, 2 configuration, 3 numeric failure, 4 IO.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from macdm import __version__
from macdm.commands import MODULES
from macdm.commands.deps import CommandContext
from macdm.core.config import Settings, load_settings
from macdm.core.exceptions import (
    CheckpointError,
    CheckpointMismatchError,
    ConfigError,
    DatasetError,
    MacdmError,
    NumericalError,
    TimestepError,
    TrainingDivergedError,
)
from macdm.core.logging import configure_logging
from macdm.core.seeding import seed_everything
from macdm.db import init_db, make_engine, make_session_factory
from macdm.runs import RunManifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="macdm",
        description="Mask-conditioned diffusion augmentation on procedural phantoms.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, default=None, help="TOML config file.")
    parser.add_argument(
        "--set", dest="set_overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override any config key with dot notation, e.g. diffusion.timesteps=100. Repeatable.",
    )
    parser.add_argument("--seed", dest="seed", type=int, default=None, help="Run seed.")
    parser.add_argument("--device", dest="device", default=None)
    parser.add_argument("--log-level", dest="log_level", default=None)
    parser.add_argument("--no-progress", dest="progress", action="store_const", const=False, default=None)
    parser.add_argument("--database-url", dest="database_url", default=None)
    parser.add_argument("--no-registry", action="store_true", help="Do not record runs in the registry.")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in MODULES:
        module.register(subparsers)
    p = subparsers.add_parser("rerun", help="Re-execute a run from its run_manifest.json.")
    p.add_argument("manifest", type=Path, help="run_manifest.json or the directory holding it.")
    return parser


def _assign(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def parse_set(items: Sequence[str]) -> Dict[str, Any]:
    """`a.b=v` pairs as a nested dict; comma-separated values become lists, pydantic coerces the rest."""
    tree: Dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        value: Any = [part.strip() for part in raw.split(",")] if "," in raw else raw
        _assign(tree, key.strip(), value)
    return tree


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags whose dest names a config key (optionally dotted) and were given on the command line."""
    tree = parse_set(args.set_overrides)
    flags: Dict[str, Any] = {}
    for dest, value in vars(args).items():
        if value is None or dest.split(".")[0] not in Settings.model_fields:
            continue
        _assign(flags, dest, value)
    return _deep_merge(tree, flags)


def resolve_settings(args: argparse.Namespace) -> Settings:
    return load_settings(args.config, **cli_overrides(args))


def _report_validation(exc: ValidationError) -> None:
    print(f"configuration invalid ({exc.error_count()} error(s)):", file=sys.stderr)
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        print(f"  {location}: {error['msg']}", file=sys.stderr)


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, CheckpointMismatchError, TimestepError, ValidationError)):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    if isinstance(exc, (DatasetError, CheckpointError, OSError)):
        return EXIT_IO
    return EXIT_ERROR


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    recorded_argv = argv

    try:
        if args.command == "rerun":
            manifest = RunManifest.read(args.manifest)
            if not manifest.argv:
                raise ConfigError(f"{args.manifest} was written by a pipeline stage; rerun the pipeline instead")
            recorded_argv = manifest.argv
            args = parser.parse_args(manifest.argv)
            if args.command == "rerun":
                raise ConfigError("a rerun manifest cannot point at another rerun")
            # The recorded config already folds in file, env and flags.
            settings = Settings(**manifest.config)
        else:
            settings = resolve_settings(args)
    except ValidationError as exc:
        _report_validation(exc)
        return EXIT_CONFIG
    except MacdmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)

    configure_logging(settings.log_level)
    seed_everything(settings.seed, settings.deterministic)

    sessions = None
    if not args.no_registry:
        engine = make_engine(settings.database_url)
        init_db(engine)
        sessions = make_session_factory(engine)

    ctx = CommandContext(settings=settings, sessions=sessions, argv=recorded_argv)
    try:
        return args.handler(ctx, args) or EXIT_OK
    except TrainingDivergedError as exc:
        logger.error("training diverged: %s", exc)
        if exc.last_good_checkpoint is not None:
            logger.error("last good checkpoint: %s", exc.last_good_checkpoint)
        return EXIT_NUMERIC
    except ValidationError as exc:
        _report_validation(exc)
        return EXIT_CONFIG
    except (MacdmError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
