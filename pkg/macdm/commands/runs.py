from __future__ import annotations

import argparse
import json
from datetime import datetime
from typing import Optional

from pydantic import BaseModel, ConfigDict

from macdm.core.exceptions import ConfigError
from macdm.models import RunStatus
from macdm.runs import get_run, list_runs

from .deps import CommandContext


# ----- Pydantic Schemas ----- #

class RunRead(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: int
    command: str
    status: RunStatus
    seed: int
    config_hash: str
    output_dir: Optional[str]
    started_at: Optional[datetime]
    wall_clock_seconds: Optional[float]


# ----- Handlers ----- #

def _require_registry(ctx: CommandContext):
    if ctx.sessions is None:
        raise ConfigError("the run registry is disabled (--no-registry)")
    return ctx.sessions


def _list(ctx: CommandContext, args: argparse.Namespace) -> int:
    rows = [RunRead.model_validate(r) for r in list_runs(_require_registry(ctx), args.limit)]
    if args.json:
        print(json.dumps([r.model_dump(mode="json") for r in rows], indent=2))
        return 0
    for r in rows:
        seconds = f"{r.wall_clock_seconds:.1f}s" if r.wall_clock_seconds is not None else "-"
        print(f"{r.id:>5}  {r.status.value:<9}  {r.command:<26}  seed={r.seed:<20}  {seconds:>9}  {r.output_dir or ''}")
    return 0


def _show(ctx: CommandContext, args: argparse.Namespace) -> int:
    detail = get_run(_require_registry(ctx), args.run_id)
    if detail is None:
        raise ConfigError(f"run {args.run_id} not found")
    print(json.dumps(detail, indent=2))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("runs", help="Inspect the run registry.")
    runs = p.add_subparsers(dest="runs_command", required=True)

    q = runs.add_parser("list", help="Most recent runs first.")
    q.add_argument("--limit", type=int, default=50)
    q.add_argument("--json", action="store_true")
    q.set_defaults(handler=_list)

    q = runs.add_parser("show", help="One run with its artifacts and manifest.")
    q.add_argument("run_id", type=int)
    q.set_defaults(handler=_show)
