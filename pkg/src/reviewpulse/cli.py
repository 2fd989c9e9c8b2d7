"""Command-line entry point: one subcommand per stage plus ``pipeline``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ReviewPulseError, StageError
from .pipeline import STAGES, Run, RunConfig, adoption_summary, read_jsonl, run_pipeline, stage_function, write_json
from .report import build_bundle, emit_report

FORMATS = ("markdown", "csv", "json")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reviewpulse", description="Mine and analyse review comments on pull requests.")
    p.add_argument("--config", type=Path, help="key = value run configuration file")
    p.add_argument("--fixtures", type=Path, help="fixture directory for recorded API responses")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--record", dest="mode", action="store_const", const="record",
                      help="query the API and store responses (needs REVIEWPULSE_TOKEN)")
    mode.add_argument("--replay", dest="mode", action="store_const", const="replay",
                      help="answer every request from fixtures (default)")
    p.add_argument("--seed", type=int, help="seed for sampling, topic model and forest")
    p.add_argument("--out", type=Path, help="run directory for artifacts and reports")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES[:-1]:
        sub.add_parser(name, help=f"run the {name} stage")
    for name in ("report", "pipeline"):
        sp = sub.add_parser(name, help="render reports" if name == "report" else "run every stage, then report")
        sp.add_argument("--format", action="append", choices=FORMATS, dest="formats",
                        help="output format; repeatable (default: all)")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in (("fixtures", args.fixtures), ("mode", args.mode), ("seed", args.seed),
                                   ("out", args.out)) if v is not None}
    return dataclasses.replace(cfg, **overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"reviewpulse: [config] {exc}", file=sys.stderr)
        return 2
    formats = tuple(getattr(args, "formats", None) or FORMATS)
    try:
        if args.command == "pipeline":
            run_pipeline(cfg, formats=formats)
            return 0
        run = Run(cfg)
        if args.command == "report":
            try:
                bundle = build_bundle(run)
                for fmt in formats:
                    emit_report(bundle, fmt, run.out)
            except Exception as exc:
                raise StageError("report", exc) from exc
            return 0
        result = stage_function(args.command)(run)
        if args.command == "discover":
            comments = run.path("comments.jsonl")
            summary = adoption_summary(result, run.watch, cfg.maturity_threshold,
                                       read_jsonl(comments) if comments.exists() else ())
            write_json(run.path("adoption.json"), summary)
            json.dump(summary, sys.stdout, indent=1, sort_keys=True)
            sys.stdout.write("\n")
        return 0
    except StageError as exc:
        print(f"reviewpulse: {exc}", file=sys.stderr)
        return 1
    except ReviewPulseError as exc:
        print(f"reviewpulse: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
