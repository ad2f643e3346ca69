"""Command-line entry point: ``grndsum <stage> --workdir DIR [--config FILE] [--section.key VALUE ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, apply_overrides, load_config
from .corpusio import ArtifactError
from .pipeline import STAGES, run_pipeline

_HELP = {
    "synth": "write a seeded synthetic corpus to episodes.jsonl",
    "filter": "clean reference summaries and drop unusable episodes (filtered.jsonl, filter_report.jsonl)",
    "align": "label gold grounding chunks, switch points and chunk importance (alignments.jsonl)",
    "pretrain": "pretrain the chunk-importance scorer (pretrained.ckpt.json)",
    "train": "train the grounded model (model.ckpt.json)",
    "generate": "decode grounded summaries (grounded.jsonl, selection.jsonl)",
    "eval": "score grounded summaries against the references (metrics.json)",
    "render-html": "write the static grounding report (report/)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grndsum",
        description="Grounded abstractive summarization pipeline.",
        epilog="Any config field can be set with --<section>.<field> VALUE, e.g. --model.alpha 1.0 "
               "or --chunking.unit tokens (--unit/--window/--stride are accepted as short forms). "
               "Sections: chunking, alignment, filter, model, decode, synth, train.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in STAGES:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--workdir", required=True, type=Path, help="directory holding the stage artifacts")
        p.add_argument("--config", help="JSON run config with one object per section")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
        if name in ("generate", "eval", "render-html"):
            p.add_argument("--episodes", type=Path,
                           help="episode JSONL to use instead of the work directory's corpus")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), extra)
        if args.print_config:
            print(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
            return 0
        paths = run_pipeline(args.command, cfg, args.workdir, getattr(args, "episodes", None))
    except (ConfigError, ArtifactError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"grndsum {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
