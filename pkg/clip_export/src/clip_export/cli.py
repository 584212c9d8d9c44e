"""Command-line entry point. Every subcommand prints a one-line JSON
summary on stdout; human-readable logging goes to stderr. Exit codes:
0 success, 1 usage/configuration error, 2 input file or directory error.
All outputs are deterministic for fixed inputs and model id.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ExportError, UsageError
from .exporter import (
    ExportJob,
    export_coco_captions,
    export_image_embeddings,
    export_text_embeddings,
)

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit."""

    def error(self, message: str):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="clip-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    text = sub.add_parser("text", help="captions file -> EMB1 embeddings")
    text.add_argument("--model", required=True, help="encoder id (lexhash-<dim> or hf:<dir>)")
    text.add_argument("--in", dest="input", required=True, help="UTF-8 captions file, one per line")
    text.add_argument("--out", required=True, help="EMB1 output path")
    text.add_argument("--no-normalize", action="store_true", help="keep raw (non-unit) rows")
    text.add_argument("--batch", type=int, default=64, help="encoding batch size")

    image = sub.add_parser("image", help="image directory -> EMB1 embeddings")
    image.add_argument("--model", required=True, help="encoder id (lexhash-<dim> or hf:<dir>)")
    image.add_argument("--in", dest="input", required=True, help="directory of images")
    image.add_argument("--out", required=True, help="EMB1 output path")
    image.add_argument("--no-normalize", action="store_true", help="keep raw (non-unit) rows")
    image.add_argument("--batch", type=int, default=64, help="encoding batch size")

    coco = sub.add_parser("coco", help="annotation JSON -> captions .txt + lexicon .txt")
    coco.add_argument("--in", dest="input", required=True, help="caption annotation JSON")
    coco.add_argument("--out", required=True, help="captions output path, one per line")
    coco.add_argument(
        "--lexicon-out",
        help="lexicon output path (default: --out with a .lexicon.txt suffix)",
    )
    coco.add_argument(
        "--split",
        default="train",
        help="split to take from consolidated files (train folds in restval); "
        "ignored for single-split annotation files",
    )
    return parser


def _job(args: argparse.Namespace) -> ExportJob:
    return ExportJob(
        model_id=args.model,
        input=args.input,
        output=args.out,
        normalize=not args.no_normalize,
        batch=args.batch,
    )


def _cmd_text(args: argparse.Namespace) -> dict:
    result = export_text_embeddings(_job(args))
    return {
        "command": "text",
        "count": result.count,
        "dim": result.dim,
        "normalized": not args.no_normalize,
        "out": str(result.output),
    }


def _cmd_image(args: argparse.Namespace) -> dict:
    result = export_image_embeddings(_job(args))
    return {
        "command": "image",
        "count": result.count,
        "dim": result.dim,
        "normalized": not args.no_normalize,
        "skipped": list(result.skipped),
        "out": str(result.output),
    }


def _cmd_coco(args: argparse.Namespace) -> dict:
    lexicon_out = args.lexicon_out
    if lexicon_out is None:
        lexicon_out = str(Path(args.out).with_suffix(".lexicon.txt"))
    result = export_coco_captions(args.input, args.split, args.out, lexicon_out)
    return {
        "command": "coco",
        "layout": result.layout,
        "captions": result.caption_count,
        "lexicon_entries": result.lexicon_count,
        "out": str(result.captions_out),
        "lexicon_out": str(result.lexicon_out),
    }


_HANDLERS = {
    "text": _cmd_text,
    "image": _cmd_image,
    "coco": _cmd_coco,
}


def run(argv: list[str]) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=os.environ.get("CLIP_EXPORT_LOG", "WARNING")
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        summary = _HANDLERS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(f"missing file: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 2
    except ExportError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
