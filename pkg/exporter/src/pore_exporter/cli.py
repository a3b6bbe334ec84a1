"""Command-line front end for the trace exporter.

Exit codes: 0 success, 1 usage error, 2 unreadable model/dataset or
export failure.  The layer to hook is a required flag: which layer best
reflects content relevance is model-specific, so there is no silent
default to get wrong.
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportConfig, ExportError, export_traces


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_range(text: str) -> tuple[int, int]:
    try:
        start, end = (int(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"--visual-range expects START:END, got {text!r}") from None
    if start < 0 or end <= start:
        raise UsageError(f"--visual-range [{start}, {end}) is empty or negative")
    return start, end


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise UsageError(f"--grid dimensions must be >= 1, got {text!r}")
    return rows, cols


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pore-export", description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, help="model directory or hub id")
    parser.add_argument("--layer", required=True, type=int,
                        help="decoder layer to hook (required; no default)")
    parser.add_argument("--dataset", required=True, help="JSONL dataset of samples")
    parser.add_argument("--out", required=True, help="trace file to write")
    parser.add_argument("--visual-range", default=None, metavar="START:END",
                        help="visual token span for input_ids records")
    parser.add_argument("--grid", default=None, metavar="ROWSxCOLS",
                        help="patch grid to stamp on every record")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--quiet", action="store_true")
    return parser


def entrypoint(argv=None) -> int:
    import transformers

    transformers.utils.logging.set_verbosity_error()
    transformers.utils.logging.disable_progress_bar()
    try:
        args = build_parser().parse_args(argv)
        try:
            cfg = ExportConfig(
                model=args.model,
                layer=args.layer,
                dataset=args.dataset,
                out=args.out,
                visual_range=_parse_range(args.visual_range) if args.visual_range else None,
                grid=_parse_grid(args.grid) if args.grid else None,
                device=args.device,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        result = export_traces(cfg)
        if not args.quiet:
            where = f" ({result.errors_path})" if result.errors_path else ""
            print(f"exported {result.exported} traces, {result.errors} errors{where} -> {result.out}")
        return 0
    except UsageError as exc:
        print(f"pore-export: usage error: {exc}", file=sys.stderr)
        return 1
    except (ExportError, OSError) as exc:
        print(f"pore-export: error: {exc}", file=sys.stderr)
        return 2
