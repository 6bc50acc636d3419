"""``fxprobe`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from fxprobe import pipeline
from fxprobe.config import load_config
from fxprobe.errors import FxProbeError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fxprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("render", "synthesise or slice sources and render the ten effect classes"),
        ("encode", "embed every rendered clip"),
        ("project", "3-component PCA projection CSV"),
        ("probe", "train and evaluate the 10-way linear probe"),
        ("mask", "dimension-masking sweep"),
        ("sweep", "effect parameter sweeps and trajectory metrics"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--mode", choices=["timeavg", "flatten"], default="timeavg")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes for per-clip stages")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args: argparse.Namespace) -> str:
    cfg = load_config(args.config, args.out)
    jobs = max(1, args.jobs)
    if args.command == "render":
        m = pipeline.cmd_render(cfg, jobs)
        return f"rendered {len(m.entries)} clips -> {cfg.output_dir / 'manifest.json'}"
    if args.command == "encode":
        return f"embeddings in {pipeline.cmd_encode(cfg, jobs)}"
    if args.command == "project":
        return str(pipeline.cmd_project(cfg, args.mode))
    if args.command == "probe":
        return str(pipeline.cmd_probe(cfg, args.mode))
    if args.command == "mask":
        return str(pipeline.cmd_mask(cfg, args.mode, jobs))
    return str(pipeline.cmd_sweep(cfg, jobs))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        print(run(args))
    except ValidationError as exc:
        print(f"fxprobe: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FxProbeError, OSError) as exc:
        print(f"fxprobe: {exc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
