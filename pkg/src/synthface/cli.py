"""Command-line entry point.

Exit codes: 0 success, 1 some frames failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .assets import AssetError, ConfigError
from .dataset import (
    DatasetJob,
    JobError,
    parse_frame_range,
    preview_frame,
    read_config,
    run_job,
    validate_config,
)

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2


def _passes(text: str) -> tuple[str, ...]:
    items = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in items if p not in ("rgb", "depth", "id")]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"passes must be a comma list of rgb, depth, id (got {text!r})")
    return items


def _frames(text: str):
    try:
        return parse_frame_range(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="synthface", description="Synthetic face dataset generator.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a dataset")
    g.add_argument("--scene", required=True, type=Path)
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--seed", type=_seed, help="override the config seed")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--frames", type=_frames, metavar="A..B", help="half-open frame range [A, B)")
    g.add_argument("--passes", type=_passes, help="comma list of rgb,depth,id")

    v = sub.add_parser("validate", help="check a config without rendering")
    v.add_argument("--scene", required=True, type=Path)

    p = sub.add_parser("preview", help="render a single frame")
    p.add_argument("--scene", required=True, type=Path)
    p.add_argument("--identity", required=True, help="identity name or index")
    p.add_argument("--frame", required=True, type=int)
    p.add_argument("--fast", action="store_true", help="few samples; geometry, depth and id unchanged")
    p.add_argument("--out", type=Path, help="output root (default: <output.directory>/preview)")
    return ap


def _report(lines):
    for line in lines:
        print(f"error: {line}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command == "validate":
        problems = validate_config(args.scene)
        if problems:
            _report(problems)
            return EXIT_INVALID
        print("OK")
        return EXIT_OK

    try:
        cfg = read_config(args.scene)
    except ConfigError as exc:
        _report(exc.violations)
        return EXIT_INVALID
    except OSError as exc:
        _report([f"cannot read {args.scene}: {exc}"])
        return EXIT_INVALID

    try:
        if args.command == "generate":
            if args.workers < 1:
                _report(["--workers must be >= 1"])
                return EXIT_INVALID
            job = DatasetJob(cfg, args.out, seed=args.seed, workers=args.workers, frames=args.frames, passes=args.passes)
            summary = run_job(job)
            print(f"{summary.frames_rendered} frames rendered, {len(summary.failures)} failed, {summary.wall_time_s:.1f} s")
            for f in summary.failures:
                print(f"failed: {f['identity']} frame {f['frame_index']}: {f['error']}", file=sys.stderr)
            return summary.exit_code
        res = preview_frame(cfg, args.identity, args.frame, fast=args.fast, out_root=args.out)
        if res.error:
            _report([res.error])
            return EXIT_PARTIAL
        for path in res.record["files"].values():
            print(path)
        return EXIT_OK
    except JobError as exc:
        _report(exc.violations)
        return EXIT_INVALID
    except AssetError as exc:
        _report([str(exc)])
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
