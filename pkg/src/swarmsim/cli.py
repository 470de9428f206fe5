"""Command line entry point: ``swarmsim run`` and ``swarmsim sweep``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .content import parse_size
from .harness import (
    SWEEP_HEADER,
    ConfigError,
    ExperimentError,
    Scenario,
    SweepGrid,
    check_writable,
    emit_outputs,
    load_config,
    sweep,
)
from .protocol import OrderMode


def _sizes(text: str) -> tuple[int, ...]:
    try:
        return tuple(parse_size(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmsim", description="Simulate BitTorrent swarms across piece sizes."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value scenario file")
    common.add_argument("--subpiece-size", type=parse_size, metavar="SIZE")
    common.add_argument("--runs", type=int)
    common.add_argument("--seed", type=int, help="base rng seed (run i uses seed + i)")
    common.add_argument("--order-mode", choices=[m.value for m in OrderMode])
    common.add_argument("--tcp-model", choices=["off", "ramp"])
    common.add_argument("--delay-ms", type=float, help="one-way delay in milliseconds")
    common.add_argument("--workers", type=int, default=1, help="parallel runs (default 1)")
    common.add_argument("--out-dir", default="out", metavar="DIR")
    common.add_argument("--no-charts", action="store_true", help="skip SVG output")

    p = sub.add_parser("run", parents=[common], help="run a single scenario")
    p.add_argument("--content-size", type=parse_size, metavar="SIZE")
    p.add_argument("--piece-size", type=parse_size, metavar="SIZE")

    p = sub.add_parser("sweep", parents=[common], help="run a content x piece size grid")
    p.add_argument(
        "--content-size", type=_sizes, metavar="SIZES", help="comma-separated, e.g. 5MB,100MB"
    )
    p.add_argument(
        "--piece-size", type=_sizes, metavar="SIZES", help="comma-separated, e.g. 16kB,256kB"
    )
    return parser


def _apply_overrides(s: Scenario, args: argparse.Namespace) -> Scenario:
    changes = {}
    if args.subpiece_size is not None:
        changes["subpiece_size"] = args.subpiece_size
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.order_mode is not None:
        changes["order_mode"] = OrderMode(args.order_mode)
    link = {}
    if args.tcp_model is not None:
        link["tcp_model"] = args.tcp_model
    if args.delay_ms is not None:
        link["one_way_delay"] = args.delay_ms / 1000.0
    if link:
        try:
            changes["link"] = replace(s.link, **link)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    return replace(s, **changes) if changes else s


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        if args.config:
            scenario, grid = load_config(args.config)
        else:
            scenario, grid = Scenario(), SweepGrid()
        scenario = _apply_overrides(scenario, args)
        if args.command == "run":
            grid = SweepGrid(
                (args.content_size or scenario.content_size,),
                (args.piece_size or scenario.piece_size,),
            )
        else:
            grid = SweepGrid(
                args.content_size or grid.content_sizes, args.piece_size or grid.piece_sizes
            )
        check_writable(args.out_dir)

        def progress(s, row):
            logging.info("%s: %s", s.label(), ",".join(row.cells()))

        result = sweep(grid, scenario, workers=args.workers, progress=progress)
        emit_outputs(result, args.out_dir, charts=not args.no_charts)
    except (ConfigError, ExperimentError, OSError) as e:
        print(f"swarmsim: error: {e}", file=sys.stderr)
        return 2
    print(",".join(SWEEP_HEADER))
    for row in result.rows:
        print(",".join(row.cells()))
    failed = [r for r in result.rows if r.status.startswith("error")]
    if failed:
        print(f"swarmsim: {len(failed)} scenario(s) failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
