"""Command-line front end: ``mdkk run <script>`` and ``mdkk bench ...``."""

from __future__ import annotations

import argparse
import sys

from .bench import bench_saturation
from .registry import RegistryError
from .script import ParseError
from .simulation import RunConfig, RunError, run_script


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdkk", description="Miniature molecular-dynamics engine")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an input script")
    run.add_argument("script", help="path to the input script")
    run.add_argument("--ranks", type=int, default=1, help="logical rank count")
    run.add_argument("--strategy", default="serial",
                     choices=("serial", "duplicate", "atomic"),
                     help="scatter deconfliction strategy")
    run.add_argument("--mode", choices=("atom", "neighbor"), default=None,
                     help="override the style's parallel mode")
    run.add_argument("--list-style", choices=("full", "half"), default=None,
                     help="neighbor list style (styles may pin their own)")
    run.add_argument("--no-newton", action="store_true",
                     help="recompute ghost contributions instead of communicating")
    run.add_argument("--skin", type=float, default=0.3, help="neighbor skin")
    run.add_argument("--workers", type=int, default=None,
                     help="logical worker count (defaults to MDKK_THREADS)")
    run.add_argument("--batch-u", type=int, default=None)
    run.add_argument("--batch-y", type=int, default=None)
    run.add_argument("--tile-v", type=int, default=None)
    run.add_argument("--layout", choices=("a", "b"), default=None)
    run.add_argument("--seed", type=int, default=None,
                     help="override velocity seeds in the script")

    bench = sub.add_parser("bench", help="measure atom-steps/s saturation")
    bench.add_argument("potential", choices=("lj", "snap"))
    bench.add_argument("--sizes", default="1000,8000,64000",
                       help="comma-separated target atom counts")
    bench.add_argument("--reps", type=int, default=3)
    bench.add_argument("--out", default=None, help="CSV output path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            with open(args.script) as fh:
                text = fh.read()
            config = RunConfig(
                n_ranks=args.ranks, strategy=args.strategy, mode=args.mode,
                list_style=args.list_style, newton=not args.no_newton,
                skin=args.skin, workers=args.workers, batch_u=args.batch_u,
                batch_y=args.batch_y, tile_v=args.tile_v, layout=args.layout,
                rng_seed=args.seed)
            run_script(text, config)
        else:
            sizes = [int(s) for s in args.sizes.split(",") if s]
            result = bench_saturation(args.potential, sizes, reps=args.reps,
                                      csv_path=args.out)
            print("n_atoms,atom_steps_per_second")
            for n, rate in result.rows:
                print(f"{n},{rate:.6g}")
    except (ParseError, RegistryError, RunError, OSError, ValueError) as exc:
        print(f"mdkk: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
