"""Command-line entry point: ``kdforest {build-bench,knn-bench,forest-bench,verify}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import (
    BenchSpec,
    Distribution,
    Scenario,
    bench_build,
    bench_forest,
    bench_knn,
    emit_csv,
)
from .kdtree import SplitPolicy
from .verify import verify

MODES = ("exact", "path-descent", "single-tree", "exact-forest")

DEFAULT_SIZES = {
    "build-bench": "1000,2000,3000,4000,5000,6000,7000,8000,9000,10000,11000,12000",
    "knn-bench": "125,250,500,1000,2000,4000,8000,16000,32000,64000",
    "forest-bench": "4096",
    "verify": "1000",
}
DEFAULT_REPS = {"build-bench": 3, "knn-bench": 100, "forest-bench": 50, "verify": 100}


def _sizes(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdforest", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("build-bench", "total build time and rebuild work per tree size"),
        ("knn-bench", "kNN query time and node visits per tree size"),
        ("forest-bench", "single tree against an interval forest"),
        ("verify", "oracle equivalence, allocation audit and invariant sweeps"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--sizes", type=_sizes, default=None, help="comma list of node counts")
        p.add_argument("--dims", type=int, default=None, help="dimensions D")
        p.add_argument("--k", type=int, default=None, help="neighbor count")
        p.add_argument("--threshold", type=float, default=2.0, help="rebuild threshold b")
        p.add_argument("--policy", choices=[s.value for s in SplitPolicy], default=None)
        p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--rebuild", choices=("on", "off", "both"), default="on")
        p.add_argument("--dist", choices=[d.value for d in Distribution], default="uniform")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--reps", type=int, default=DEFAULT_REPS[name])
        p.add_argument("--out", type=Path, default=None, help="CSV output path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    cmd = args.command
    sizes = args.sizes if args.sizes is not None else _sizes(DEFAULT_SIZES[cmd])
    if not sizes:
        parser.error("--sizes must name at least one size")
    if args.seed < 0 or args.seed >= 1 << 64:
        parser.error("--seed must fit in an unsigned 64-bit integer")
    scenario = {"build-bench": Scenario.BUILD, "knn-bench": Scenario.KNN,
                "forest-bench": Scenario.FOREST, "verify": Scenario.VERIFY}[cmd]
    try:
        spec = BenchSpec(
            scenario=scenario,
            sizes=sizes,
            dims=args.dims or 3,
            k=args.k or 30,
            threshold=args.threshold,
            policy=SplitPolicy(args.policy or SplitPolicy.NODE_SPLIT.value),
            mode=args.mode or ("exact-forest" if cmd == "forest-bench" else "exact"),
            rebuild=args.rebuild,
            distribution=Distribution(args.dist),
            seed=args.seed,
            repetitions=args.reps,
            out=args.out,
        )
    except ValueError as exc:
        parser.error(str(exc))

    if scenario is Scenario.VERIFY:
        ok, records, _ = verify(
            spec,
            sys.stdout,
            dims_list=(args.dims,) if args.dims else None,
            ks=(args.k,) if args.k else None,
            policies=(SplitPolicy(args.policy),) if args.policy else None,
        )
        if args.out is not None:
            emit_csv(records, args.out)
        return 0 if ok else 1

    if spec.mode in ("single-tree", "exact-forest") and scenario is not Scenario.FOREST:
        parser.error(f"--mode {spec.mode} applies to forest-bench only")
    runner = {Scenario.BUILD: bench_build, Scenario.KNN: bench_knn,
              Scenario.FOREST: bench_forest}[scenario]
    records = runner(spec)
    emit_csv(records, args.out if args.out is not None else sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
