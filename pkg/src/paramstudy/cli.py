"""``paramstudy`` command line.

Exit codes: 0 success, 2 bad configuration or input, 3 execution failure
(partial results are still written).
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Sequence

from . import study as st
from .errors import ConfigError, ShapeError, UndefinedMetricError
from .spatial import METRICS, extract_objects, read_pgm

EXIT_OK, EXIT_CONFIG, EXIT_EXEC = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paramstudy", description="Parameter studies over image-analysis workflows.")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="study config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, help="simulated worker count")
    common.add_argument("--scheduler", choices=["fcfs", "dlas"])
    common.add_argument("--batch", type=int, help="design points per compact graph")
    common.add_argument("--out", help="output directory")
    common.add_argument("--metric", choices=sorted(METRICS))

    sub.add_parser("moat", parents=[common], help="Morris screening")
    sub.add_parser("correlate", parents=[common], help="simple and partial (rank) correlations")
    sub.add_parser("vbd", parents=[common], help="Sobol first and total order indices")
    sub.add_parser("tune", parents=[common], help="search for the best parameter set")
    sub.add_parser("run", parents=[common], help="evaluate explicit points or a design")

    cmp_ = sub.add_parser("compare", help="compare two PGM masks")
    cmp_.add_argument("mask_a")
    cmp_.add_argument("mask_b")
    cmp_.add_argument("--metric", choices=sorted(METRICS), default="dice")
    cmp_.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    cmp_.add_argument("--csv", action="store_true", help="print a mask_a,mask_b,metric,value row")
    return ap


COMMANDS = {
    "moat": st.run_moat,
    "correlate": st.run_correlate,
    "vbd": st.run_vbd,
    "tune": st.run_tune,
    "run": st.run_points,
}


def _compare(args: argparse.Namespace) -> int:
    a = extract_objects(read_pgm(args.mask_a), args.connectivity)
    b = extract_objects(read_pgm(args.mask_b), args.connectivity)
    value = METRICS[args.metric](a, b).value
    if args.csv:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["mask_a", "mask_b", "metric", "value"])
        w.writerow([args.mask_a, args.mask_b, args.metric, f"{value:.6f}"])
    else:
        print(f"{value:.6f}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "compare":
            return _compare(args)
        cfg = st.load_config(args.config)
        study = st.Study.from_config(
            cfg,
            base_dir=Path(args.config).parent,
            seed=args.seed,
            workers=args.workers,
            scheduler=args.scheduler,
            batch=args.batch,
            out=args.out,
            metric=args.metric,
        )
        COMMANDS[args.command](study)
        print(f"results written to {study.out}")
        return EXIT_OK
    except (ConfigError, ShapeError, UndefinedMetricError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except st.ExecutionFailed as exc:
        print(f"execution failed: {exc}", file=sys.stderr)
        return EXIT_EXEC


if __name__ == "__main__":
    sys.exit(main())
