"""Run every benchmark table into one output directory.

    python3 scripts/run_benchmarks.py --out results --seed 0
"""

import argparse
import sys
from pathlib import Path

from gaze_aware.cli import main

TABLES = ("gradcheck", "denoise-bench", "recalibrate-bench", "eval-saliency", "awareness-bench", "ablate")


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--only", nargs="*", choices=TABLES, help="subset of tables (default: all)")
    args = p.parse_args(argv)
    for cmd in args.only or TABLES:
        extra = ["--config", args.config] if args.config else []
        print(f"== {cmd}", file=sys.stderr)
        code = main([cmd, "--seed", str(args.seed), "--out", str(Path(args.out) / cmd), *extra])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
