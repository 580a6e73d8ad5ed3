#!/usr/bin/env python3
"""Randomized concurrent workload checked against the sequential oracle.

Usage: random_suite.py [SEED ...]  (default seeds 1-5). Each seed writes
results/seed-N/random-suite.{jsonl,csv}; the exit code is non-zero if any
seed failed.
"""

import sys

from _run import run_bench

if __name__ == "__main__":
    seeds = [int(s) for s in sys.argv[1:]] or [1, 2, 3, 4, 5]
    rcs = [run_bench("random-suite", ["--seed", str(s)], out_dir=f"results/seed-{s}") for s in seeds]
    sys.exit(max(rcs))
