#!/usr/bin/env python3
"""Per-reader and aggregate read throughput with 1 vs many concurrent readers.

Extra arguments go to ``vblob bench read-concurrency`` (e.g. ``--readers 8``).
Writes results/read-concurrency.{jsonl,csv}.
"""

import sys

from _run import run_bench

if __name__ == "__main__":
    sys.exit(run_bench("read-concurrency", sys.argv[1:]))
