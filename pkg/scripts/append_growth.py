#!/usr/bin/env python3
"""Single-client append throughput and metadata-node count as the blob grows.

Extra arguments go to ``vblob bench append-growth`` (e.g. ``--pages 256``).
Writes results/append-growth.{jsonl,csv}.
"""

import sys

from _run import run_bench

if __name__ == "__main__":
    sys.exit(run_bench("append-growth", sys.argv[1:]))
