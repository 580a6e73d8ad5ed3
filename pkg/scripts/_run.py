"""Shared helper: run one ``vblob bench`` subcommand and keep its output."""

import contextlib
import io
import sys
from pathlib import Path

from vblob.bench.cli import main


def run_bench(name, extra, out_dir="results"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        rc = main(["bench", name, "--csv", str(out / f"{name}.csv"), *extra])
    (out / f"{name}.jsonl").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    print(f"# wrote {out / name}.jsonl and {out / name}.csv", file=sys.stderr)
    return rc
