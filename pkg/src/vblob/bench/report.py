"""Machine-readable run reports: JSON lines plus a CSV of plotted series."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class RunReport:
    name: str
    params: dict = field(default_factory=dict)
    samples: list[dict] = field(default_factory=list)
    node_counts: list[int] = field(default_factory=list)
    provider_pages: dict[str, int] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        out = [json.dumps({"event": "run", "name": self.name, "params": self.params, "elapsed": round(self.elapsed, 3)})]
        for s in self.samples:
            out.append(json.dumps({"event": "sample", **s}))
        if self.node_counts:
            out.append(json.dumps({"event": "node_counts", "counts": self.node_counts}))
        if self.provider_pages:
            out.append(json.dumps({"event": "provider_pages", "pages": self.provider_pages}))
        for name, ok in self.checks.items():
            out.append(json.dumps({"event": "check", "name": name, "pass": ok}))
        out.append(json.dumps({"event": "summary", **self.summary, "passed": self.passed}))
        return out

    def write_csv(self, path) -> None:
        if not self.samples:
            return
        keys = list(self.samples[0])
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(self.samples)

    def to_dict(self) -> dict:
        return asdict(self)
