"""Structured check results and deterministic JSON reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if hasattr(obj, "item"):  # numpy scalars
        return _jsonable(obj.item())
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    return obj


@dataclass
class CheckResult:
    name: str
    verdict: str  # "PASS" | "FAIL"
    inequality: str  # the inequality being tested, verbatim
    margin_min: float
    tolerance: float
    values: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    empirical_constants: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    series: dict = field(default_factory=dict)  # name -> {"columns": [...], "rows": [[...]]}

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "name": self.name,
                "verdict": self.verdict,
                "inequality": self.inequality,
                "margin_min": self.margin_min,
                "tolerance": self.tolerance,
                "values": self.values,
                "sweep": self.sweep,
                "empirical_constants": self.empirical_constants,
                "runtime_s": self.runtime_s,
            }
        )


@dataclass
class Report:
    manifest: dict
    tool_version: str
    seed: int
    timestamp: str
    checks: list

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self, include_volatile: bool = True) -> dict:
        d = {
            "manifest": _jsonable(self.manifest),
            "tool_version": self.tool_version,
            "seed": self.seed,
            "checks": [c.to_dict() for c in self.checks],
            "all_pass": self.all_pass,
        }
        if include_volatile:
            d["timestamp"] = self.timestamp
        else:
            for c in d["checks"]:
                c.pop("runtime_s", None)
        return d

    def to_json(self, include_volatile: bool = True) -> str:
        return json.dumps(self.to_dict(include_volatile), sort_keys=True, indent=2) + "\n"


def canonical_json(report: Report) -> str:
    """Deterministic serialization: timestamp and runtimes stripped."""
    return report.to_json(include_volatile=False)
