"""Verification reports: checks, JSON/CSV emission and exit codes."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

PASS, FAIL, NA = "pass", "fail", "not-applicable"
STATUSES = (PASS, FAIL, NA)
CHECK_FIELDS = ("name", "value", "threshold", "tol_disc", "status", "note")
TOP_KEYS = ("scenario", "side", "checks", "fitted", "provenance")


def _num_out(v):
    """JSON-safe float: non-finite values become strings."""
    if v is None:
        return None
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


def _num_in(v):
    if v is None or v == "":
        return None
    return float(v)


@dataclass
class Check:
    name: str
    value: float | None
    threshold: float | None
    tol_disc: float
    status: str
    note: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.tol_disc is None:
            raise ValueError(f"check {self.name!r} carries no tolerance")

    @classmethod
    def at_least(cls, name, value, threshold, tol, note=""):
        """value >= threshold - tol."""
        return cls(name, value, threshold, tol, PASS if value >= threshold - tol else FAIL, note)

    @classmethod
    def at_most(cls, name, value, threshold, tol, note=""):
        """value <= threshold + tol."""
        return cls(name, value, threshold, tol, PASS if value <= threshold + tol else FAIL, note)

    @classmethod
    def near(cls, name, value, target, tol, note=""):
        """|value - target| <= tol."""
        return cls(name, value, target, tol, PASS if abs(value - target) <= tol else FAIL, note)

    @classmethod
    def not_applicable(cls, name, reason, value=None):
        return cls(name, value, None, 0.0, NA, reason)

    @classmethod
    def flag(cls, name, ok: bool, note=""):
        return cls(name, 1.0 if ok else 0.0, 1.0, 0.0, PASS if ok else FAIL, note)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": _num_out(self.value), "threshold": _num_out(self.threshold),
                "tol_disc": _num_out(self.tol_disc), "status": self.status, "note": self.note}

    @classmethod
    def from_dict(cls, d: dict) -> "Check":
        return cls(d["name"], _num_in(d.get("value")), _num_in(d.get("threshold")),
                   _num_in(d["tol_disc"]), d["status"], d.get("note") or "")


def _clean(obj):
    """Recursively make floats JSON-safe and arrays plain lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return _num_out(obj)
    return str(obj)


@dataclass
class VerificationReport:
    scenario: str
    side: str
    checks: list = field(default_factory=list)
    fitted: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.side not in ("elliptic", "parabolic"):
            raise ValueError(f"side must be elliptic or parabolic, got {self.side!r}")

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    @property
    def failed(self) -> list:
        return [c for c in self.checks if c.status == FAIL]

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self, *, timestamp: bool = True) -> dict:
        prov = dict(self.provenance)
        if not timestamp:
            prov.pop("timestamp", None)
        return {"scenario": self.scenario, "side": self.side,
                "checks": [c.to_dict() for c in self.checks],
                "fitted": _clean(self.fitted), "provenance": _clean(prov)}

    def to_json(self, *, timestamp: bool = True) -> str:
        return json.dumps(self.to_dict(timestamp=timestamp), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationReport":
        missing = [k for k in TOP_KEYS if k not in d]
        if missing:
            raise ValueError(f"report is missing keys {missing}")
        return cls(d["scenario"], d["side"], [Check.from_dict(c) for c in d["checks"]],
                   d["fitted"], d["provenance"])

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        return cls.from_dict(json.loads(text))

    def summary_lines(self) -> list[str]:
        out = []
        for c in self.checks:
            val = "-" if c.value is None else f"{c.value:.6g}"
            thr = "-" if c.threshold is None else f"{c.threshold:.6g}"
            out.append(f"[{c.status:>14}] {self.scenario}/{c.name}: value={val} threshold={thr} "
                       f"tol={c.tol_disc:.3g}" + (f"  ({c.note})" if c.note else ""))
        return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def checks_to_csv(checks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CHECK_FIELDS)
    for c in checks:
        w.writerow([c.name, _fmt(c.value), _fmt(c.threshold), _fmt(c.tol_disc), c.status, c.note])
    return buf.getvalue()


def checks_from_csv(text: str) -> list[Check]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [Check.from_dict(r) for r in rows]


def curve_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("log_r", "log_osc"))
    for a, b in rows:
        w.writerow((_fmt(a), _fmt(b)))
    return buf.getvalue()


def emit_report(report: VerificationReport, fmt: str, path) -> list[Path]:
    """Write the report (JSON document or one-check-per-row CSV) to ``path``;
    decay curves stored under ``fitted['curves']`` go to sibling CSV files.
    Returns the written paths."""
    path = Path(path)
    if fmt == "json":
        path.write_text(report.to_json(), encoding="utf-8")
    elif fmt == "csv":
        path.write_text(checks_to_csv(report.checks), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    written = [path]
    for name, rows in (report.fitted.get("curves") or {}).items():
        p = path.with_name(f"{path.stem}.{name}.csv")
        p.write_text(curve_to_csv(rows), encoding="utf-8")
        written.append(p)
    return written
