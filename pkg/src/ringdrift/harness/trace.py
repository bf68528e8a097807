"""Run traces and their CSV / JSON serialisations."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import IoError, SchemaError

COLUMNS = (
    "step",
    "accuracy",
    "nmae",
    "mean_temp_K",
    "inference_cycles",
    "probe_cycles",
    "calibration_cycles",
    "remap_cycles",
    "decision",
)
INT_COLUMNS = ("step", "inference_cycles", "probe_cycles", "calibration_cycles", "remap_cycles")
FLOAT_COLUMNS = ("accuracy", "nmae", "mean_temp_K")
DECISIONS = ("none", "remediate")
FORMAT = "ringdrift-trace/1"


@dataclass
class RunTrace:
    """Sampled rows (cumulative cycle counters) plus remediation events."""

    rows: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    @property
    def final(self) -> dict:
        return self.rows[-1]

    @property
    def overhead(self) -> float:
        """(probe + calibration + remap) / inference at the last row."""
        if not self.rows:
            return 0.0
        last = self.rows[-1]
        if last["inference_cycles"] == 0:
            return 0.0
        extra = last["probe_cycles"] + last["calibration_cycles"] + last["remap_cycles"]
        return extra / last["inference_cycles"]

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]


def make_row(**values) -> dict:
    missing = set(COLUMNS) - set(values)
    extra = set(values) - set(COLUMNS)
    if missing or extra:
        raise SchemaError(f"trace row missing {sorted(missing)} / unexpected {sorted(extra)}")
    row = {name: values[name] for name in COLUMNS}
    for name in INT_COLUMNS:
        row[name] = int(row[name])
    for name in FLOAT_COLUMNS:
        row[name] = float(row[name])
    if row["decision"] not in DECISIONS:
        raise SchemaError(f"decision must be one of {DECISIONS}")
    return row


def trace_to_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in trace.rows:
        writer.writerow([repr(row[c]) if c in FLOAT_COLUMNS else row[c] for c in COLUMNS])
    return buf.getvalue()


def trace_from_csv(text: str) -> RunTrace:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty trace file") from None
    if tuple(header) != COLUMNS:
        raise SchemaError(f"unexpected trace header {header}")
    rows = []
    for line in reader:
        if len(line) != len(COLUMNS):
            raise SchemaError(f"trace row has {len(line)} fields")
        try:
            rows.append(make_row(**dict(zip(COLUMNS, line))))
        except ValueError as exc:
            raise SchemaError(f"bad trace value: {exc}") from None
    return RunTrace(rows=rows)


def trace_to_json(trace: RunTrace) -> str:
    doc = {"format": FORMAT, "manifest": trace.manifest, "columns": list(COLUMNS), "rows": trace.rows, "events": trace.events}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def trace_from_json(text: str) -> RunTrace:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"trace is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise SchemaError(f"not a {FORMAT} document")
    if tuple(doc.get("columns", ())) != COLUMNS:
        raise SchemaError("trace columns do not match the schema")
    rows = [make_row(**row) for row in doc.get("rows", [])]
    return RunTrace(rows=rows, events=list(doc.get("events", [])), manifest=dict(doc.get("manifest", {})))


def emit_trace(trace: RunTrace, path, fmt: str = "csv") -> Path:
    if fmt == "csv":
        text = trace_to_csv(trace)
    elif fmt == "json":
        text = trace_to_json(trace)
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write trace to {path}: {exc}") from None
    return path


def read_trace(path) -> RunTrace:
    path = Path(path)
    text = path.read_text()
    return trace_from_json(text) if path.suffix == ".json" else trace_from_csv(text)
