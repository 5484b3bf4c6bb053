"""CSV export and re-import of scenario traces."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import ExportError
from .sim import EVENT_COLUMNS, ScenarioTrace

TEXT_COLUMNS = ("mode", "controller")


def format_value(v) -> str:
    """Nine significant digits for reals, plain text otherwise; NaN is empty."""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return ""
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return f"{f:.9g}"


def _write(path: Path, header, rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([format_value(v) for v in r])
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc


def events_path(trace_path) -> Path:
    p = Path(trace_path)
    return p.with_name(p.stem + "_events.csv")


def export_trace(trace: ScenarioTrace, path) -> tuple[Path, Path]:
    """Write the trace CSV and its ``*_events.csv`` sidecar; returns both paths."""
    path = Path(path)
    _write(path, trace.columns, trace.rows)
    ev = events_path(path)
    _write(ev, EVENT_COLUMNS, trace.events)
    return path, ev


def _parse(value: str, text: bool):
    if text:
        return value
    if value == "":
        return math.nan
    return float(value)


def read_trace(path) -> ScenarioTrace:
    """Inverse of :func:`export_trace`; the events sidecar is optional."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            text = [c in TEXT_COLUMNS for c in header]
            rows = [[_parse(v, t) for v, t in zip(r, text)] for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise ExportError(f"cannot read trace {path}: {exc}") from exc
    if rows and any(len(r) != len(header) for r in rows):
        raise ExportError(f"{path}: ragged rows")
    for r in rows:
        r[0] = int(r[0])
    trace = ScenarioTrace(columns=header, rows=rows)
    ev = events_path(path)
    if ev.exists():
        with ev.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for r in reader:
                if r:
                    value = r[2]
                    trace.events.append((int(r[0]), r[1], int(value) if value.lstrip("-").isdigit() else value))
    return trace


def write_summary(rows: list[dict], path) -> Path:
    """Batch summary CSV; columns are the union of row keys in first-seen order."""
    path = Path(path)
    header: list[str] = []
    for r in rows:
        for key in r:
            if key not in header:
                header.append(key)
    _write(path, header, ([r.get(h, math.nan) for h in header] for r in rows))
    return path
