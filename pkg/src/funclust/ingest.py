"""Readers and writers for trace and metric files.

Traces are CSV with header ``src,dst,timestamp``; metrics are long-format
CSV with header ``instance_id,metric_name,timestamp,value``. Both accept a
JSONL alternative carrying the same keys, one object per line.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

from .model import (
    DestinationSet,
    FunclustError,
    MetricMatrix,
    TraceRecord,
    ValidationError,
    check_instance_id,
    sort_ids,
)

logger = logging.getLogger(__name__)

TRACE_FIELDS = ("src", "dst", "timestamp")
METRIC_FIELDS = ("instance_id", "metric_name", "timestamp", "value")
MAX_MALFORMED_FRACTION = 0.5


class FileFormatError(FunclustError):
    """The file does not look like the expected format at all."""


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _as_text(stream) -> IO[str]:
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(bytes(stream).decode("utf-8"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream
    # binary file object
    return io.TextIOWrapper(stream, encoding="utf-8", newline="")


def _iter_rows(stream, fields: tuple) -> Iterator[tuple[int, dict | None, str | None]]:
    """Yield ``(line_number, row, error)`` from a CSV or JSONL stream."""
    text = _as_text(stream)
    lines = text.read().splitlines()
    first = next((i for i, ln in enumerate(lines) if ln.strip()), None)
    if first is None:
        return
    if lines[first].lstrip().startswith("{"):
        for lineno, raw in enumerate(lines, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                yield lineno, None, f"invalid JSON: {exc.msg}"
                continue
            if not isinstance(obj, dict):
                yield lineno, None, "JSON line is not an object"
                continue
            yield lineno, obj, None
        return

    header = [h.strip() for h in next(csv.reader([lines[first]]))]
    if tuple(header) != fields:
        raise FileFormatError(f"expected header {','.join(fields)!r}, got {lines[first]!r}")
    reader = csv.reader(lines[first + 1:])
    for offset, cells in enumerate(reader):
        lineno = first + 2 + offset
        if not cells or (len(cells) == 1 and not cells[0].strip()):
            continue
        if len(cells) != len(fields):
            yield lineno, None, f"expected {len(fields)} fields, got {len(cells)}"
            continue
        yield lineno, dict(zip(fields, (c.strip() for c in cells))), None


def _parse_timestamp(raw) -> int:
    if isinstance(raw, bool):
        raise ValueError("boolean timestamp")
    if isinstance(raw, int):
        ts = raw
    elif isinstance(raw, float):
        if not raw.is_integer():
            raise ValueError(f"non-integer timestamp {raw!r}")
        ts = int(raw)
    else:
        ts = int(str(raw).strip())
    if ts < 0:
        raise ValueError(f"negative timestamp {ts}")
    return ts


def _check_malformed(n_ok: int, errors: list, what: str) -> None:
    total = n_ok + len(errors)
    if total and len(errors) / total > MAX_MALFORMED_FRACTION:
        raise FileFormatError(
            f"{len(errors)} of {total} {what} rows are malformed; is this the right file? "
            f"first error: {errors[0]}"
        )


def parse_traces(stream) -> tuple[list[TraceRecord], list[RowError]]:
    """Parse trace records, collecting per-row errors instead of aborting.

    Raises:
        FileFormatError: wrong header, or more than half the rows malformed.
        OSError: the stream cannot be read.
    """
    records: list[TraceRecord] = []
    errors: list[RowError] = []
    for lineno, row, err in _iter_rows(stream, TRACE_FIELDS):
        if err is not None:
            errors.append(RowError(lineno, err))
            continue
        try:
            missing = [k for k in TRACE_FIELDS if k not in row]
            if missing:
                raise ValueError(f"missing field(s) {', '.join(missing)}")
            src, dst = str(row["src"]).strip(), str(row["dst"]).strip()
            if not src:
                raise ValueError("empty src")
            if not dst:
                raise ValueError("empty dst")
            records.append(TraceRecord(src, dst, _parse_timestamp(row["timestamp"])))
        except (ValueError, ValidationError) as exc:
            errors.append(RowError(lineno, str(exc)))
    _check_malformed(len(records), errors, "trace")
    return records, errors


def build_destination_sets(records: Iterable[TraceRecord]) -> dict[str, DestinationSet]:
    """Group records by source into distinct-destination sets.

    Only the src -> dst direction counts. Self-loops are dropped; a source
    seen only in self-loops still gets an (empty) entry.
    """
    grouped: dict[str, set] = defaultdict(set)
    self_loops = 0
    for rec in records:
        dests = grouped[rec.src]
        if rec.src == rec.dst:
            self_loops += 1
            continue
        dests.add(rec.dst)
    if self_loops:
        logger.debug("dropped %d self-loop trace records", self_loops)
    return {src: DestinationSet(src, frozenset(d)) for src, d in grouped.items()}


def filter_high_fanout(
    sets: Mapping[str, DestinationSet], cap: int = 100
) -> tuple[dict[str, DestinationSet], list[str]]:
    """Drop instances talking to more than ``cap`` distinct destinations."""
    if cap < 1:
        raise ValidationError(f"fan-out cap must be >= 1, got {cap}")
    kept, removed = {}, []
    for owner, dset in sets.items():
        if len(dset.destinations) > cap:
            removed.append(owner)
        else:
            kept[owner] = dset
    return kept, sort_ids(removed)


def parse_metrics(stream) -> tuple[dict[str, MetricMatrix], list[RowError], list[str]]:
    """Pivot long-format metric rows into one matrix per instance.

    Timestamps per instance are the union over its metrics. A metric missing
    at one of them is linearly interpolated from that metric's neighbours
    (nearest value at the edges). Duplicate (instance, metric, timestamp)
    rows keep the last value.

    Returns:
        ``(matrices, row_errors, ineligible)`` where ``ineligible`` lists
        instances having some metric with fewer than two timestamps; those
        instances get no matrix.
    """
    cells: dict[str, dict[str, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    errors: list[RowError] = []
    n_ok = 0
    for lineno, row, err in _iter_rows(stream, METRIC_FIELDS):
        if err is not None:
            errors.append(RowError(lineno, err))
            continue
        try:
            missing = [k for k in METRIC_FIELDS if k not in row]
            if missing:
                raise ValueError(f"missing field(s) {', '.join(missing)}")
            inst = check_instance_id(str(row["instance_id"]).strip())
            name = str(row["metric_name"]).strip()
            if not name:
                raise ValueError("empty metric_name")
            ts = _parse_timestamp(row["timestamp"])
            value = float(row["value"])
            if not math.isfinite(value):
                raise ValueError(f"non-finite value {row['value']!r}")
        except (ValueError, TypeError, ValidationError) as exc:
            errors.append(RowError(lineno, str(exc)))
            continue
        cells[inst][name][ts] = value
        n_ok += 1
    _check_malformed(n_ok, errors, "metric")

    matrices: dict[str, MetricMatrix] = {}
    ineligible: list[str] = []
    for inst in sort_ids(cells):
        by_metric = cells[inst]
        if any(len(points) < 2 for points in by_metric.values()):
            ineligible.append(inst)
            continue
        names = tuple(sorted(by_metric))
        grid = np.array(sorted(set().union(*(p.keys() for p in by_metric.values()))), dtype=np.int64)
        values = np.empty((grid.size, len(names)))
        for col, name in enumerate(names):
            points = by_metric[name]
            ts = np.array(sorted(points), dtype=np.int64)
            vs = np.array([points[t] for t in ts])
            values[:, col] = np.interp(grid, ts, vs)
        matrices[inst] = MetricMatrix(inst, names, values, grid)
    return matrices, errors, ineligible


def write_traces(records: Iterable[TraceRecord], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for rec in records:
        writer.writerow((rec.src, rec.dst, rec.timestamp))


def write_metrics(matrices: Iterable[MetricMatrix], fh: IO[str]) -> None:
    """Write matrices in long format; floats use ``repr`` so they round-trip."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for m in matrices:
        for col, name in enumerate(m.metric_names):
            for ts, v in zip(m.timestamps.tolist(), m.values[:, col].tolist()):
                writer.writerow((m.owner, name, ts, repr(v)))
