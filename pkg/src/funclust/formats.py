"""JSON/CSV encodings of pipeline outputs and the flat config file."""

from __future__ import annotations

import csv
import json
from dataclasses import fields
from typing import IO, Iterable

from .analyses import ClusterSeries
from .model import Chunk, FunctionalCluster, PipelineConfig, ValidationError, sort_ids

CONFIG_KEYS = {f.name for f in fields(PipelineConfig)}


def dump_json(obj, fh: IO[str]) -> None:
    json.dump(obj, fh, indent=2, sort_keys=True)
    fh.write("\n")


def chunks_to_json(chunks: Iterable[Chunk]) -> list[dict]:
    return [{"chunk_id": n, "members": list(c.members)} for n, c in enumerate(chunks)]


def chunks_from_json(data) -> list[Chunk]:
    if not isinstance(data, list):
        raise ValidationError("chunk file must hold a JSON list")
    try:
        ordered = sorted(data, key=lambda d: int(d["chunk_id"]))
        return [Chunk(tuple(d["members"])) for d in ordered]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed chunk entry: {exc}") from None


def clusters_to_json(clusters: Iterable[FunctionalCluster]) -> list[dict]:
    return [
        {"cluster_id": c.cluster_id, "chunk_id": c.parent_chunk, "members": list(c.members)} for c in clusters
    ]


def clusters_from_json(data) -> list[FunctionalCluster]:
    if not isinstance(data, list):
        raise ValidationError("cluster file must hold a JSON list")
    try:
        return [
            FunctionalCluster(int(d["cluster_id"]), tuple(d["members"]), int(d.get("chunk_id", 0))) for d in data
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed cluster entry: {exc}") from None


def read_labels(fh: IO[str], value_field: str) -> dict:
    """Read a two-column ``instance_id,<value_field>`` CSV."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return {}
    if [h.strip() for h in header] != ["instance_id", value_field]:
        raise ValidationError(f"expected header 'instance_id,{value_field}', got {','.join(header)!r}")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2 or not row[0].strip():
            raise ValidationError(f"line {lineno}: expected two fields")
        out[row[0].strip()] = row[1].strip()
    return out


def write_series(series: Iterable[ClusterSeries], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("cluster_id", "metric_name", "timestamp", "value"))
    for s in series:
        for t, v in zip(s.timestamps.tolist(), s.values.tolist()):
            writer.writerow((s.cluster_id, s.metric_name, t, repr(v)))


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def config_from_mapping(values: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config from string or typed values layered over ``base``."""
    current = {f.name: getattr(base or PipelineConfig(), f.name) for f in fields(PipelineConfig)}
    try:
        for key, value in values.items():
            if value is None:
                continue
            if key in ("theta_lsh", "theta_hac"):
                current[key] = float(value)
            elif key in ("minhash_perms", "fanout_cap", "rng_seed", "outlier_window"):
                current[key] = int(value)
            elif key == "dtw_window":
                current[key] = None if str(value).strip().lower() in ("", "none") else int(value)
            elif key == "log_metrics":
                if isinstance(value, str):
                    value = None if value.strip().lower() in ("", "auto") else [v.strip() for v in value.split(",") if v.strip()]
                current[key] = None if value is None else frozenset(value)
            else:
                raise ValidationError(f"unknown config key {key!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad config value: {exc}") from None
    return PipelineConfig(**current)


def config_to_text(config: PipelineConfig) -> str:
    lines = []
    for f in fields(PipelineConfig):
        value = getattr(config, f.name)
        if f.name == "log_metrics":
            value = "auto" if value is None else ",".join(sort_ids(value))
        elif value is None:
            value = "none"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
