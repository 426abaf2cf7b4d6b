"""Command-line entry point.

Data goes to files, warnings to stderr, and a JSON run manifest to stdout.
Exit codes: 0 success, 1 invalid input or arguments, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time

from . import __version__
from .analyses import aggregate_cluster_metric, find_vulnerable, flag_spikes, unplaced_members
from .evaluation import LabelAssignment, labels_from_clusters, score_all
from .formats import (
    chunks_from_json,
    chunks_to_json,
    clusters_from_json,
    clusters_to_json,
    config_from_mapping,
    config_to_text,
    dump_json,
    parse_config_text,
    read_labels,
    write_series,
)
from .ingest import FileFormatError, filter_high_fanout, build_destination_sets, parse_metrics, parse_traces
from .model import FunclustError, PipelineConfig, ValidationError
from .partition import partition
from .pipeline import FunctionalClusterer
from .synthetic import generate, load_spec

logger = logging.getLogger("funclust")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
SWEEP_PARAMS = ("theta_lsh", "theta_hac")


class UsageError(FunclustError):
    pass


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_config(args) -> PipelineConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    overrides = {
        "theta_lsh": getattr(args, "theta_lsh", None),
        "theta_hac": getattr(args, "theta_hac", None),
        "rng_seed": getattr(args, "seed", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(values)


class Manifest:
    def __init__(self, command: str, config: PipelineConfig | None = None):
        self.data = {"command": command, "tool_version": __version__, "inputs": {}, "timings_ms": {}, "counts": {}}
        if config is not None:
            self.data["config_hash"] = hashlib.sha256(config_to_text(config).encode()).hexdigest()

    def add_input(self, name: str, path: str) -> None:
        self.data["inputs"][name] = {"path": path, "sha256": _digest(path)}

    def timed(self, stage: str, start: float) -> None:
        self.data["timings_ms"][stage] = round((time.perf_counter() - start) * 1000, 3)

    def emit(self, path: str | None = None) -> None:
        text = json.dumps(self.data, indent=2, sort_keys=True)
        print(text)
        if path:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")


def _read_traces(path: str, manifest: Manifest):
    manifest.add_input("traces", path)
    with open(path, "rb") as fh:
        records, errors = parse_traces(fh)
    for err in errors[:20]:
        logger.warning("%s: %s", path, err)
    if len(errors) > 20:
        logger.warning("%s: %d more malformed rows", path, len(errors) - 20)
    manifest.data["counts"]["trace_rows_rejected"] = len(errors)
    return records


def _read_metrics(path: str, manifest: Manifest):
    manifest.add_input("metrics", path)
    with open(path, "rb") as fh:
        matrices, errors, ineligible = parse_metrics(fh)
    for err in errors[:20]:
        logger.warning("%s: %s", path, err)
    if ineligible:
        logger.warning("%d instance(s) have fewer than two samples for some metric: %s", len(ineligible), ineligible[:5])
    manifest.data["counts"]["metric_rows_rejected"] = len(errors)
    manifest.data["counts"]["ineligible_instances"] = len(ineligible)
    return matrices


def _write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_json(obj, fh)


def cmd_partition(args) -> int:
    config = _load_config(args)
    manifest = Manifest("partition", config)
    t0 = time.perf_counter()
    records = _read_traces(args.traces, manifest)
    manifest.timed("ingest", t0)
    t0 = time.perf_counter()
    sets = build_destination_sets(records)
    kept, removed = filter_high_fanout(sets, config.fanout_cap)
    if removed:
        logger.warning("%d high fan-out instance(s) set aside as singleton chunks", len(removed))
    chunks = partition(kept, config, singletons=removed)
    manifest.timed("partition", t0)
    _write_json(args.out, chunks_to_json(chunks))
    manifest.data["counts"].update(instances=sum(len(c) for c in chunks), chunks=len(chunks), high_fanout=len(removed))
    manifest.emit(args.manifest)
    return EXIT_OK


def _fit(args, config, manifest, mode="full"):
    records = _read_traces(args.traces, manifest) if args.traces else []
    metrics = _read_metrics(args.metrics, manifest)
    chunks = None
    if getattr(args, "chunks", None):
        manifest.add_input("chunks", args.chunks)
        with open(args.chunks, encoding="utf-8") as fh:
            chunks = chunks_from_json(json.load(fh))
    est = FunctionalClusterer.from_config(config, mode=mode, n_jobs=args.jobs)
    est.fit((records, metrics), chunks=chunks)
    for stage, ms in est.timings_.items():
        manifest.data["timings_ms"][stage] = round(ms, 3)
    return est


def cmd_cluster(args) -> int:
    if not args.traces and not args.chunks and args.mode != "metrics":
        raise UsageError("cluster needs --traces or --chunks")
    config = _load_config(args)
    manifest = Manifest("cluster", config)
    est = _fit(args, config, manifest, args.mode)
    _write_json(args.out, clusters_to_json(est.clusters_))
    if args.dendrograms:
        _write_json(args.dendrograms, {str(k): d.to_dict() for k, d in sorted(est.dendrograms_.items())})
    manifest.data["counts"].update(
        instances=len(est.instance_ids_),
        chunks=len(est.chunks_),
        clusters=len(est.clusters_),
        missing_metrics=len(est.missing_metrics_),
        high_fanout=len(est.removed_),
    )
    manifest.emit(args.manifest)
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = Manifest("eval")
    manifest.add_input("clusters", args.clusters)
    manifest.add_input("truth", args.truth)
    with open(args.clusters, encoding="utf-8") as fh:
        clusters = clusters_from_json(json.load(fh))
    with open(args.truth, encoding="utf-8", newline="") as fh:
        truth = read_labels(fh, "label")
    scores = score_all(LabelAssignment(truth, labels_from_clusters(clusters)))
    scores = {k: float(v) for k, v in scores.items()}
    if args.out:
        _write_json(args.out, scores)
    manifest.data["scores"] = scores
    manifest.emit(args.manifest)
    return EXIT_OK


def _parse_range(text: str) -> list[float]:
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 10) for i in range(n)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad range {text!r}; use start:stop:step or a comma list") from None


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"--param must be one of {', '.join(SWEEP_PARAMS)}")
    values = _parse_range(args.range)
    if not values:
        raise UsageError("empty sweep range")
    config = _load_config(args)
    manifest = Manifest("sweep", config)
    manifest.add_input("truth", args.truth)
    with open(args.truth, encoding="utf-8", newline="") as fh:
        truth = read_labels(fh, "label")
    rows = []
    if args.param == "theta_hac":
        est = _fit(args, config, manifest)
        for v in values:
            config_from_mapping({"theta_hac": v}, config)  # range check only
            s = score_all(LabelAssignment(truth, labels_from_clusters(est.recut(v))))
            rows.append((v, s))
    else:
        records = _read_traces(args.traces, manifest)
        metrics = _read_metrics(args.metrics, manifest)
        for v in values:
            cfg = config_from_mapping({"theta_lsh": v}, config)
            est = FunctionalClusterer.from_config(cfg, n_jobs=args.jobs).fit((records, metrics))
            rows.append((v, score_all(LabelAssignment(truth, est.labels_dict()))))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("value", "homogeneity", "completeness", "v_measure"))
        for v, s in rows:
            writer.writerow((repr(float(v)), repr(float(s["homogeneity"])), repr(float(s["completeness"])), repr(float(s["v_measure"]))))
    manifest.data["counts"]["rows"] = len(rows)
    manifest.emit(args.manifest)
    return EXIT_OK


def cmd_generate(args) -> int:
    manifest = Manifest("generate")
    manifest.add_input("spec", args.spec)
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = type(spec).from_dict({**spec.to_dict(), "rng_seed": args.seed})
    t0 = time.perf_counter()
    ds = generate(spec)
    paths = ds.write(args.out)
    manifest.timed("generate", t0)
    manifest.data["outputs"] = paths
    manifest.data["counts"].update(instances=len(ds.truth), trace_records=len(ds.records), clusters=spec.num_clusters)
    manifest.emit(args.manifest)
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not args.placement and not (args.metrics and args.metric_name):
        raise UsageError("analyze needs --placement and/or --metrics with --metric-name")
    manifest = Manifest("analyze")
    manifest.add_input("clusters", args.clusters)
    with open(args.clusters, encoding="utf-8") as fh:
        clusters = clusters_from_json(json.load(fh))
    os.makedirs(args.out, exist_ok=True)
    report = {}
    if args.placement:
        manifest.add_input("placement", args.placement)
        with open(args.placement, encoding="utf-8", newline="") as fh:
            placement = read_labels(fh, "machine_id")
        findings = find_vulnerable(clusters, placement, args.concentration)
        report["deployment"] = {
            "concentration": args.concentration,
            "findings": [f.to_dict() for f in findings],
            "unplaced": unplaced_members(clusters, placement),
        }
        manifest.data["counts"]["deployment_findings"] = len(findings)
    if args.metrics and args.metric_name:
        metrics = _read_metrics(args.metrics, manifest)
        series, skipped = aggregate_cluster_metric(clusters, metrics, args.metric_name, args.how)
        with open(os.path.join(args.out, "cluster_series.csv"), "w", encoding="utf-8", newline="") as fh:
            write_series(series, fh)
        spikes = []
        for s in series:
            if len(s) < 10:
                logger.warning("cluster %d: series too short for spike detection", s.cluster_id)
                continue
            for ts, value, score in flag_spikes(s, args.z):
                spikes.append({"cluster_id": s.cluster_id, "timestamp": ts, "value": value,
                               "zscore": score if score != float("inf") else "inf"})
        report["aggregation"] = {"metric_name": args.metric_name, "how": args.how, "z": args.z,
                                 "skipped_clusters": skipped, "spikes": spikes}
        manifest.data["counts"]["spikes"] = len(spikes)
    _write_json(os.path.join(args.out, "findings.json"), report)
    manifest.emit(args.manifest)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, pipeline: bool = True) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.add_argument("--manifest", help="also write the run manifest here")
    if pipeline:
        p.add_argument("--jobs", type=int, default=1, help="worker threads for clustering")
        p.add_argument("--theta-lsh", type=float, dest="theta_lsh")
        p.add_argument("--theta-hac", type=float, dest="theta_hac")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funclust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="trace-based chunking")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("cluster", help="full two-stage clustering")
    p.add_argument("--traces")
    p.add_argument("--metrics", required=True)
    p.add_argument("--chunks", help="reuse chunks written by 'partition'")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("full", "traces", "metrics"), default="full")
    p.add_argument("--dendrograms", help="write per-chunk merge histories here")
    _common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="score clusters against truth labels")
    p.add_argument("--clusters", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    _common(p, pipeline=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="score a threshold sweep")
    p.add_argument("--param", required=True)
    p.add_argument("--range", required=True, help="start:stop:step (inclusive) or a comma list")
    p.add_argument("--traces", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("generate", help="write a synthetic labelled dataset")
    p.add_argument("--spec", required=True, help="JSON synthetic spec")
    p.add_argument("--out", required=True, help="output directory")
    _common(p, pipeline=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="deployment and aggregation reports")
    p.add_argument("--clusters", required=True)
    p.add_argument("--placement")
    p.add_argument("--metrics")
    p.add_argument("--metric-name", dest="metric_name")
    p.add_argument("--how", choices=("sum", "mean"), default="sum")
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--z", type=float, default=3.0)
    p.add_argument("--out", required=True, help="output directory")
    _common(p, pipeline=False)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ValidationError, FileFormatError, UsageError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
