import csv
import io
import json
import os

import numpy as np
import pytest

from funclust.cli import main
from funclust.formats import config_from_mapping, config_to_text, parse_config_text
from funclust.ingest import write_traces
from funclust.model import PipelineConfig, TraceRecord, ValidationError
from funclust.synthetic import SyntheticSpec, generate

from oracles import jaccard_components, planted_sets


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    spec = SyntheticSpec(num_clusters=5, instances_per_cluster=(4, 6), rng_seed=17)
    return generate(spec).write(str(out))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_partition_planted_groups(tmp_path, capsys):
    raw = planted_sets(np.random.default_rng(8), groups=3, size=6, base=10, max_edit=2)
    records = [TraceRecord(src, dst, 1) for src, dests in raw.items() for dst in sorted(dests)]
    traces = tmp_path / "t.csv"
    with open(traces, "w", newline="") as fh:
        write_traces(records, fh)
    code, manifest = run(capsys, "partition", "--traces", traces, "--out", tmp_path / "c.json")
    chunks = json.loads((tmp_path / "c.json").read_text())
    assert code == 0 and manifest["counts"]["chunks"] == 3
    assert {frozenset(c["members"]) for c in chunks} == jaccard_components(raw, 0.5)
    assert [c["chunk_id"] for c in chunks] == [0, 1, 2]


def test_partition_empty_file(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("")
    code, manifest = run(capsys, "partition", "--traces", tmp_path / "t.csv", "--out", tmp_path / "c.json")
    assert code == 0 and json.loads((tmp_path / "c.json").read_text()) == []
    (tmp_path / "h.csv").write_text("src,dst,timestamp\n")
    assert run(capsys, "partition", "--traces", tmp_path / "h.csv", "--out", tmp_path / "c.json")[0] == 0


def test_missing_file_is_io_error(tmp_path, capsys):
    assert run(capsys, "partition", "--traces", tmp_path / "nope.csv", "--out", tmp_path / "c.json")[0] == 2


def test_wrong_header_is_validation_error(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("a,b,c\n1,2,3\n")
    assert run(capsys, "partition", "--traces", tmp_path / "t.csv", "--out", tmp_path / "c.json")[0] == 1


def test_cluster_scores_perfectly_and_is_deterministic(dataset, tmp_path, capsys):
    args = ["cluster", "--traces", dataset["traces"], "--metrics", dataset["metrics"]]
    code, manifest = run(capsys, *args, "--out", tmp_path / "a.json")
    assert code == 0
    assert manifest["counts"]["clusters"] == 5
    assert set(manifest["inputs"]) == {"traces", "metrics"}
    assert len(manifest["config_hash"]) == 64
    run(capsys, *args, "--out", tmp_path / "b.json", "--jobs", 3)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    code, manifest = run(capsys, "eval", "--clusters", tmp_path / "a.json", "--truth", dataset["truth"], "--out", tmp_path / "s.json")
    assert code == 0 and manifest["scores"]["v_measure"] == 1.0
    assert json.loads((tmp_path / "s.json").read_text()) == manifest["scores"]


def test_stages_compose(dataset, tmp_path, capsys):
    run(capsys, "partition", "--traces", dataset["traces"], "--out", tmp_path / "chunks.json")
    run(capsys, "cluster", "--chunks", tmp_path / "chunks.json", "--metrics", dataset["metrics"], "--out", tmp_path / "x.json")
    run(capsys, "cluster", "--traces", dataset["traces"], "--metrics", dataset["metrics"], "--out", tmp_path / "y.json")
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()


def test_member_without_metrics_becomes_singleton(dataset, tmp_path, capsys):
    lines = open(dataset["traces"]).read().splitlines()
    lines.append(lines[1].replace(lines[1].split(",")[0], "ghost", 1))
    (tmp_path / "t.csv").write_text("\n".join(lines) + "\n")
    code, manifest = run(capsys, "cluster", "--traces", tmp_path / "t.csv", "--metrics", dataset["metrics"], "--out", tmp_path / "c.json")
    assert code == 0 and manifest["counts"]["missing_metrics"] == 1
    clusters = json.loads((tmp_path / "c.json").read_text())
    assert {"ghost"} in [set(c["members"]) for c in clusters]


def test_eval_fixture_and_disjoint_ids(tmp_path, capsys):
    clusters = [{"cluster_id": 0, "chunk_id": 0, "members": ["a", "b", "c"]}, {"cluster_id": 1, "chunk_id": 0, "members": ["d"]}]
    (tmp_path / "c.json").write_text(json.dumps(clusters))
    (tmp_path / "t.csv").write_text("instance_id,label\na,1\nb,1\nc,2\nd,2\n")
    code, manifest = run(capsys, "eval", "--clusters", tmp_path / "c.json", "--truth", tmp_path / "t.csv")
    assert code == 0
    assert manifest["scores"]["homogeneity"] == pytest.approx(0.3112781244591327, abs=1e-12)
    (tmp_path / "o.csv").write_text("instance_id,label\nx,1\ny,2\n")
    assert run(capsys, "eval", "--clusters", tmp_path / "c.json", "--truth", tmp_path / "o.csv")[0] == 1


def _sweep(capsys, dataset, tmp_path, param, rng_text):
    out = tmp_path / f"{param}.csv"
    code, _ = run(
        capsys, "sweep", "--param", param, "--range", rng_text, "--traces", dataset["traces"],
        "--metrics", dataset["metrics"], "--truth", dataset["truth"], "--out", out,
    )
    rows = list(csv.DictReader(open(out))) if code == 0 else None
    return code, rows


def test_hac_sweep_completeness_rises(dataset, tmp_path, capsys):
    code, rows = _sweep(capsys, dataset, tmp_path, "theta_hac", "0:1:0.1")
    assert code == 0 and len(rows) == 11
    comp = [float(r["completeness"]) for r in rows]
    assert all(a <= b + 1e-12 for a, b in zip(comp, comp[1:]))


def test_sweep_edge_cases(dataset, tmp_path, capsys):
    code, rows = _sweep(capsys, dataset, tmp_path, "theta_lsh", "0.5:0.5:0.1")
    assert code == 0 and [r["value"] for r in rows] == ["0.5"]
    assert _sweep(capsys, dataset, tmp_path, "theta_x", "0:1:0.5")[0] == 1
    assert _sweep(capsys, dataset, tmp_path, "theta_hac", "1:0:0.5")[0] == 1
    assert _sweep(capsys, dataset, tmp_path, "theta_hac", "0.2,1.5")[0] == 1


def test_generate_and_analyze(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"num_clusters": 3, "instances_per_cluster": [3, 3], "colocated_fraction": 1.0}))
    code, manifest = run(capsys, "generate", "--spec", spec, "--out", tmp_path / "d", "--seed", 5)
    assert code == 0 and manifest["counts"]["instances"] == 9
    d = tmp_path / "d"
    run(capsys, "cluster", "--traces", d / "traces.csv", "--metrics", d / "metrics.csv", "--out", tmp_path / "c.json")
    code, manifest = run(
        capsys, "analyze", "--clusters", tmp_path / "c.json", "--placement", d / "placement.csv",
        "--metrics", d / "metrics.csv", "--metric-name", "cpu_util", "--out", tmp_path / "r",
    )
    assert code == 0 and manifest["counts"]["deployment_findings"] == 3
    report = json.loads((tmp_path / "r" / "findings.json").read_text())
    assert {f["severity"] for f in report["deployment"]["findings"]} == {"vulnerable"}
    header = (tmp_path / "r" / "cluster_series.csv").read_text().splitlines()[0]
    assert header == "cluster_id,metric_name,timestamp,value"
    assert run(capsys, "analyze", "--clusters", tmp_path / "c.json", "--out", tmp_path / "r")[0] == 1


def test_bad_generate_spec(tmp_path, capsys):
    (tmp_path / "s.json").write_text('{"num_clusters": 0}')
    assert run(capsys, "generate", "--spec", tmp_path / "s.json", "--out", tmp_path / "d")[0] == 1
    (tmp_path / "b.json").write_text("{not json")
    assert run(capsys, "generate", "--spec", tmp_path / "b.json", "--out", tmp_path / "d")[0] == 1


def test_config_file_and_flag_precedence(dataset, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# coarse only\ntheta_lsh = 0.9\ntheta_hac = 0.0\ndtw_window = none\n")
    code, m1 = run(capsys, "cluster", "--traces", dataset["traces"], "--metrics", dataset["metrics"],
                   "--config", cfg, "--out", tmp_path / "a.json")
    code, m2 = run(capsys, "cluster", "--traces", dataset["traces"], "--metrics", dataset["metrics"],
                   "--config", cfg, "--theta-hac", 0.4, "--out", tmp_path / "b.json")
    assert m1["counts"]["clusters"] == m1["counts"]["instances"]
    assert m2["counts"]["clusters"] == 5
    assert m1["config_hash"] != m2["config_hash"]
    cfg.write_text("theta = 0.3\n")
    assert run(capsys, "partition", "--traces", dataset["traces"], "--config", cfg, "--out", tmp_path / "c.json")[0] == 1


def test_argparse_errors_exit_one(capsys):
    assert main(["partition"]) == 1
    assert main(["frobnicate"]) == 1
    capsys.readouterr()


def test_config_text_round_trip():
    cfg = PipelineConfig(theta_lsh=0.25, log_metrics={"b", "a"}, dtw_window=3, rng_seed=99)
    assert config_from_mapping(parse_config_text(config_to_text(cfg))) == cfg
    assert config_from_mapping(parse_config_text(config_to_text(PipelineConfig()))) == PipelineConfig()
    with pytest.raises(ValidationError):
        config_from_mapping({"theta_hac": "high"})
