import numpy as np
import pytest

from funclust.model import (
    Chunk,
    DestinationSet,
    FunctionalCluster,
    MetricMatrix,
    PipelineConfig,
    TraceRecord,
    ValidationError,
    check_instance_id,
    sort_ids,
    validate_dataset,
)

from conftest import make_matrix


def test_empty_inputs_give_empty_report():
    report = validate_dataset([], {})
    assert report.findings == 0
    assert not report


def test_destination_without_metrics_is_flagged():
    m = make_matrix("a", [[1.0, 2.0, 3.0]])
    report = validate_dataset([TraceRecord("a", "b", 100)], {"a": m})
    assert report.traces_without_metrics == ["b"]
    assert report.metrics_without_traces == []


def test_well_formed_dataset_has_no_findings():
    ids = [f"i{n:03d}" for n in range(100)]
    records = [TraceRecord(ids[n], ids[(n + 1) % 100], n) for n in range(100)]
    metrics = {i: make_matrix(i, [np.arange(5.0)]) for i in ids}
    assert validate_dataset(records, metrics).findings == 0


def test_validate_dataset_leaves_inputs_alone():
    records = [TraceRecord("a", "a", 1), TraceRecord("a", "b", 2)]
    metrics = {"a": make_matrix("a", [[1.0]]), "c": make_matrix("c", [[1.0, 2.0]])}
    before = (list(records), dict(metrics))
    report = validate_dataset(records, metrics)
    assert (records, metrics) == before
    assert report.self_loops == 1
    assert report.malformed == ["a"]  # one timestamp is not clusterable
    assert report.metrics_without_traces == ["c"]
    assert report.to_dict()["traces_without_metrics"] == ["b"]


@pytest.mark.parametrize("bad", ["", "a,b", "a\nb", 5])
def test_instance_id_rules(bad):
    with pytest.raises(ValidationError):
        check_instance_id(bad)


def test_trace_record_rejects_negative_timestamp():
    with pytest.raises(ValidationError):
        TraceRecord("a", "b", -1)
    assert TraceRecord("a", "a", 0).is_self_loop


def test_destination_set_excludes_owner():
    with pytest.raises(ValidationError):
        DestinationSet("a", frozenset({"a", "b"}))
    assert len(DestinationSet("a", ["b", "b", "c"])) == 2


def test_metric_matrix_checks_shape_and_order():
    with pytest.raises(ValidationError):
        MetricMatrix("a", ("x",), [[1.0], [2.0]], [5, 5])
    with pytest.raises(ValidationError):
        MetricMatrix("a", ("x", "y"), [[1.0], [2.0]], [1, 2])
    m = MetricMatrix("a", ("x",), [1.0, 2.0], [1, 2])
    assert m.values.shape == (2, 1)
    with pytest.raises(ValueError):
        m.values[0, 0] = 3.0


def test_chunk_and_cluster_sort_members():
    assert Chunk(("b", "a", "b")).members == ("a", "b")
    with pytest.raises(ValidationError):
        Chunk(())
    with pytest.raises(ValidationError):
        FunctionalCluster(-1, ("a",), 0)


def test_sort_ids_is_lexicographic():
    assert sort_ids(["b", "B", "a10", "a2"]) == ["B", "a10", "a2", "b"]


def test_config_bounds():
    with pytest.raises(ValidationError):
        PipelineConfig(theta_lsh=1.5)
    with pytest.raises(ValidationError):
        PipelineConfig(minhash_perms=8)
    cfg = PipelineConfig()
    assert cfg.wants_log("net_in_bytes") and cfg.wants_log("disk_read_rate")
    assert not cfg.wants_log("cpu_util")
    assert PipelineConfig(log_metrics={"cpu_util"}).wants_log("cpu_util")
