"""Functional clustering of cloud instances from traces and metrics."""

from .cluster import WeightedDTWAgglomerative, dtw, hac, instance_distance, metric_weights
from .evaluation import LabelAssignment, completeness, homogeneity, v_measure
from .metricprep import MetricPreprocessor, preprocess
from .model import (
    Chunk,
    DestinationSet,
    FunctionalCluster,
    MetricMatrix,
    PipelineConfig,
    TraceRecord,
    ValidationError,
)
from .partition import TracePartitioner, jaccard, minhash, partition
from .pipeline import FunctionalClusterer, TelemetryDataset
from .synthetic import SyntheticSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "DestinationSet",
    "FunctionalCluster",
    "FunctionalClusterer",
    "LabelAssignment",
    "MetricMatrix",
    "MetricPreprocessor",
    "PipelineConfig",
    "SyntheticSpec",
    "TelemetryDataset",
    "TraceRecord",
    "TracePartitioner",
    "ValidationError",
    "WeightedDTWAgglomerative",
    "completeness",
    "dtw",
    "generate",
    "hac",
    "homogeneity",
    "instance_distance",
    "jaccard",
    "metric_weights",
    "minhash",
    "partition",
    "preprocess",
    "v_measure",
]
