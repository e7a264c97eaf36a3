"""Topology-aware self-training for road segmentation under domain shift."""

from .adapt import AdaptConfig, TopologyAwareAdapter, adapt_rounds, benchmark_config, train_round0
from .exceptions import FormatError, NumericalError, UsageError
from .loss import LossReport, LossWeights, total_loss
from .metrics import MetricReport, RoadGraph, apls, evaluate, extract_graph, iou_f1
from .pseudo import (
    BACKGROUND,
    NOT_SELECTED,
    ROAD,
    PseudoLabelSelector,
    ThresholdPair,
    cbr_refine,
    select_pseudo_labels,
)
from .raster import GridDims, connected_components, neighbors
from .skeleton import Skeletonizer, skeletonize
from .synth import DomainParams, Tile, generate_domain, preset

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "BACKGROUND",
    "DomainParams",
    "FormatError",
    "GridDims",
    "LossReport",
    "LossWeights",
    "MetricReport",
    "NOT_SELECTED",
    "NumericalError",
    "PseudoLabelSelector",
    "ROAD",
    "RoadGraph",
    "Skeletonizer",
    "ThresholdPair",
    "Tile",
    "TopologyAwareAdapter",
    "UsageError",
    "adapt_rounds",
    "apls",
    "benchmark_config",
    "cbr_refine",
    "connected_components",
    "evaluate",
    "extract_graph",
    "generate_domain",
    "iou_f1",
    "neighbors",
    "preset",
    "select_pseudo_labels",
    "skeletonize",
    "total_loss",
    "train_round0",
]
