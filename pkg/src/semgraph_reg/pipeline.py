"""Scan pair -> pruned cross-graph, the glue every entry point shares."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .data_io import LabelMap, SemanticScan, remap_labels
from .errors import ConfigError
from .features import DEFAULT_THRESHOLD, DEFAULT_WINDOW, ClusterParams, extract_geometry, extract_instances
from .graph import (
    DEFAULT_MAX_NEIGHBORS,
    DEFAULT_NN_RADIUS,
    CrossGraph,
    build_cross_edges,
    build_single_graph,
    match_instances,
    prune_cross_graph,
)


@dataclass
class FeatureParams:
    window: int = DEFAULT_WINDOW
    corner_threshold: float = DEFAULT_THRESHOLD
    cluster: ClusterParams = field(default_factory=ClusterParams)

    def validate(self):
        if self.window < 1:
            raise ConfigError("features.window must be >= 1")
        if self.corner_threshold <= 0:
            raise ConfigError("features.corner_threshold must be positive")
        return self


@dataclass
class GraphParams:
    nn_radius: float = DEFAULT_NN_RADIUS
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS
    train_thresh: float = 3.0
    infer_thresh: float = 2.0

    def validate(self):
        if min(self.nn_radius, self.train_thresh, self.infer_thresh) <= 0 or self.max_neighbors < 1:
            raise ConfigError("graph thresholds must be positive and max_neighbors >= 1")
        return self

    def thresh(self, mode):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        return self.train_thresh if mode == "train" else self.infer_thresh


def scan_graph(scan: SemanticScan, features: FeatureParams, graph: GraphParams):
    curv = extract_geometry(scan.scan, features.window, features.corner_threshold)
    instances = extract_instances(scan, features.cluster)
    return build_single_graph(scan, curv, instances, graph.nn_radius, graph.max_neighbors)


def build_pair_graph(
    scan_k: SemanticScan,
    scan_l: SemanticScan,
    features: FeatureParams,
    graph: GraphParams,
    mode: str = "infer",
    label_map: Optional[LabelMap] = None,
    prune: bool = True,
) -> CrossGraph:
    """Instance matching and candidate edges use the same distance threshold per mode."""
    thresh = graph.thresh(mode)
    if label_map is not None:
        scan_k = remap_labels(scan_k, label_map.dynamic_to_static, label_map.discard, label_map.static_ids)
        scan_l = remap_labels(scan_l, label_map.dynamic_to_static, label_map.discard, label_map.static_ids)
    g_k = scan_graph(scan_k, features, graph)
    g_l = scan_graph(scan_l, features, graph)
    cg = build_cross_edges(g_k, g_l, match_instances(g_k, g_l, thresh), thresh)
    return prune_cross_graph(cg) if prune else cg
