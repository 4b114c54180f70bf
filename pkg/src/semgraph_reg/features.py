"""Per-point curvature with corner/surface classes, and per-class Euclidean instances."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .data_io import LidarScan, SemanticScan
from .errors import ConfigError

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 5
DEFAULT_THRESHOLD = 0.1


class GeometricClass(IntEnum):
    # codes shared with graph.FeatureId
    CORNER = 2
    SURFACE = 3


@dataclass
class CurvatureResult:
    curvature: np.ndarray
    classes: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return len(self.curvature)


def _ring_ids(scan: LidarScan):
    return np.zeros(len(scan), dtype=np.int64) if scan.ring is None else scan.ring


def compute_curvature(scan: LidarScan, window: int = DEFAULT_WINDOW):
    """LOAM-style roughness over up to ``window`` ring neighbours on each side.

    Returns ``(curvature, degenerate)`` where ``degenerate`` marks zero-norm points,
    whose curvature is set to 0.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    p = scan.points
    n = len(p)
    ring = _ring_ids(scan)
    acc = np.zeros((n, 3))
    count = np.zeros(n)
    for d in range(1, window + 1):
        if d >= n:
            break
        same = ring[d:] == ring[:-d]
        diff = (p[:-d] - p[d:]) * same[:, None]
        acc[:-d] += diff  # forward neighbour i+d
        acc[d:] -= diff  # backward neighbour i-d
        count[:-d] += same
        count[d:] += same
    norm = np.linalg.norm(p, axis=1)
    degenerate = norm == 0
    denom = count * norm
    c = np.zeros(n)
    ok = denom > 0
    c[ok] = np.linalg.norm(acc[ok], axis=1) / denom[ok]
    if degenerate.any():
        log.warning("%d zero-norm points given curvature 0", int(degenerate.sum()))
    return c, degenerate


def classify_geometry(curvature, threshold: float = DEFAULT_THRESHOLD):
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    c = np.asarray(curvature)
    return np.where(c >= threshold, GeometricClass.CORNER, GeometricClass.SURFACE).astype(np.int64)


def extract_geometry(scan: LidarScan, window=DEFAULT_WINDOW, threshold=DEFAULT_THRESHOLD) -> CurvatureResult:
    c, degenerate = compute_curvature(scan, window)
    return CurvatureResult(c, classify_geometry(c, threshold), degenerate)


# --------------------------------------------------------------------------- instances


@dataclass
class Instance:
    instance_id: int
    label: int
    members: np.ndarray
    centroid: np.ndarray


@dataclass
class ClusterParams:
    """Per-label ``(min_size, tolerance_m)`` with a fallback entry."""

    table: dict = field(default_factory=dict)
    default: tuple = (50, 1.0)

    def __post_init__(self):
        self.table = {int(k): (int(v[0]), float(v[1])) for k, v in dict(self.table).items()}
        self.default = (int(self.default[0]), float(self.default[1]))
        for key, (size, tol) in [*self.table.items(), ("default", self.default)]:
            if size < 1 or tol <= 0:
                raise ConfigError(f"cluster params for {key}: need min_size >= 1 and tolerance > 0")

    def for_label(self, label):
        return self.table.get(int(label), self.default)


def euclidean_clusters(points, tolerance):
    """Single-linkage components of the ``<= tolerance`` neighbour graph."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(points).query_pairs(tolerance, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return connected_components(adj, directed=False)[1]


def extract_instances(scan: SemanticScan, params: ClusterParams):
    found = []
    for label in np.unique(scan.labels):
        idx = np.flatnonzero(scan.labels == label)
        min_size, tol = params.for_label(label)
        comp = euclidean_clusters(scan.points[idx], tol)
        sizes = np.bincount(comp)
        for c in np.flatnonzero(sizes >= min_size):
            members = idx[comp == c]
            found.append((int(label), members))
    # deterministic ids: by label, then by smallest member index
    found.sort(key=lambda item: (item[0], item[1][0]))
    return [
        Instance(i, label, members, scan.points[members].mean(axis=0))
        for i, (label, members) in enumerate(found)
    ]
