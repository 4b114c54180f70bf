"""Single-scan semantic digraphs, scan-pair cross-graphs and pruning.

Node layout of a :class:`SingleGraph`: index 0 is the origin, then one centroid per
instance, then the clustered points grouped by instance.  Edge rules:

* point -> its instance centroid
* centroid -> origin
* point <-> point for same-instance, same-class points within ``nn_radius``, each point
  linking to at most ``max_neighbors`` nearest candidates (ties by index) and the
  resulting pairs made symmetric.

Cross edges are stored as ``(k_node, l_node)`` pairs so attention normalizes over the
candidates of each destination node in the second scan.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .data_io import SemanticScan
from .errors import FormatError
from .features import CurvatureResult, Instance

DEFAULT_NN_RADIUS = 0.8
DEFAULT_MAX_NEIGHBORS = 10


class FeatureId(IntEnum):
    ORIGIN = 0
    CENTROID = 1
    CORNER = 2
    SURFACE = 3


@dataclass(frozen=True)
class GraphNode:
    position: tuple
    semantic: int
    instance: int
    feature: FeatureId
    source_index: Optional[int]


@dataclass
class SingleGraph:
    positions: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray  # -1 for the origin
    feature: np.ndarray
    source_index: np.ndarray  # -1 for origin/centroid nodes
    edges: np.ndarray  # (m, 2) src, dst
    scan_index: int = 0

    def __len__(self):
        return len(self.positions)

    @property
    def n_edges(self):
        return len(self.edges)

    def node(self, i) -> GraphNode:
        src = int(self.source_index[i])
        return GraphNode(
            tuple(float(v) for v in self.positions[i]),
            int(self.semantic[i]),
            int(self.instance[i]),
            FeatureId(int(self.feature[i])),
            None if src < 0 else src,
        )

    @property
    def nodes(self):
        return [self.node(i) for i in range(len(self))]

    def point_mask(self):
        return self.feature >= FeatureId.CORNER

    def centroid_nodes(self):
        """instance id -> centroid node index."""
        idx = np.flatnonzero(self.feature == FeatureId.CENTROID)
        return {int(self.instance[i]): int(i) for i in idx}

    def subgraph(self, keep):
        """Keep nodes where ``keep`` is True; edges re-indexed, order preserved."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(len(self), -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        e = remap[self.edges] if len(self.edges) else np.zeros((0, 2), dtype=np.int64)
        e = e[(e >= 0).all(axis=1)] if len(e) else e.reshape(0, 2)
        g = SingleGraph(
            self.positions[keep],
            self.semantic[keep],
            self.instance[keep],
            self.feature[keep],
            self.source_index[keep],
            e.astype(np.int64).reshape(-1, 2),
            self.scan_index,
        )
        return g, remap


def _knn_pairs(points, radius, max_neighbors):
    """Undirected pairs where one end is among the other's capped radius neighbours."""
    n = len(points)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    d = np.linalg.norm(points[src] - points[dst], axis=1)
    order = np.lexsort((dst, d, src))
    src, dst = src[order], dst[order]
    start = np.searchsorted(src, src, side="left")
    rank = np.arange(len(src)) - start
    sel = rank < max_neighbors
    a, b = src[sel], dst[sel]
    und = np.unique(np.sort(np.stack([a, b], axis=1), axis=1), axis=0)
    return und


def build_single_graph(
    scan: SemanticScan,
    curv: CurvatureResult,
    instances,
    nn_radius: float = DEFAULT_NN_RADIUS,
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS,
) -> SingleGraph:
    if nn_radius <= 0:
        raise ValueError("nn_radius must be positive")
    n_inst = len(instances)
    positions = [np.zeros((1, 3))]
    semantic = [np.array([-1])]
    instance = [np.array([-1])]
    feature = [np.array([FeatureId.ORIGIN])]
    source = [np.array([-1])]
    edges = []
    if n_inst:
        positions.append(np.stack([inst.centroid for inst in instances]))
        semantic.append(np.array([inst.label for inst in instances]))
        instance.append(np.array([inst.instance_id for inst in instances]))
        feature.append(np.full(n_inst, FeatureId.CENTROID))
        source.append(np.full(n_inst, -1))
        centroid_idx = 1 + np.arange(n_inst)
        edges.append(np.stack([centroid_idx, np.zeros(n_inst, dtype=np.int64)], axis=1))
    offset = 1 + n_inst
    for j, inst in enumerate(instances):
        m = inst.members
        cls = curv.classes[m]
        pts = scan.points[m]
        ids = offset + np.arange(len(m))
        positions.append(pts)
        semantic.append(np.full(len(m), inst.label))
        instance.append(np.full(len(m), inst.instance_id))
        feature.append(cls)
        source.append(m)
        edges.append(np.stack([ids, np.full(len(m), 1 + j)], axis=1))
        for f in (FeatureId.CORNER, FeatureId.SURFACE):
            local = np.flatnonzero(cls == f)
            und = _knn_pairs(pts[local], nn_radius, max_neighbors)
            if len(und):
                a, b = ids[local[und[:, 0]]], ids[local[und[:, 1]]]
                edges.append(np.stack([np.concatenate([a, b]), np.concatenate([b, a])], axis=1))
        offset += len(m)
    e = np.concatenate(edges).astype(np.int64) if edges else np.zeros((0, 2), dtype=np.int64)
    return SingleGraph(
        np.concatenate(positions).astype(np.float64),
        np.concatenate(semantic).astype(np.int64),
        np.concatenate(instance).astype(np.int64),
        np.concatenate(feature).astype(np.int64),
        np.concatenate(source).astype(np.int64),
        e.reshape(-1, 2),
        scan.scan.scan_index,
    )


def match_instances(g_k: SingleGraph, g_l: SingleGraph, centroid_thresh: float = 3.0):
    """Map each instance of ``g_l`` to the nearest same-label centroid of ``g_k``.

    Returns ``{l_instance_id: k_instance_id}``; equidistant candidates resolve to the
    lower ``k`` instance id.
    """
    if centroid_thresh <= 0:
        raise ValueError("centroid_thresh must be positive")
    ck = np.flatnonzero(g_k.feature == FeatureId.CENTROID)
    cl = np.flatnonzero(g_l.feature == FeatureId.CENTROID)
    out = {}
    if len(ck) == 0 or len(cl) == 0:
        return out
    d = np.linalg.norm(g_l.positions[cl][:, None, :] - g_k.positions[ck][None, :, :], axis=2)
    same = g_l.semantic[cl][:, None] == g_k.semantic[ck][None, :]
    d = np.where(same & (d <= centroid_thresh), d, np.inf)
    k_ids = g_k.instance[ck]
    for row, li in enumerate(cl):
        finite = np.isfinite(d[row])
        if not finite.any():
            continue
        best = d[row][finite].min()
        winners = k_ids[finite & (d[row] == best)]
        out[int(g_l.instance[li])] = int(winners.min())
    return out


@dataclass
class CrossGraph:
    g_k: SingleGraph
    g_l: SingleGraph
    cross_edges: np.ndarray  # (E, 2) k-node, l-node
    correspondences: dict = field(default_factory=dict)

    @property
    def n_k(self):
        return len(self.g_k)

    @property
    def n_l(self):
        return len(self.g_l)

    @property
    def n_nodes(self):
        return self.n_k + self.n_l

    @property
    def n_cross(self):
        return len(self.cross_edges)

    def positions(self):
        return np.concatenate([self.g_k.positions, self.g_l.positions])

    def intra_edges(self):
        """Single-graph edges in joint indexing (k nodes first)."""
        return np.concatenate([self.g_k.edges, self.g_l.edges + self.n_k]).reshape(-1, 2)

    def cross_joint(self):
        """Cross edges in joint indexing, ``(src=k, dst=l)``."""
        return np.stack([self.cross_edges[:, 0], self.cross_edges[:, 1] + self.n_k], axis=1).reshape(-1, 2)

    def unmatched_l_points(self):
        hit = np.zeros(self.n_l, dtype=bool)
        hit[self.cross_edges[:, 1]] = True
        return np.flatnonzero(self.g_l.point_mask() & ~hit)


def build_cross_edges(g_k: SingleGraph, g_l: SingleGraph, correspondences, point_thresh: float = 2.0) -> CrossGraph:
    if point_thresh <= 0:
        raise ValueError("point_thresh must be positive")
    edges = []
    for li, ki in sorted(correspondences.items()):
        for f in (FeatureId.CORNER, FeatureId.SURFACE):
            a = np.flatnonzero((g_k.instance == ki) & (g_k.feature == f))
            b = np.flatnonzero((g_l.instance == li) & (g_l.feature == f))
            if len(a) == 0 or len(b) == 0:
                continue
            sdm = cKDTree(g_k.positions[a]).sparse_distance_matrix(
                cKDTree(g_l.positions[b]), point_thresh, output_type="ndarray"
            )
            edges.append(np.stack([a[sdm["i"]], b[sdm["j"]]], axis=1))
    e = np.concatenate(edges).astype(np.int64) if edges else np.zeros((0, 2), dtype=np.int64)
    # order by destination then source: groups each l node's candidates
    if len(e):
        e = e[np.lexsort((e[:, 0], e[:, 1]))]
    return CrossGraph(g_k, g_l, e, dict(correspondences))


def prune_cross_graph(cg: CrossGraph) -> CrossGraph:
    """Drop uncorresponded instances and points without cross candidates."""
    keep_k = np.ones(cg.n_k, dtype=bool)
    keep_l = np.ones(cg.n_l, dtype=bool)
    matched_k = set(cg.correspondences.values())
    matched_l = set(cg.correspondences.keys())
    for g, keep, matched, col in ((cg.g_k, keep_k, matched_k, 0), (cg.g_l, keep_l, matched_l, 1)):
        has_cross = np.zeros(len(g), dtype=bool)
        has_cross[cg.cross_edges[:, col]] = True
        keep &= ~(g.point_mask() & ~has_cross)
        unmatched = ~np.isin(g.instance, np.fromiter(matched, dtype=np.int64, count=len(matched)))
        keep &= ~((g.feature != FeatureId.ORIGIN) & unmatched)
    gk, rk = cg.g_k.subgraph(keep_k)
    gl, rl = cg.g_l.subgraph(keep_l)
    e = np.stack([rk[cg.cross_edges[:, 0]], rl[cg.cross_edges[:, 1]]], axis=1).reshape(-1, 2)
    return CrossGraph(gk, gl, e, dict(cg.correspondences))


def edge_count_report(cg: CrossGraph):
    n_ek, n_el, n_x = cg.g_k.n_edges, cg.g_l.n_edges, cg.n_cross
    total = n_ek + n_el + n_x
    fc = cg.n_k * cg.n_l
    return {
        "nodes_k": cg.n_k,
        "nodes_l": cg.n_l,
        "edges_k": n_ek,
        "edges_l": n_el,
        "edges_cross": n_x,
        "edges_total": total,
        "fc_reference": fc,
        "ratio": total / fc if fc else 0.0,
    }


# --------------------------------------------------------------------------- text format

_HEADER = "CROSSGRAPH"
_FEATURE_NAMES = {f: f.name.lower() for f in FeatureId}
_FEATURE_BY_NAME = {v: k for k, v in _FEATURE_NAMES.items()}


def write_cross_graph(path, cg: CrossGraph):
    """Line format: header, ``idx x y z s o f`` per node, ``src dst kind`` per edge.

    Header: ``CROSSGRAPH 1 n_k n_l n_edges scan_k scan_l``. Indices are joint (k first).
    """
    intra_k = cg.g_k.edges
    intra_l = cg.g_l.edges + cg.n_k
    cross = cg.cross_joint()
    n_edges = len(intra_k) + len(intra_l) + len(cross)
    lines = [f"{_HEADER} 1 {cg.n_k} {cg.n_l} {n_edges} {cg.g_k.scan_index} {cg.g_l.scan_index}"]
    for offset, g in ((0, cg.g_k), (cg.n_k, cg.g_l)):
        for i in range(len(g)):
            x, y, z = (repr(float(v)) for v in g.positions[i])
            lines.append(
                f"{offset + i} {x} {y} {z} {int(g.semantic[i])} {int(g.instance[i])} "
                f"{_FEATURE_NAMES[FeatureId(int(g.feature[i]))]}"
            )
    for kind, edges in (("intra_k", intra_k), ("intra_l", intra_l), ("cross", cross)):
        lines.extend(f"{int(s)} {int(d)} {kind}" for s, d in edges)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_cross_graph(path) -> CrossGraph:
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    if not rows or rows[0][0] != _HEADER or len(rows[0]) != 7:
        raise FormatError(f"{path}: missing {_HEADER} header")
    _, version, n_k, n_l, n_edges, scan_k, scan_l = rows[0]
    if version != "1":
        raise FormatError(f"{path}: unsupported version {version}")
    n_k, n_l, n_edges = int(n_k), int(n_l), int(n_edges)
    node_rows = rows[1 : 1 + n_k + n_l]
    edge_rows = rows[1 + n_k + n_l :]
    if len(node_rows) != n_k + n_l or len(edge_rows) != n_edges:
        raise FormatError(f"{path}: node/edge counts do not match header")
    pos = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in node_rows]).reshape(-1, 3)
    sem = np.array([int(r[4]) for r in node_rows], dtype=np.int64)
    inst = np.array([int(r[5]) for r in node_rows], dtype=np.int64)
    feat = np.array([_FEATURE_BY_NAME[r[6]] for r in node_rows], dtype=np.int64)
    by_kind = {"intra_k": [], "intra_l": [], "cross": []}
    for lineno, r in enumerate(edge_rows, start=2 + n_k + n_l):
        if len(r) != 3 or r[2] not in by_kind:
            raise FormatError(f"{path}: line {lineno}: bad edge row")
        by_kind[r[2]].append((int(r[0]), int(r[1])))
    arr = {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in by_kind.items()}

    def single(sl, edges, scan_index):
        return SingleGraph(
            pos[sl], sem[sl], inst[sl], feat[sl], np.full(sl.stop - sl.start, -1, dtype=np.int64),
            edges, scan_index,
        )

    g_k = single(slice(0, n_k), arr["intra_k"], int(scan_k))
    g_l = single(slice(n_k, n_k + n_l), arr["intra_l"] - n_k, int(scan_l))
    cross = arr["cross"].copy()
    cross[:, 1] -= n_k
    corr = {}
    for a, b in cross:
        corr[int(g_l.instance[b])] = int(g_k.instance[a])
    return CrossGraph(g_k, g_l, cross, corr)
