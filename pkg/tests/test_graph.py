import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import (
    cross_edges_bruteforce,
    match_instances_bruteforce,
    prune_oracle,
    single_graph_edges_bruteforce,
)
from semgraph_reg.data_io import PoseSE3, SceneConfig, generate_synthetic_pair
from semgraph_reg.features import ClusterParams, extract_geometry, extract_instances
from semgraph_reg.graph import (
    CrossGraph,
    FeatureId,
    build_cross_edges,
    build_single_graph,
    edge_count_report,
    match_instances,
    prune_cross_graph,
    read_cross_graph,
    write_cross_graph,
)
from semgraph_reg.errors import FormatError
from semgraph_reg.pipeline import build_pair_graph, scan_graph

from conftest import DESK_SCENE, desk_features, make_scan


def edge_set(edges):
    return {(int(a), int(b)) for a, b in edges}


def graph_for(scan, features=None, radius=0.8, cap=10):
    f = features or desk_features()
    curv = extract_geometry(scan.scan, f.window, f.corner_threshold)
    inst = extract_instances(scan, f.cluster)
    return build_single_graph(scan, curv, inst, radius, cap), curv, inst


def test_two_points_one_instance():
    scan = make_scan([[1, 0, 0], [1.5, 0, 0]], labels=np.array([3, 3]))
    g, curv, _ = graph_for(scan, desk_features().__class__(cluster=ClusterParams(default=(2, 1.0))))
    assert len(g) == 4
    f = curv.classes
    expected = {(1, 0), (2, 1), (3, 1)}
    if f[0] == f[1]:
        expected |= {(2, 3), (3, 2)}
    assert edge_set(g.edges) == expected
    assert g.feature[:2].tolist() == [FeatureId.ORIGIN, FeatureId.CENTROID]


def test_empty_scan_only_origin():
    scan = make_scan(np.zeros((0, 3)))
    g, _, _ = graph_for(scan)
    assert len(g) == 1 and g.n_edges == 0 and g.feature[0] == FeatureId.ORIGIN


def test_neighbor_cap_ties_by_index():
    # five collinear same-class points equally spaced: node 0's two nearest are 1 then 2
    pts = np.stack([np.linspace(10, 10.4, 5), np.zeros(5), np.zeros(5)], axis=1)
    scan = make_scan(pts, labels=np.full(5, 4))
    g, _, _ = graph_for(scan, desk_features().__class__(cluster=ClusterParams(default=(1, 1.0))), radius=1.0, cap=2)
    assert edge_set(g.edges) == single_graph_edges_bruteforce(g, 1.0, 2)


@pytest.mark.parametrize("seed", range(6))
def test_single_graph_grammar(seed):
    k, _, _ = generate_synthetic_pair(SceneConfig(seed=seed, **DESK_SCENE))
    g, curv, inst = graph_for(k)
    e = [tuple(x) for x in g.edges.tolist()]
    assert len(e) == len(set(e)), "duplicate edges"
    assert edge_set(g.edges) == single_graph_edges_bruteforce(g, 0.8, 10)
    # node table faithful to scan and instances
    pm = g.point_mask()
    assert np.array_equal(g.positions[pm], k.points[g.source_index[pm]])
    assert np.array_equal(g.feature[pm], curv.classes[g.source_index[pm]])
    for i in inst:
        c = g.centroid_nodes()[i.instance_id]
        assert np.allclose(g.positions[c], i.centroid)


def test_single_graph_scan_order_independent():
    k, _, _ = generate_synthetic_pair(SceneConfig(seed=1, **DESK_SCENE))
    g1, _, _ = graph_for(k)
    g2, _, _ = graph_for(k)
    assert np.array_equal(g1.edges, g2.edges) and np.array_equal(g1.positions, g2.positions)


def pair_graphs(seed, thresh):
    k, l, gt = generate_synthetic_pair(SceneConfig(seed=seed, **DESK_SCENE))
    g_k, _, _ = graph_for(k)
    g_l, _, _ = graph_for(l)
    corr = match_instances(g_k, g_l, thresh)
    return g_k, g_l, corr, gt


@pytest.mark.parametrize("seed", range(5))
def test_match_and_cross_edges_bruteforce(seed):
    g_k, g_l, corr, _ = pair_graphs(seed, 3.0)
    assert corr == match_instances_bruteforce(g_k, g_l, 3.0)
    cg = build_cross_edges(g_k, g_l, corr, 2.0)
    assert edge_set(cg.cross_edges) == cross_edges_bruteforce(g_k, g_l, corr, 2.0)
    assert len(cg.cross_edges) == len(edge_set(cg.cross_edges))
    # grouped by destination
    assert (np.diff(cg.cross_edges[:, 1]) >= 0).all()


def test_cross_edges_respect_feature_class():
    g_k, g_l, corr, _ = pair_graphs(0, 3.0)
    cg = build_cross_edges(g_k, g_l, corr, 2.0)
    a, b = cg.cross_edges[:, 0], cg.cross_edges[:, 1]
    assert (g_k.feature[a] == g_l.feature[b]).all()
    assert (g_k.semantic[a] == g_l.semantic[b]).all()


@pytest.mark.parametrize("seed", range(4))
def test_prune_matches_oracle_and_is_idempotent(seed):
    g_k, g_l, corr, _ = pair_graphs(seed, 2.0)
    cg = build_cross_edges(g_k, g_l, corr, 2.0)
    pruned = prune_cross_graph(cg)
    keep_k, keep_l = prune_oracle(cg)
    assert np.array_equal(pruned.g_k.positions, g_k.positions[keep_k])
    assert np.array_equal(pruned.g_l.positions, g_l.positions[keep_l])
    # cross edges survive intact, mapped by position
    before = {(tuple(g_k.positions[a]), tuple(g_l.positions[b])) for a, b in cg.cross_edges}
    after = {(tuple(pruned.g_k.positions[a]), tuple(pruned.g_l.positions[b])) for a, b in pruned.cross_edges}
    assert before == after
    assert len(pruned.unmatched_l_points()) == 0
    again = prune_cross_graph(pruned)
    assert np.array_equal(again.g_k.positions, pruned.g_k.positions)
    assert np.array_equal(again.g_l.edges, pruned.g_l.edges)
    assert np.array_equal(again.cross_edges, pruned.cross_edges)


def test_identical_scans_zero_length_twins():
    k, _, _ = generate_synthetic_pair(SceneConfig(seed=5, **DESK_SCENE))
    g, _, _ = graph_for(k)
    cg = prune_cross_graph(build_cross_edges(g, g, match_instances(g, g, 2.0), 2.0))
    twins = {(int(a), int(b)) for a, b in cg.cross_edges if np.array_equal(cg.g_k.positions[a], cg.g_l.positions[b])}
    assert len({b for _, b in twins}) == int(cg.g_l.point_mask().sum())


def test_edge_count_report_and_sparsity_definition():
    g_k, g_l, corr, _ = pair_graphs(1, 2.0)
    cg = prune_cross_graph(build_cross_edges(g_k, g_l, corr, 2.0))
    rep = edge_count_report(cg)
    assert rep["edges_total"] == cg.g_k.n_edges + cg.g_l.n_edges + cg.n_cross
    assert rep["fc_reference"] == cg.n_k * cg.n_l
    assert rep["ratio"] == rep["edges_total"] / rep["fc_reference"]


def test_graph_file_roundtrip(tmp_path):
    g_k, g_l, corr, _ = pair_graphs(2, 2.0)
    cg = prune_cross_graph(build_cross_edges(g_k, g_l, corr, 2.0))
    write_cross_graph(tmp_path / "g.graph", cg)
    back = read_cross_graph(tmp_path / "g.graph")
    for a, b in ((cg.g_k, back.g_k), (cg.g_l, back.g_l)):
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.semantic, b.semantic)
        assert np.array_equal(a.instance, b.instance)
        assert np.array_equal(a.feature, b.feature)
        assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(cg.cross_edges, back.cross_edges)
    assert back.correspondences == {l: k for l, k in cg.correspondences.items() if l in set(back.correspondences)}


def test_graph_file_bad_header(tmp_path):
    (tmp_path / "x.graph").write_text("NOTAGRAPH\n")
    with pytest.raises(FormatError):
        read_cross_graph(tmp_path / "x.graph")


@given(st.integers(0, 2**31))
def test_cross_graph_invariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, size=(60, 3)) + [10, 0, 0]
    labels = rng.integers(0, 2, size=60)
    f = desk_features().__class__(cluster=ClusterParams(default=(2, 2.0)))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.linalg.det(q))
    T = PoseSE3(q, rng.normal(size=3))
    s1 = make_scan(pts, labels=labels)
    s2 = make_scan(pts + rng.normal(scale=0.1, size=pts.shape), labels=labels)
    g_k, _, _ = graph_for(s1, f)
    g_l, _, _ = graph_for(s2, f)
    cg = build_cross_edges(g_k, g_l, match_instances(g_k, g_l, 3.0), 1.0)
    # moving both scans by the same rigid motion keeps the combinatorial structure
    from semgraph_reg.graph import SingleGraph

    def moved(g):
        pos = g.positions.copy()
        pos[1:] = T.apply(pos[1:])
        return SingleGraph(pos, g.semantic, g.instance, g.feature, g.source_index, g.edges, g.scan_index)

    mk, ml = moved(g_k), moved(g_l)
    cg2 = build_cross_edges(mk, ml, match_instances(mk, ml, 3.0), 1.0)
    assert cg.correspondences == cg2.correspondences
    assert edge_set(cg.cross_edges) == edge_set(cg2.cross_edges)


def test_pipeline_modes_threshold(desk_pair, desk_params):
    k, l, _ = desk_pair
    fp, gp = desk_params
    train_g = build_pair_graph(k, l, fp, gp, "train")
    infer_g = build_pair_graph(k, l, fp, gp, "infer")
    assert train_g.n_cross > infer_g.n_cross
    d = np.linalg.norm(infer_g.g_k.positions[infer_g.cross_edges[:, 0]] - infer_g.g_l.positions[infer_g.cross_edges[:, 1]], axis=1)
    assert d.max() <= 2.0
    with pytest.raises(ValueError):
        gp.thresh("other")
