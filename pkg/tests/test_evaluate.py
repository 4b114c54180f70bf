import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from plyfile import PlyData

from oracles import axis_angle, groupby_bruteforce, random_rotation
from semgraph_reg.data_io import PoseSE3
from semgraph_reg.errors import UsageError
from semgraph_reg.evaluate import (
    RAMP,
    RegistrationMetrics,
    aggregate_attention,
    euler_to_rotation,
    export_heatmap,
    export_series,
    node_intensity,
    ramp_color,
    read_series,
    registration_recall,
    rotation_to_euler,
    rre,
    rte,
    score_pose,
    smoothness,
    write_metrics_json,
)

from conftest import tiny_cross_graph
from test_training import desk_graph

I = PoseSE3.identity()


def test_rre_examples():
    assert rre(I, I) == 0.0
    assert abs(rre(PoseSE3(axis_angle([0, 0, 1], math.radians(10)), np.zeros(3)), I) - 10.0) < 1e-9
    assert abs(rre(PoseSE3(axis_angle([1, 0, 0], math.pi), np.zeros(3)), I) - 180.0) < 1e-9


def test_rte_examples():
    assert rte(I, I) == 0.0
    assert abs(rte(PoseSE3(np.eye(3), [0.3, 0.4, 0]), I) - 0.5) < 1e-12


@given(st.integers(0, 2**31))
def test_rre_symmetric_and_left_invariant(seed):
    rng = np.random.default_rng(seed)
    a = PoseSE3(random_rotation(rng), rng.normal(size=3))
    b = PoseSE3(random_rotation(rng), rng.normal(size=3))
    q = PoseSE3(random_rotation(rng), np.zeros(3))
    assert abs(rre(a, b) - rre(b, a)) < 1e-6
    assert abs(rre(q @ a, q @ b) - rre(a, b)) < 1e-6
    assert 0 <= rre(a, b) <= 180


@given(st.integers(0, 2**31))
def test_rte_depends_on_translation_difference_only(seed):
    rng = np.random.default_rng(seed)
    a = PoseSE3(random_rotation(rng), rng.normal(size=3))
    b = PoseSE3(random_rotation(rng), rng.normal(size=3))
    off = rng.normal(size=3) * 10
    moved = rte(PoseSE3(a.rotation, a.translation + off), PoseSE3(b.rotation, b.translation + off))
    assert abs(moved - np.linalg.norm(a.translation - b.translation)) < 1e-9


def test_success_thresholds_are_strict():
    edge_t = PoseSE3(np.eye(3), [0.6, 0, 0])
    assert not score_pose(edge_t, I).success
    assert score_pose(PoseSE3(np.eye(3), [0.5999, 0, 0]), I).success
    # an exact 5 degree rotation does not survive the trace round trip, so probe just outside
    edge_r = PoseSE3(axis_angle([0, 0, 1], math.radians(5.0001)), np.zeros(3))
    assert not score_pose(edge_r, I).success
    assert score_pose(PoseSE3(axis_angle([0, 0, 1], math.radians(4.999)), np.zeros(3)), I).success
    assert not score_pose(I, I, degenerate=True).success


def test_recall_counting():
    s = registration_recall([score_pose(I, I)] * 3)
    assert s.recall == 100.0 and s.mean_rte == 0.0 and s.mean_rre == 0.0
    half = registration_recall([score_pose(PoseSE3(np.eye(3), [0.1, 0, 0]), I), score_pose(PoseSE3(np.eye(3), [5, 0, 0]), I)])
    assert half.recall == 50.0 and abs(half.mean_rte - 0.1) < 1e-12 and half.n_success == 1
    none = registration_recall([score_pose(PoseSE3(np.eye(3), [5, 0, 0]), I)])
    assert none.recall == 0.0 and none.mean_rte is None and none.mean_rre is None
    with pytest.raises(UsageError):
        registration_recall([])


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 20)), min_size=1, max_size=20), st.randoms())
def test_recall_order_invariant(vals, rnd):
    res = [RegistrationMetrics(r, t, t < 0.6 and r < 5) for r, t in vals]
    shuffled = res[:]
    rnd.shuffle(shuffled)
    a, b = registration_recall(res), registration_recall(shuffled)
    assert a.recall == b.recall and a.n_success == b.n_success
    if a.mean_rte is not None:
        assert abs(a.mean_rte - b.mean_rte) < 1e-12


def test_metrics_json(tmp_path):
    res = [score_pose(I, I), score_pose(PoseSE3(np.eye(3), [1, 0, 0]), I)]
    write_metrics_json(tmp_path / "m.json", res, ["a", "b"])
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["summary"]["recall"] == 50.0
    assert [p["pair"] for p in doc["pairs"]] == ["a", "b"]
    assert doc["thresholds"] == {"rte_m": 0.6, "rre_deg": 5.0}


# --------------------------------------------------------------------------- series


def test_euler_pure_yaw():
    roll, pitch, yaw = rotation_to_euler(axis_angle([0, 0, 1], math.radians(5)))
    assert abs(yaw - 5) < 1e-9 and abs(roll) < 1e-9 and abs(pitch) < 1e-9


@given(st.floats(-179, 179), st.floats(-85, 85), st.floats(-179, 179))
def test_euler_roundtrip(roll, pitch, yaw):
    back = rotation_to_euler(euler_to_rotation(roll, pitch, yaw))
    assert np.allclose(back, [roll, pitch, yaw], atol=1e-8)


def test_series_identity_zero_and_roundtrip(tmp_path):
    export_series([I] * 3, [I] * 3, tmp_path / "s.tsv")
    rows = [l.split("\t") for l in (tmp_path / "s.tsv").read_text().splitlines()[1:]]
    assert all(float(v) == 0.0 for r in rows for v in r[1:])
    rng = np.random.default_rng(0)
    preds = [PoseSE3(random_rotation(rng, 1.0), rng.normal(size=3)) for _ in range(10)]
    gts = [PoseSE3(random_rotation(rng, 1.0), rng.normal(size=3)) for _ in range(10)]
    export_series(preds, gts, tmp_path / "r.tsv")
    header = (tmp_path / "r.tsv").read_text().splitlines()[0]
    assert header.split("\t")[:7] == ["# index", "tx", "ty", "tz", "roll", "pitch", "yaw"]
    p2, g2 = read_series(tmp_path / "r.tsv")
    for a, b in zip(preds + gts, p2 + g2):
        assert np.abs(a.matrix() - b.matrix()).max() < 1e-9
    with pytest.raises(UsageError):
        export_series(preds, gts[:3], tmp_path / "x.tsv")


def test_smoothness_definition():
    poses = [PoseSE3(np.eye(3), [i * 1.0, 0, 0]) for i in range(5)]
    assert smoothness(poses)["tx"] == 0.0
    jitter = [PoseSE3(np.eye(3), [(-1) ** i * 1.0, 0, 0]) for i in range(5)]
    assert smoothness(jitter)["tx"] == pytest.approx(2.0)


# --------------------------------------------------------------------------- attention report


def scored_graphs(n):
    rng = np.random.default_rng(n)
    runs = []
    for i in range(n):
        cg, _ = desk_graph(i, "infer") if i % 2 else tiny_cross_graph(i)
        runs.append((cg, rng.random(cg.n_cross)))
    return runs


def test_single_class_half_weights():
    cg, _ = tiny_cross_graph(0)
    rep = aggregate_attention([(cg, np.full(cg.n_cross, 0.5))])
    assert rep.mean(semantic=50) == 0.5 and rep.n_edges == cg.n_cross


def test_aggregate_matches_groupby_oracle():
    runs = scored_graphs(6)
    rep = aggregate_attention(runs)
    by_class, by_feature, by_cell = groupby_bruteforce(runs)
    for table, ref in ((rep.by_class, by_class), (rep.by_feature, by_feature), (rep.by_cell, by_cell)):
        assert set(table) == set(ref)
        for k, (tot, n) in ref.items():
            assert table[k].count == n
            assert abs(table[k].total - tot) < 1e-9
    assert sum(c.count for c in rep.by_class.values()) == rep.n_edges


def test_means_are_convex_combinations():
    runs = scored_graphs(4)
    rep = aggregate_attention(runs)
    for s, c in rep.by_class.items():
        ws = np.concatenate([w[cg.g_l.semantic[cg.cross_edges[:, 1]] == s] for cg, w in runs])
        assert ws.min() - 1e-12 <= c.mean <= ws.max() + 1e-12


def test_report_table_layout():
    rep = aggregate_attention(scored_graphs(3))
    tsv = rep.to_tsv({50: "building", 80: "pole"}).splitlines()
    assert tsv[0].split("\t") == ["class", "corner", "surface", "total", "n_corner", "n_surface", "n_total"]
    assert tsv[-1].startswith("all\t")
    assert len(tsv) == len(rep.by_class) + 2
    assert any(row.startswith("building\t") for row in tsv)


def test_absent_cells_render_as_dash():
    cg, _ = tiny_cross_graph(1)  # surface-only graph
    tsv = aggregate_attention([(cg, np.full(cg.n_cross, 0.3))]).to_tsv().splitlines()
    assert tsv[1].split("\t")[1] == "-"


# --------------------------------------------------------------------------- heatmap


def test_ramp_endpoints_and_monotone_red():
    assert ramp_color(0.0).tolist() == [0, 0, 255]
    assert ramp_color(1.0).tolist() == [255, 0, 0]
    assert len(RAMP) == 5


def test_single_hot_edge_lights_its_endpoints():
    cg, _ = tiny_cross_graph(2)
    w = np.zeros(cg.n_cross)
    w[3] = 0.7
    inten = node_intensity(cg, w)
    a, b = cg.cross_joint()[3]
    assert inten[a] == 1.0 and inten[b] == 1.0
    assert np.count_nonzero(inten) == 2


def test_uniform_weights_uniform_colour_on_matched_points():
    cg, _ = tiny_cross_graph(3)
    inten = node_intensity(cg, np.full(cg.n_cross, 0.2))
    e = cg.cross_joint()
    touched = np.unique(e)
    assert np.all(inten[touched] == 1.0)


@pytest.mark.parametrize("side,count", [("both", None), ("k", "k"), ("l", "l")])
def test_heatmap_ply_roundtrip(tmp_path, side, count):
    cg, _ = tiny_cross_graph(4)
    w = np.random.default_rng(0).random(cg.n_cross)
    export_heatmap(cg, w, tmp_path / "h.ply", side=side)
    ply = PlyData.read(str(tmp_path / "h.ply"))
    v = ply["vertex"]
    n = {"both": cg.n_nodes, "k": cg.n_k, "l": cg.n_l}[side]
    assert v.count == n
    assert {p.name for p in v.properties} == {"x", "y", "z", "red", "green", "blue", "intensity"}
    inten = node_intensity(cg, w)
    sl = {"both": slice(None), "k": slice(0, cg.n_k), "l": slice(cg.n_k, None)}[side]
    assert np.allclose(v["intensity"], inten[sl], atol=1e-6)
    assert np.array_equal(np.stack([v["red"], v["green"], v["blue"]], 1), ramp_color(inten[sl]))


def test_heatmap_bad_side():
    cg, _ = tiny_cross_graph(5)
    with pytest.raises(UsageError):
        export_heatmap(cg, np.ones(cg.n_cross), "/tmp/x.ply", side="middle")
