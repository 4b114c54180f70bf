import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import clusters_bruteforce, curvature_bruteforce
from semgraph_reg.data_io import LidarScan
from semgraph_reg.errors import ConfigError
from semgraph_reg.features import (
    ClusterParams,
    GeometricClass,
    classify_geometry,
    compute_curvature,
    extract_geometry,
    extract_instances,
)

from conftest import make_scan


def random_ring_scan(rng, n, n_rings):
    ring = np.sort(rng.integers(0, n_rings, size=n))
    pts = rng.normal(size=(n, 3)) * rng.uniform(1, 30)
    return LidarScan(pts, None, 0, ring)


def test_straight_line_has_zero_curvature():
    pts = np.stack([np.linspace(5, 15, 21), np.full(21, 2.0), np.zeros(21)], axis=1)
    c, _ = compute_curvature(LidarScan(pts, None, 0, np.zeros(21, dtype=int)), 5)
    # interior points see symmetric neighbours
    assert np.abs(c[5:-5]).max() < 1e-12
    assert (classify_geometry(c[5:-5]) == GeometricClass.SURFACE).all()


def test_spike_point_is_corner():
    pts = np.stack([np.linspace(5, 15, 21), np.full(21, 2.0), np.zeros(21)], axis=1)
    pts[10, 2] = 3.0
    res = extract_geometry(LidarScan(pts, None, 0, np.zeros(21, dtype=int)))
    assert res.classes[10] == GeometricClass.CORNER


def test_zero_norm_point_flagged():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
    c, deg = compute_curvature(LidarScan(pts), 5)
    assert deg.tolist() == [True, False, False] and c[0] == 0.0


def test_threshold_boundary_is_corner():
    assert classify_geometry(np.array([0.1, 0.0999999]), 0.1).tolist() == [GeometricClass.CORNER, GeometricClass.SURFACE]


def test_neighbours_do_not_cross_rings():
    rng = np.random.default_rng(4)
    scan = random_ring_scan(rng, 40, 2)
    c, _ = compute_curvature(scan, 5)
    assert np.allclose(c, curvature_bruteforce(scan.points, scan.ring, 5), atol=1e-12, rtol=0)


@given(st.integers(0, 2**31), st.integers(1, 400), st.integers(1, 8), st.integers(1, 7))
def test_curvature_matches_bruteforce(seed, n, n_rings, window):
    rng = np.random.default_rng(seed)
    scan = random_ring_scan(rng, n, n_rings)
    c, _ = compute_curvature(scan, window)
    assert np.abs(c - curvature_bruteforce(scan.points, scan.ring, window)).max() < 1e-12


@given(st.integers(0, 2**31))
def test_curvature_invariant_under_rotation(seed):
    rng = np.random.default_rng(seed)
    scan = random_ring_scan(rng, 60, 3)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    c1, _ = compute_curvature(scan, 5)
    c2, _ = compute_curvature(LidarScan(scan.points @ q.T, None, 0, scan.ring), 5)
    assert np.allclose(c1, c2, atol=1e-10)


def test_midpoint_instance():
    scan = make_scan([[0, 0, 0], [0.1, 0, 0]], labels=np.array([7, 7]))
    inst = extract_instances(scan, ClusterParams(default=(2, 0.5)))
    assert len(inst) == 1
    assert np.allclose(inst[0].centroid, [0.05, 0, 0])


def test_far_points_no_instance():
    scan = make_scan([[0, 0, 0], [10, 0, 0]], labels=np.array([7, 7]))
    assert extract_instances(scan, ClusterParams(default=(2, 0.5))) == []


def test_labels_never_merge():
    scan = make_scan([[0, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0]], labels=np.array([1, 1, 2, 2]))
    inst = extract_instances(scan, ClusterParams(default=(2, 0.5)))
    assert sorted((i.label, tuple(i.members)) for i in inst) == [(1, (0, 1)), (2, (2, 3))]


def test_per_label_table_overrides_default():
    pts = [[0, 0, 0], [0.8, 0, 0], [20, 0, 0], [20.8, 0, 0]]
    scan = make_scan(pts, labels=np.array([1, 1, 2, 2]))
    inst = extract_instances(scan, ClusterParams({2: (2, 1.0)}, default=(2, 0.5)))
    assert [i.label for i in inst] == [2]


def test_cluster_params_validation():
    with pytest.raises(ConfigError):
        ClusterParams({1: (0, 1.0)})
    with pytest.raises(ConfigError):
        ClusterParams(default=(5, 0.0))


def random_blobs(rng, n):
    centers = rng.uniform(-10, 10, size=(rng.integers(1, 6), 3))
    pts = centers[rng.integers(0, len(centers), size=n)] + rng.normal(scale=rng.uniform(0.2, 1.5), size=(n, 3))
    labels = rng.integers(0, 3, size=n)
    return pts, labels


@given(st.integers(0, 2**31), st.integers(1, 200))
def test_clusters_match_union_find(seed, n):
    rng = np.random.default_rng(seed)
    pts, labels = random_blobs(rng, n)
    params = ClusterParams({1: (int(rng.integers(1, 6)), float(rng.uniform(0.3, 2)))},
                           default=(int(rng.integers(1, 6)), float(rng.uniform(0.3, 2))))
    inst = extract_instances(make_scan(pts, labels=labels), params)
    got = {frozenset(i.members.tolist()) for i in inst}
    assert got == clusters_bruteforce(pts, labels, params)


def test_instances_partial_and_centroids():
    rng = np.random.default_rng(9)
    pts, labels = random_blobs(rng, 150)
    inst = extract_instances(make_scan(pts, labels=labels), ClusterParams(default=(5, 0.8)))
    seen = np.concatenate([i.members for i in inst]) if inst else np.zeros(0, int)
    assert len(seen) == len(set(seen.tolist()))
    for i in inst:
        assert np.allclose(i.centroid, pts[i.members].mean(axis=0))
        assert (labels[i.members] == i.label).all()
    assert [i.instance_id for i in inst] == list(range(len(inst)))
