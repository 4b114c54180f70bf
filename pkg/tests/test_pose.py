import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import axis_angle, random_rotation
from semgraph_reg import diffcore as dc
from semgraph_reg.data_io import LidarScan, PoseSE3
from semgraph_reg.errors import DegenerateGeometryError, DegenerateWeightsError, UnreliableGradientError
from semgraph_reg.pose import WeightedMatchSet, apply_transform, pose_gradients, weighted_svd, weighted_svd_diff


def test_self_match_is_identity():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(20, 3)) * 5
    T = weighted_svd(WeightedMatchSet(P, P, rng.random(20) + 0.1))
    assert np.abs(T.rotation - np.eye(3)).max() < 1e-12 and np.abs(T.translation).max() < 1e-12


def test_recovers_rotation_about_z():
    rng = np.random.default_rng(1)
    P = rng.normal(size=(30, 3)) * 4
    gt = PoseSE3(axis_angle([0, 0, 1], math.radians(30)), [1, 2, 0])
    T = weighted_svd(WeightedMatchSet(P, gt.apply(P), np.ones(30)))
    assert np.abs(T.matrix() - gt.matrix()).max() < 1e-9


def test_zero_weight_outliers_ignored():
    rng = np.random.default_rng(2)
    P = rng.normal(size=(50, 3)) * 4
    gt = PoseSE3(random_rotation(rng), rng.normal(size=3))
    Q = gt.apply(P)
    out = rng.random(50) < 0.3
    Q[out] = rng.normal(size=(out.sum(), 3)) * 30
    T = weighted_svd(WeightedMatchSet(P, Q, (~out).astype(float)))
    assert np.abs(T.matrix() - gt.matrix()).max() < 1e-9


def test_degenerate_inputs():
    P = np.random.default_rng(3).normal(size=(5, 3))
    with pytest.raises(DegenerateWeightsError):
        weighted_svd(WeightedMatchSet(P, P, np.zeros(5)))
    line = np.outer(np.arange(6.0), [1, 2, 3])
    with pytest.raises(DegenerateGeometryError, match="singular values"):
        weighted_svd(WeightedMatchSet(line, line + 1, np.ones(6)))


def test_planar_points_still_solvable():
    rng = np.random.default_rng(4)
    P = np.c_[rng.normal(size=(10, 2)), np.zeros(10)]
    gt = PoseSE3(axis_angle([1, 1, 0], 0.4), [0.5, 0, 1])
    T = weighted_svd(WeightedMatchSet(P, gt.apply(P), np.ones(10)))
    assert np.abs(T.matrix() - gt.matrix()).max() < 1e-9


@given(st.integers(0, 2**31))
def test_exact_recovery_and_proper_rotation(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(12, 3)) * 5
    gt = PoseSE3(random_rotation(rng, math.radians(179)), rng.uniform(-10, 10, size=3))
    T = weighted_svd(WeightedMatchSet(P, gt.apply(P), rng.random(12) + 0.05))
    assert abs(np.linalg.det(T.rotation) - 1) < 1e-12
    assert np.abs(T.matrix() - gt.matrix()).max() < 1e-9


@given(st.integers(0, 2**31))
def test_reflection_corrected_on_mirrored_input(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(10, 3))
    T = weighted_svd(WeightedMatchSet(P, P * [1, 1, -1], np.ones(10)))
    assert abs(np.linalg.det(T.rotation) - 1) < 1e-12


@given(st.integers(0, 2**31), st.floats(0.01, 100))
def test_uniform_weight_scaling_invariance(seed, lam):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(10, 3)) * 3
    Q = rng.normal(size=(10, 3)) * 3
    w = rng.random(10) + 0.1
    a = weighted_svd(WeightedMatchSet(P, Q, w)).matrix()
    b = weighted_svd(WeightedMatchSet(P, Q, w * lam)).matrix()
    assert np.abs(a - b).max() < 1e-12


@given(st.integers(0, 2**31))
def test_equivariance_under_common_rotation(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(10, 3)) * 3
    Q = rng.normal(size=(10, 3)) * 3
    w = rng.random(10) + 0.1
    Qr = random_rotation(rng)
    T = weighted_svd(WeightedMatchSet(P, Q, w))
    T2 = weighted_svd(WeightedMatchSet(P @ Qr.T, Q @ Qr.T, w))
    assert np.abs(T2.rotation - Qr @ T.rotation @ Qr.T).max() < 1e-9
    assert np.abs(T2.translation - Qr @ T.translation).max() < 1e-9


def test_literal_centroid_mode_differs_with_uneven_weights():
    rng = np.random.default_rng(5)
    P = rng.normal(size=(10, 3)) * 3
    Q = P + rng.normal(size=(10, 3))
    w = rng.random(10) + 0.1
    a = weighted_svd(WeightedMatchSet(P, Q, w), True).matrix()
    b = weighted_svd(WeightedMatchSet(P, Q, w), False).matrix()
    assert np.abs(a - b).max() > 1e-6
    gt = PoseSE3(axis_angle([0, 0, 1], 0.2), [1, 0, 0])
    c = weighted_svd(WeightedMatchSet(P, gt.apply(P), w), False)
    assert np.abs(c.matrix() - gt.matrix()).max() < 1e-9


def test_diff_path_matches_numpy_path():
    rng = np.random.default_rng(6)
    P, Q, w = rng.normal(size=(15, 3)), rng.normal(size=(15, 3)), rng.random(15) + 0.1
    d = weighted_svd_diff(dc.Tensor(w), P, Q)
    assert np.abs(d.to_pose().matrix() - weighted_svd(WeightedMatchSet(P, Q, w)).matrix()).max() < 1e-12


def fd_weight_grad(P, Q, w, gR, gt_, centroids=True, h=1e-6):
    def f(ww):
        T = weighted_svd(WeightedMatchSet(P, Q, ww), centroids)
        return float((T.rotation * gR).sum() + (T.translation * gt_).sum())

    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("centroids", [True, False])
def test_weight_gradients_match_finite_differences(seed, centroids):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(10, 3)) * 3
    gt = PoseSE3(random_rotation(rng, 0.5), rng.normal(size=3))
    Q = gt.apply(P) + rng.normal(scale=0.3, size=P.shape)
    w = rng.random(10) + 0.1
    gR, gt_ = rng.normal(size=(3, 3)), rng.normal(size=3)
    g = pose_gradients(WeightedMatchSet(P, Q, w), gR, gt_, centroids)
    num = fd_weight_grad(P, Q, w, gR, gt_, centroids)
    assert np.abs(g - num).max() / np.abs(num).max() < 1e-4


def test_identity_alignment_gradients_finite():
    rng = np.random.default_rng(7)
    P = rng.normal(size=(8, 3)) * [3, 2, 1]
    w = np.ones(8)
    gR, gt_ = rng.normal(size=(3, 3)), rng.normal(size=3)
    g = pose_gradients(WeightedMatchSet(P, P + 0.01 * rng.normal(size=P.shape), w), gR, gt_)
    assert np.isfinite(g).all()


def test_uniform_scale_direction_has_zero_gradient():
    rng = np.random.default_rng(8)
    P, Q = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    w = rng.random(10) + 0.1
    g = pose_gradients(WeightedMatchSet(P, Q, w), rng.normal(size=(3, 3)), rng.normal(size=3))
    # d/dλ L(λ w) at λ = 1 is w · ∇L
    assert abs(w @ g) < 1e-8


def test_repeated_singular_values_flagged():
    # a regular tetrahedron centred at the origin has an isotropic covariance
    P = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    with pytest.raises(UnreliableGradientError):
        pose_gradients(WeightedMatchSet(P, P, np.ones(4)), np.ones((3, 3)), np.ones(3))


def test_apply_transform_cases():
    rng = np.random.default_rng(9)
    scan = LidarScan(rng.normal(size=(50, 3)) * 10)
    assert np.array_equal(apply_transform(scan, PoseSE3.identity()).points, scan.points)
    A = PoseSE3(random_rotation(rng), rng.normal(size=3))
    B = PoseSE3(random_rotation(rng), rng.normal(size=3))
    back = apply_transform(apply_transform(scan, A), A.inverse())
    assert np.abs(back.points - scan.points).max() < 1e-12
    seq = apply_transform(apply_transform(scan, A), B)
    assert np.abs(apply_transform(scan, B @ A).points - seq.points).max() < 1e-12
