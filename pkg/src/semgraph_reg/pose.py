"""Weighted rigid alignment of matched points, with a differentiable twin."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .data_io import LidarScan, PoseSE3
from .errors import DegenerateGeometryError, DegenerateWeightsError, UnreliableGradientError

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
SINGULAR_GAP = 1e-8


@dataclass
class WeightedMatchSet:
    source: np.ndarray  # points of scan k
    target: np.ndarray  # matched points of scan l
    weights: np.ndarray

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64).reshape(-1, 3)
        self.target = np.asarray(self.target, dtype=np.float64).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not len(self.source) == len(self.target) == len(self.weights):
            raise ValueError("source, target and weights must have equal length")

    def __len__(self):
        return len(self.weights)


def _check_weights(w):
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateWeightsError("weights must be finite and non-negative")
    if w.sum() <= 0:
        raise DegenerateWeightsError("all weights are zero")


def _check_rank(S):
    if S[0] <= 0 or S[1] <= RANK_TOL * S[0]:
        raise DegenerateGeometryError(
            f"cross-covariance rank < 2 (singular values {S.tolist()}); matches are collinear or coincident"
        )


def cross_covariance(matches: WeightedMatchSet, weighted_centroids=True):
    w = matches.weights
    if weighted_centroids:
        cs = (w[:, None] * matches.source).sum(0) / w.sum()
        ct = (w[:, None] * matches.target).sum(0) / w.sum()
    else:
        cs = matches.source.mean(axis=0)
        ct = matches.target.mean(axis=0)
    H = (matches.source - cs).T @ (w[:, None] * (matches.target - ct))
    return H, cs, ct


def weighted_svd(matches: WeightedMatchSet, weighted_centroids=True) -> PoseSE3:
    """Pose taking ``source`` onto ``target`` minimizing the weighted squared residual."""
    _check_weights(matches.weights)
    H, cs, ct = cross_covariance(matches, weighted_centroids)
    U, S, Vt = np.linalg.svd(H)
    _check_rank(S)
    V = Vt.T
    d = 1.0 if np.linalg.det(V @ U.T) >= 0 else -1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    return PoseSE3(R, ct - R @ cs)


@dataclass
class DiffPose:
    rotation: dc.Tensor
    translation: dc.Tensor
    singular_values: np.ndarray

    def gradient_reliable(self):
        s = np.sort(self.singular_values)
        gap = np.diff(s).min()
        return gap > SINGULAR_GAP * max(1.0, s[-1])

    def to_pose(self):
        return PoseSE3(self.rotation.data, self.translation.data)


def weighted_svd_diff(weights: dc.Tensor, source, target, weighted_centroids=True) -> DiffPose:
    """Differentiable weighted alignment; gradients flow into ``weights``."""
    w = dc.as_tensor(weights)
    _check_weights(w.data)
    P = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    Q = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    wc = dc.reshape(w, (len(P), 1))
    if weighted_centroids:
        total = dc.tsum(w)
        cs = dc.tsum(wc * P, axis=0) / total
        ct = dc.tsum(wc * Q, axis=0) / total
    else:
        cs = dc.Tensor(P.mean(axis=0))
        ct = dc.Tensor(Q.mean(axis=0))
    Pc = dc.Tensor(P) - dc.reshape(cs, (1, 3))
    Qc = dc.Tensor(Q) - dc.reshape(ct, (1, 3))
    H = dc.transpose(Pc) @ (wc * Qc)
    R, S = dc.kabsch_rotation(H)
    _check_rank(S)
    t = ct - dc.reshape(R @ dc.reshape(cs, (3, 1)), (3,))
    return DiffPose(R, t, S)


def pose_gradients(matches: WeightedMatchSet, upstream_rotation, upstream_translation, weighted_centroids=True):
    """``dL/dw`` given ``dL/dR`` and ``dL/dt`` at the aligned pose."""
    w = dc.Tensor(matches.weights, requires_grad=True)
    pose = weighted_svd_diff(w, matches.source, matches.target, weighted_centroids)
    if not pose.gradient_reliable():
        raise UnreliableGradientError(
            f"repeated singular values {pose.singular_values.tolist()}; gradient through SVD undefined"
        )
    loss = dc.tsum(pose.rotation * np.asarray(upstream_rotation)) + dc.tsum(
        pose.translation * np.asarray(upstream_translation)
    )
    dc.backward(loss)
    return w.grad


def apply_transform(scan: LidarScan, pose: PoseSE3) -> LidarScan:
    return LidarScan(pose.apply(scan.points), scan.remission, scan.scan_index, scan.ring)
