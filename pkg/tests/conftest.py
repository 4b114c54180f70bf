import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from semgraph_reg.data_io import LidarScan, PoseSE3, SceneConfig, SemanticScan, generate_synthetic_pair  # noqa: E402
from semgraph_reg.features import ClusterParams  # noqa: E402
from semgraph_reg.pipeline import FeatureParams, GraphParams, build_pair_graph  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DESK_SCENE = dict(n_rings=8, azimuth_step_deg=4.0)


def desk_features():
    return FeatureParams(cluster=ClusterParams(default=(5, 1.5)))


@pytest.fixture
def desk_params():
    return desk_features(), GraphParams()


@pytest.fixture(scope="session")
def desk_pair():
    return generate_synthetic_pair(SceneConfig(seed=3, **DESK_SCENE))


def make_scan(points, labels=None, inst=None, ring=None, index=0):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    labels = np.zeros(n, dtype=np.int64) if labels is None else labels
    inst = np.zeros(n, dtype=np.int64) if inst is None else inst
    return SemanticScan(LidarScan(points, None, index, ring), labels, inst)


def small_rotation(rng, max_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    a = np.radians(rng.uniform(0, max_deg))
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * K @ K


def tiny_cross_graph(seed, n_points=8, spread=1.0, noise=0.01):
    """One instance of ``n_points`` per side: 2 * (n_points + 2) nodes after pruning."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-spread, spread, size=(n_points, 3)) + [8.0, 2.0, 0.5]
    gt = PoseSE3(small_rotation(rng, 3.0), rng.uniform(-0.2, 0.2, size=3))
    labels = np.full(n_points, 50)
    k = make_scan(pts, labels=labels, ring=np.zeros(n_points, dtype=int))
    l = make_scan(gt.apply(pts) + rng.normal(scale=noise, size=pts.shape), labels=labels,
                  ring=np.zeros(n_points, dtype=int), index=1)
    fp = FeatureParams(corner_threshold=1e9, cluster=ClusterParams(default=(2, 10.0)))
    cg = build_pair_graph(k, l, fp, GraphParams(nn_radius=3.0, max_neighbors=4), "infer")
    return cg, gt


DESK_CONFIG = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs", "desk.yaml")


@pytest.fixture
def criterion(request):
    """Record one acceptance line; printed again in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
        print(line)
        lines.append((number, line))
        return ok

    return record


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
