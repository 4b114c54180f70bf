"""Scan, label and pose I/O in SemanticKITTI layout, plus a synthetic scene generator.

Binary formats
--------------
``.bin``   little-endian float32 quadruples ``x y z remission`` per point.
``.label`` little-endian uint32 per point; low 16 bits semantic id, high 16 bits instance id.
``.ring``  little-endian uint16 per point (our sidecar; ring index used for curvature).
``poses``  one row-major 3x4 matrix per line.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, TaxonomyError

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-9
REPROJECT_TOL = 1e-6


@dataclass
class LidarScan:
    points: np.ndarray
    remission: Optional[np.ndarray] = None
    scan_index: int = 0
    # ring id per point; None means the whole scan is one consecutive sequence
    ring: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            bad = int(np.flatnonzero(~np.isfinite(self.points).all(axis=1))[0])
            raise DataError(f"non-finite coordinate at point {bad}")
        n = len(self.points)
        if self.remission is not None:
            self.remission = np.asarray(self.remission, dtype=np.float64)
            if len(self.remission) != n:
                raise DataError(f"remission length {len(self.remission)} != point count {n}")
        if self.ring is not None:
            self.ring = np.asarray(self.ring, dtype=np.int64)
            if len(self.ring) != n:
                raise DataError(f"ring length {len(self.ring)} != point count {n}")
        if self.scan_index < 0:
            raise DataError("scan_index must be non-negative")

    def __len__(self):
        return len(self.points)

    def subset(self, idx) -> "LidarScan":
        return LidarScan(
            self.points[idx],
            None if self.remission is None else self.remission[idx],
            self.scan_index,
            None if self.ring is None else self.ring[idx],
        )


@dataclass
class SemanticScan:
    scan: LidarScan
    labels: np.ndarray
    raw_instance: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.raw_instance = np.asarray(self.raw_instance, dtype=np.int64)
        n = len(self.scan)
        if len(self.labels) != n or len(self.raw_instance) != n:
            raise DataError(
                f"label count {len(self.labels)} / instance count {len(self.raw_instance)} "
                f"!= point count {n}"
            )

    @property
    def points(self):
        return self.scan.points

    def __len__(self):
        return len(self.scan)

    def subset(self, idx) -> "SemanticScan":
        return SemanticScan(self.scan.subset(idx), self.labels[idx], self.raw_instance[idx])


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise DataError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1) > ORTHO_TOL:
            raise DataError("rotation is not orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        """Composition: ``(a @ b)(p) == a(b(p))``."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def __repr__(self):
        return f"PoseSE3(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def nearest_rotation(m):
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


def relative_pose(pose_k: PoseSE3, pose_l: PoseSE3) -> PoseSE3:
    """Transform taking points of scan k into the frame of scan l."""
    return pose_l.inverse() @ pose_k


# --------------------------------------------------------------------------- files


def read_velodyne_bin(path, scan_index: int = 0) -> LidarScan:
    size = os.path.getsize(path)
    if size % 16:
        raise FormatError(f"{path}: size {size} is not a multiple of 16 bytes")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    finite = np.isfinite(raw[:, :3]).all(axis=1)
    if not finite.all():
        raise DataError(f"{path}: non-finite coordinate at point {int(np.flatnonzero(~finite)[0])}")
    return LidarScan(raw[:, :3].astype(np.float64), raw[:, 3].astype(np.float64), scan_index)


def write_velodyne_bin(path, scan: LidarScan):
    out = np.zeros((len(scan), 4), dtype="<f4")
    out[:, :3] = scan.points
    if scan.remission is not None:
        out[:, 3] = scan.remission
    out.tofile(path)


def split_label_words(words):
    words = np.asarray(words, dtype=np.uint32)
    return (words & 0xFFFF).astype(np.int64), (words >> 16).astype(np.int64)


def join_label_words(labels, instances):
    labels = np.asarray(labels, dtype=np.int64)
    instances = np.asarray(instances, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 0xFFFF:
        raise DataError("semantic id outside 16-bit range")
    if instances.min(initial=0) < 0 or instances.max(initial=0) > 0xFFFF:
        raise DataError("instance id outside 16-bit range")
    return (labels.astype(np.uint32) | (instances.astype(np.uint32) << 16)).astype(np.uint32)


def read_labels(path):
    size = os.path.getsize(path)
    if size % 4:
        raise FormatError(f"{path}: size {size} is not a multiple of 4 bytes")
    return split_label_words(np.fromfile(path, dtype="<u4"))


def write_labels(path, labels, instances):
    join_label_words(labels, instances).astype("<u4").tofile(path)


def read_rings(path):
    size = os.path.getsize(path)
    if size % 2:
        raise FormatError(f"{path}: size {size} is not a multiple of 2 bytes")
    return np.fromfile(path, dtype="<u2").astype(np.int64)


def write_rings(path, ring):
    np.asarray(ring).astype("<u2").tofile(path)


def _parse_pose_rows(path, expected=12):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != expected:
                raise FormatError(f"{path}: line {lineno}: expected {expected} numbers, got {len(tokens)}")
            try:
                rows.append((lineno, np.array([float(t) for t in tokens])))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    return rows


def _pose_from_row(values):
    m = values.reshape(3, 4)
    R = m[:, :3]
    projected = False
    if np.abs(R.T @ R - np.eye(3)).max() > REPROJECT_TOL or abs(np.linalg.det(R) - 1) > REPROJECT_TOL:
        projected = True
    # exact re-orthonormalization keeps the PoseSE3 invariant at 1e-9
    R = nearest_rotation(R) if projected or np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL else R
    return PoseSE3(R, m[:, 3]), projected


def read_poses(path, return_flags: bool = False):
    poses, flags = [], []
    for lineno, values in _parse_pose_rows(path):
        pose, projected = _pose_from_row(values)
        if projected:
            log.warning("%s: line %d rotation re-orthonormalized", path, lineno)
        poses.append(pose)
        flags.append(projected)
    return (poses, flags) if return_flags else poses


def format_pose_row(pose: PoseSE3) -> str:
    m = np.hstack([pose.rotation, pose.translation[:, None]])
    return " ".join(repr(float(v)) for v in m.ravel())


def write_poses(path, poses: Sequence[PoseSE3]):
    with open(path, "w") as fh:
        for pose in poses:
            fh.write(format_pose_row(pose) + "\n")


def read_calib_tr(path) -> PoseSE3:
    """Lidar-to-camera ``Tr`` entry of a KITTI calib.txt."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            key, _, rest = line.partition(":")
            if key.strip() == "Tr":
                values = rest.split()
                if len(values) != 12:
                    raise FormatError(f"{path}: line {lineno}: Tr needs 12 numbers")
                return _pose_from_row(np.array([float(v) for v in values]))[0]
    raise FormatError(f"{path}: no 'Tr' entry")


def camera_poses_to_lidar(poses, tr: PoseSE3):
    tr_inv = tr.inverse()
    return [tr_inv @ p @ tr for p in poses]


def estimate_rings(points):
    """Split a natively ordered scan into rings at azimuth wrap-arounds."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    az = np.arctan2(points[:, 1], points[:, 0])
    jumps = np.abs(np.diff(az)) > np.pi
    return np.concatenate([[0], np.cumsum(jumps)]).astype(np.int64)


# --------------------------------------------------------------------------- labels


@dataclass
class LabelMap:
    names: dict
    dynamic_to_static: dict = field(default_factory=dict)
    discard: frozenset = frozenset()

    @property
    def static_ids(self):
        return frozenset(k for k in self.names if k not in self.dynamic_to_static)

    @classmethod
    def from_dict(cls, d):
        try:
            names = {int(k): str(v) for k, v in d.get("names", {}).items()}
            dyn = {int(k): int(v) for k, v in d.get("dynamic_to_static", {}).items()}
            discard = frozenset(int(v) for v in d.get("discard", []))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"label map: {exc}") from None
        for src, dst in dyn.items():
            if dst in dyn:
                raise ConfigError(f"label map: dynamic id {src} maps to another dynamic id {dst}")
        return cls(names, dyn, discard)

    def to_dict(self):
        return {
            "names": dict(sorted(self.names.items())),
            "dynamic_to_static": dict(sorted(self.dynamic_to_static.items())),
            "discard": sorted(self.discard),
        }


def remap_labels(scan: SemanticScan, mapping, discard, static_ids=None) -> SemanticScan:
    """Fold dynamic classes into static ones and drop discarded classes.

    With ``static_ids=None`` every id outside ``mapping`` and ``discard`` counts as static.
    """
    mapping = {int(k): int(v) for k, v in dict(mapping).items()}
    discard = frozenset(int(v) for v in discard)
    labels = scan.labels
    if static_ids is not None:
        known = set(mapping) | set(static_ids) | discard
        unknown = np.setdiff1d(np.unique(labels), np.fromiter(known, dtype=np.int64, count=len(known)))
        if len(unknown):
            raise TaxonomyError(f"unknown semantic ids {unknown.tolist()}")
    out = labels.copy()
    for src, dst in mapping.items():
        out[labels == src] = dst
    keep = np.flatnonzero(~np.isin(out, np.fromiter(discard, dtype=np.int64, count=len(discard))))
    remapped = SemanticScan(scan.scan, out, scan.raw_instance)
    return remapped.subset(keep)


# --------------------------------------------------------------------------- synthetic scenes

LABEL_ID = {"car": 10, "sidewalk": 48, "building": 50, "fence": 51, "trunk": 71, "pole": 80}


@dataclass
class SceneConfig:
    seed: int = 0
    n_planes: int = 6
    n_cylinders: int = 6
    n_boxes: int = 3
    plane_labels: tuple = ("building", "sidewalk", "fence")
    cylinder_labels: tuple = ("pole", "trunk")
    box_labels: tuple = ("car",)
    noise_sigma: float = 0.02
    rotation_range_deg: float = 5.0
    translation_range_m: float = 1.0
    n_rings: int = 16
    fov_up_deg: float = 15.0
    fov_down_deg: float = -15.0
    azimuth_step_deg: float = 2.0
    sensor_height: float = 1.7
    scene_radius: float = 18.0
    min_distance: float = 4.0
    max_range: float = 60.0
    # "scattered": primitives around the sensor; "street": facades lining a corridor
    layout: str = "scattered"

    def validate(self):
        nonneg = ("noise_sigma", "rotation_range_deg", "translation_range_m")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"scene.{name} must be non-negative")
        if min(self.n_planes, self.n_cylinders, self.n_boxes) < 0:
            raise ConfigError("primitive counts must be non-negative")
        if self.n_planes + self.n_cylinders + self.n_boxes == 0:
            raise ConfigError("scene needs at least one primitive")
        for kind in ("plane_labels", "cylinder_labels", "box_labels"):
            for name in getattr(self, kind):
                if name not in LABEL_ID:
                    raise ConfigError(f"scene.{kind}: unknown label {name!r}")
        if self.n_rings < 1 or self.azimuth_step_deg <= 0:
            raise ConfigError("sensor needs at least one ring and a positive azimuth step")
        if self.scene_radius <= self.min_distance:
            raise ConfigError("scene_radius must exceed min_distance")
        if self.layout not in ("scattered", "street"):
            raise ConfigError(f"scene.layout: unknown layout {self.layout!r}")

    def ring_elevations(self):
        if self.n_rings == 1:
            return np.radians([0.5 * (self.fov_up_deg + self.fov_down_deg)])
        return np.radians(np.linspace(self.fov_down_deg, self.fov_up_deg, self.n_rings))

    def azimuths(self):
        step = self.azimuth_step_deg
        # half-step offset keeps rays off the atan2 branch cut
        return np.radians(np.arange(-180.0 + step / 2, 180.0, step))


@dataclass
class _Rect:
    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half: tuple


@dataclass
class _Cylinder:
    base: np.ndarray
    radius: float
    height: float


@dataclass
class _Box:
    center: np.ndarray
    yaw: float
    half: np.ndarray


def _ray_rect(dirs, r: _Rect):
    n = np.cross(r.u, r.v)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (r.center @ n) / denom
    hit = dirs * t[:, None] - r.center
    ok = (np.abs(denom) > 1e-12) & (t > 0)
    ok &= (np.abs(hit @ r.u) <= r.half[0]) & (np.abs(hit @ r.v) <= r.half[1])
    return np.where(ok, t, np.inf)


def _ray_cylinder(dirs, c: _Cylinder):
    dx, dy = dirs[:, 0], dirs[:, 1]
    a = dx * dx + dy * dy
    b = -2 * (dx * c.base[0] + dy * c.base[1])
    cc = c.base[0] ** 2 + c.base[1] ** 2 - c.radius**2
    disc = b * b - 4 * a * cc
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    z = dirs[:, 2] * t
    ok = (disc >= 0) & (a > 1e-12) & (t > 0) & (z >= c.base[2]) & (z <= c.base[2] + c.height)
    return np.where(ok, t, np.inf)


def _ray_box(dirs, b: _Box):
    cy, sy = np.cos(b.yaw), np.sin(b.yaw)
    rot = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    o = rot.T @ (-b.center)  # ray origin in box frame
    d = dirs @ rot
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-b.half - o) / d
        t2 = (b.half - o) / d
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    ok = (tmax >= tmin) & (tmin > 0)
    return np.where(ok, tmin, np.inf)


def _sample_position(rng, cfg: SceneConfig):
    r = rng.uniform(cfg.min_distance, cfg.scene_radius)
    a = rng.uniform(-np.pi, np.pi)
    return np.array([r * np.cos(a), r * np.sin(a)])


def _build_world(cfg: SceneConfig, rng):
    """Primitive list of (kind, geometry, label id)."""
    ground = -cfg.sensor_height
    prims = []
    z = np.array([0.0, 0.0, 1.0])
    for i in range(cfg.n_planes):
        name = cfg.plane_labels[i % len(cfg.plane_labels)]
        xy = _sample_position(rng, cfg)
        yaw = rng.uniform(-np.pi, np.pi)
        u = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        if name == "sidewalk":
            # slightly raised horizontal strip
            v = np.cross(z, u)
            half = (rng.uniform(4.0, 8.0), rng.uniform(1.0, 2.0))
            center = np.array([xy[0], xy[1], ground + 0.15])
            prims.append(("plane", _Rect(center, u, v, half), LABEL_ID[name]))
        else:
            if name == "building":
                half = (rng.uniform(3.0, 6.0), rng.uniform(2.5, 4.0))
            else:
                half = (rng.uniform(2.0, 4.0), rng.uniform(0.5, 0.8))
            center = np.array([xy[0], xy[1], ground + half[1]])
            prims.append(("plane", _Rect(center, u, z, half), LABEL_ID[name]))
    for i in range(cfg.n_cylinders):
        name = cfg.cylinder_labels[i % len(cfg.cylinder_labels)]
        xy = _sample_position(rng, cfg)
        if name == "pole":
            radius, height = rng.uniform(0.1, 0.2), rng.uniform(4.0, 7.0)
        else:
            radius, height = rng.uniform(0.2, 0.4), rng.uniform(2.0, 4.0)
        prims.append(("cylinder", _Cylinder(np.array([xy[0], xy[1], ground]), radius, height), LABEL_ID[name]))
    for i in range(cfg.n_boxes):
        name = cfg.box_labels[i % len(cfg.box_labels)]
        xy = _sample_position(rng, cfg)
        half = np.array([rng.uniform(2.0, 2.3), rng.uniform(0.85, 0.95), rng.uniform(0.7, 0.8)])
        center = np.array([xy[0], xy[1], ground + half[2]])
        prims.append(("box", _Box(center, rng.uniform(-np.pi, np.pi), half), LABEL_ID[name]))
    return prims


def _build_street(cfg: SceneConfig, rng):
    """Facade segments on both sides of a corridor along x, street furniture in front."""
    ground = -cfg.sensor_height
    z = np.array([0.0, 0.0, 1.0])
    ex = np.array([1.0, 0.0, 0.0])
    prims = []
    half_width = rng.uniform(7.0, 11.0)
    length = cfg.scene_radius
    n_fac = max(cfg.n_planes, 1)
    per_side = [n_fac - n_fac // 2, n_fac // 2]
    for side, count in zip((-1.0, 1.0), per_side):
        if count == 0:
            continue
        edges = np.linspace(-length, length, count + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            gap = rng.uniform(0.5, 2.0)
            half = ((b - a - gap) / 2, rng.uniform(3.0, 6.0))
            depth = side * (half_width + rng.uniform(0.0, 2.0))
            center = np.array([(a + b) / 2, depth, ground + half[1]])
            prims.append(("plane", _Rect(center, ex, z, half), LABEL_ID["building"]))
        walk = np.array([0.0, side * (half_width - 1.5), ground + 0.15])
        prims.append(("plane", _Rect(walk, ex, np.cross(z, ex), (length, 1.2)), LABEL_ID["sidewalk"]))
    for i in range(cfg.n_cylinders):
        name = cfg.cylinder_labels[i % len(cfg.cylinder_labels)]
        side = rng.choice([-1.0, 1.0])
        x = rng.uniform(-length, length)
        y = side * (half_width - rng.uniform(1.0, 2.5))
        if name == "pole":
            radius, height = rng.uniform(0.1, 0.2), rng.uniform(4.0, 7.0)
        else:
            radius, height = rng.uniform(0.2, 0.4), rng.uniform(2.0, 4.0)
        prims.append(("cylinder", _Cylinder(np.array([x, y, ground]), radius, height), LABEL_ID[name]))
    for i in range(cfg.n_boxes):
        name = cfg.box_labels[i % len(cfg.box_labels)]
        side = rng.choice([-1.0, 1.0])
        x = rng.uniform(-length, length)
        if abs(x) < cfg.min_distance:
            x = np.copysign(cfg.min_distance + abs(x), x)
        half = np.array([rng.uniform(2.0, 2.3), rng.uniform(0.85, 0.95), rng.uniform(0.7, 0.8)])
        center = np.array([x, side * (half_width - 4.0), ground + half[2]])
        prims.append(("box", _Box(center, rng.uniform(-0.1, 0.1), half), LABEL_ID[name]))
    return prims


def _cast(cfg: SceneConfig, prims):
    elev = cfg.ring_elevations()
    az = cfg.azimuths()
    ring = np.repeat(np.arange(len(elev)), len(az))
    e = np.repeat(elev, len(az))
    a = np.tile(az, len(elev))
    dirs = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=1)
    hits = np.full((len(dirs), max(len(prims), 1)), np.inf)
    for j, (kind, geom, _) in enumerate(prims):
        fn = {"plane": _ray_rect, "cylinder": _ray_cylinder, "box": _ray_box}[kind]
        hits[:, j] = fn(dirs, geom)
    which = np.argmin(hits, axis=1)
    t = hits[np.arange(len(dirs)), which]
    ok = np.isfinite(t) & (t <= cfg.max_range)
    labels = np.array([p[2] for p in prims], dtype=np.int64)
    return dirs[ok] * t[ok, None], labels[which[ok]], which[ok] + 1, ring[ok]


def _ring_order(points, cfg: SceneConfig):
    """Ring index by nearest elevation, then azimuth-sorted within each ring."""
    elev = cfg.ring_elevations()
    e = np.arctan2(points[:, 2], np.hypot(points[:, 0], points[:, 1]))
    ring = np.abs(e[:, None] - elev[None, :]).argmin(axis=1)
    az = np.arctan2(points[:, 1], points[:, 0])
    order = np.lexsort((az, ring))
    return order, ring[order]


def _draw_pose(cfg: SceneConfig, rng) -> PoseSE3:
    angle = np.radians(rng.uniform(0.0, cfg.rotation_range_deg))
    axis = np.array([rng.normal(0, 0.15), rng.normal(0, 0.15), 1.0])
    axis *= rng.choice([-1.0, 1.0]) / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
    direction = rng.normal(size=3) * np.array([1.0, 1.0, 0.1])
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(0.0, cfg.translation_range_m)
    return PoseSE3(R, t)


def _as_f32(x):
    # float32-representable values survive a .bin round trip unchanged
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def generate_synthetic_pair(config: SceneConfig, scan_index: int = 0):
    """Two labelled ring scans of one random world and the exact relative pose.

    Both sensors observe the same surface samples (those hit by rays from the first
    sensor), so the pose maps scan k onto scan l up to independent sensor noise.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    prims = (_build_street if config.layout == "street" else _build_world)(config, rng)
    world, labels, inst, _ = _cast(config, prims)
    gt = _draw_pose(config, rng)

    scans = []
    for k, frame_pts in enumerate((world, gt.apply(world))):
        order, ring = _ring_order(frame_pts, config)
        noise = rng.normal(scale=config.noise_sigma, size=frame_pts.shape) if config.noise_sigma > 0 else 0.0
        pts = _as_f32(frame_pts[order] + (noise[order] if np.ndim(noise) else 0.0))
        scan = LidarScan(pts, np.zeros(len(pts)), scan_index + k, ring)
        scans.append(SemanticScan(scan, labels[order], inst[order]))
    return scans[0], scans[1], gt
