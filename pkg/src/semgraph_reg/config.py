"""Run configuration: nested dataclasses loaded from YAML with strict keys and overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .data_io import LabelMap, SceneConfig
from .errors import ConfigError
from .features import ClusterParams
from .model import SemGatConfig
from .pipeline import FeatureParams, GraphParams
from .training import TrainRunConfig

ENV_VAR = "SEMGRAPH_REG_CONFIG"

SEMANTIC_KITTI_NAMES = {
    0: "unlabeled", 1: "outlier", 10: "car", 11: "bicycle", 13: "bus", 15: "motorcycle",
    16: "on-rails", 18: "truck", 20: "other-vehicle", 30: "person", 31: "bicyclist",
    32: "motorcyclist", 40: "road", 44: "parking", 48: "sidewalk", 49: "other-ground",
    50: "building", 51: "fence", 52: "other-structure", 60: "lane-marking", 70: "vegetation",
    71: "trunk", 72: "terrain", 80: "pole", 81: "traffic-sign", 99: "other-object",
    252: "moving-car", 253: "moving-bicyclist", 254: "moving-person", 255: "moving-motorcyclist",
    256: "moving-on-rails", 257: "moving-bus", 258: "moving-truck", 259: "moving-other-vehicle",
}
SEMANTIC_KITTI_DYNAMIC = {252: 10, 253: 31, 254: 30, 255: 32, 256: 16, 257: 13, 258: 18, 259: 20}
SEMANTIC_KITTI_DISCARD = (0, 1, 40, 44)


def default_label_map() -> LabelMap:
    return LabelMap(dict(SEMANTIC_KITTI_NAMES), dict(SEMANTIC_KITTI_DYNAMIC), frozenset(SEMANTIC_KITTI_DISCARD))


# (min_size, tolerance_m) per class; sizes scale with how densely a class is usually sampled
DEFAULT_CLUSTER_TABLE = {
    10: (50, 0.5), 11: (20, 0.5), 13: (100, 0.5), 15: (20, 0.5), 16: (100, 0.5), 18: (100, 0.5),
    20: (50, 0.5), 30: (20, 0.5), 31: (20, 0.5), 32: (20, 0.5), 48: (100, 1.0), 49: (100, 1.0),
    50: (200, 2.0), 51: (100, 1.0), 52: (100, 1.0), 60: (50, 1.0), 70: (200, 1.0), 71: (50, 0.5),
    72: (200, 2.0), 80: (50, 0.5), 81: (50, 0.5), 99: (50, 1.0),
}


@dataclass
class EvalConfig:
    success_rte: float = 0.6
    success_rre: float = 5.0

    def validate(self):
        if self.success_rte <= 0 or self.success_rre <= 0:
            raise ConfigError("eval thresholds must be positive")
        return self


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    deterministic: bool = True
    # synthetic data uses its own small label set; set false to skip taxonomy checks
    apply_label_map: bool = True
    scene: SceneConfig = field(default_factory=SceneConfig)
    features: FeatureParams = field(
        default_factory=lambda: FeatureParams(cluster=ClusterParams(dict(DEFAULT_CLUSTER_TABLE)))
    )
    graph: GraphParams = field(default_factory=GraphParams)
    model: SemGatConfig = field(default_factory=SemGatConfig)
    train: TrainRunConfig = field(default_factory=TrainRunConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    labels: LabelMap = field(default_factory=default_label_map)

    def validate(self):
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.scene.validate()
        self.features.validate()
        self.graph.validate()
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        if self.graph.train_thresh != self.train.train_thresh or self.graph.infer_thresh != self.train.infer_thresh:
            raise ConfigError("graph and train cross-edge thresholds disagree")
        return self

    def label_map(self) -> Optional[LabelMap]:
        return self.labels if self.apply_label_map else None

    def to_dict(self):
        return {
            "seed": self.seed,
            "jobs": self.jobs,
            "deterministic": self.deterministic,
            "apply_label_map": self.apply_label_map,
            "scene": _plain(dataclasses.asdict(self.scene)),
            "features": {
                "window": self.features.window,
                "corner_threshold": self.features.corner_threshold,
                "cluster_default": list(self.features.cluster.default),
                "cluster_table": {k: list(v) for k, v in sorted(self.features.cluster.table.items())},
            },
            "graph": dataclasses.asdict(self.graph),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "eval": dataclasses.asdict(self.eval),
            "labels": self.labels.to_dict(),
        }

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False, default_flow_style=None)


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _fill(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    base = cls()
    kwargs = {}
    for k, v in data.items():
        default = getattr(base, k)
        kwargs[k] = _coerce(v, default, f"{where}.{k}")
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _coerce(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _features(data, where="features"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    allowed = {"window", "corner_threshold", "cluster_default", "cluster_table"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    base = RunConfig().features
    try:
        table = data.get("cluster_table", base.cluster.table)
        cluster = ClusterParams(
            {int(k): tuple(v) for k, v in table.items()},
            tuple(data.get("cluster_default", base.cluster.default)),
        )
        window = _coerce(data.get("window", base.window), base.window, f"{where}.window")
        thr = _coerce(data.get("corner_threshold", base.corner_threshold), base.corner_threshold, f"{where}.corner_threshold")
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return FeatureParams(window, thr, cluster)


SECTIONS = {"scene": SceneConfig, "graph": GraphParams, "model": SemGatConfig, "train": TrainRunConfig, "eval": EvalConfig}


def from_dict(data) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    cfg = RunConfig()
    for k in ("seed", "jobs", "deterministic", "apply_label_map"):
        if k in data:
            setattr(cfg, k, _coerce(data[k], getattr(cfg, k), k))
    for name, cls in SECTIONS.items():
        if name in data:
            setattr(cfg, name, _fill(cls, data[name], name))
    if "features" in data:
        cfg.features = _features(data["features"])
    if "labels" in data:
        cfg.labels = LabelMap.from_dict(data["labels"])
    return cfg.validate()


def apply_overrides(data: dict, overrides) -> dict:
    """``key.sub=value`` strings, values parsed as YAML scalars/lists."""
    data = dict(data or {})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from None
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            child = node.get(p)
            child = dict(child) if isinstance(child, dict) else {}
            node[p] = child
            node = child
        node[parts[-1]] = value
    return data


def load_config(path=None, overrides=()) -> RunConfig:
    """``path`` (or ``$SEMGRAPH_REG_CONFIG``) merged with overrides; defaults fill the rest."""
    path = path or os.environ.get(ENV_VAR)
    data = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML ({exc})") from None
    return from_dict(apply_overrides(data, overrides))
