"""Registration metrics, pose series export, and attention explainability reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .data_io import PoseSE3
from .errors import DataError, UsageError
from .graph import CrossGraph, FeatureId

SUCCESS_RTE = 0.6  # meters
SUCCESS_RRE = 5.0  # degrees


def rre(pred: PoseSE3, gt: PoseSE3) -> float:
    """Relative rotation error in degrees."""
    m = gt.rotation.T @ pred.rotation
    # atan2 keeps full precision near 0 and 180 degrees where acos of the trace does not
    s = 0.5 * math.sqrt((m[2, 1] - m[1, 2]) ** 2 + (m[0, 2] - m[2, 0]) ** 2 + (m[1, 0] - m[0, 1]) ** 2)
    c = 0.5 * (np.trace(m) - 1.0)
    return math.degrees(math.atan2(s, c))


def rte(pred: PoseSE3, gt: PoseSE3) -> float:
    return float(np.linalg.norm(gt.translation - pred.translation))


@dataclass
class RegistrationMetrics:
    rre: float
    rte: float
    success: bool
    degenerate: bool = False  # no pose could be solved; scored as identity


def score_pose(pred, gt, max_rte=SUCCESS_RTE, max_rre=SUCCESS_RRE, degenerate=False) -> RegistrationMetrics:
    r, t = rre(pred, gt), rte(pred, gt)
    return RegistrationMetrics(r, t, bool(t < max_rte and r < max_rre and not degenerate), degenerate)


class RecallSummary(NamedTuple):
    recall: float  # percent
    mean_rte: Optional[float]  # over successes only
    mean_rre: Optional[float]
    n_total: int
    n_success: int


def registration_recall(results: Sequence[RegistrationMetrics]) -> RecallSummary:
    if len(results) == 0:
        raise UsageError("registration_recall needs at least one result")
    ok = [r for r in results if r.success]
    rr = 100.0 * len(ok) / len(results)
    if not ok:
        return RecallSummary(rr, None, None, len(results), 0)
    return RecallSummary(
        rr, float(np.mean([r.rte for r in ok])), float(np.mean([r.rre for r in ok])), len(results), len(ok)
    )


def write_metrics_json(path, results: Sequence[RegistrationMetrics], pair_ids=None, extra=None):
    summary = registration_recall(results)
    ids = list(pair_ids) if pair_ids is not None else [str(i) for i in range(len(results))]
    doc = {
        "summary": summary._asdict(),
        "thresholds": {"rte_m": SUCCESS_RTE, "rre_deg": SUCCESS_RRE},
        "pairs": [dict(pair=i, **asdict(r)) for i, r in zip(ids, results)],
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return summary


# --------------------------------------------------------------------------- series


def rotation_to_euler(R) -> Tuple[float, float, float]:
    """``(roll, pitch, yaw)`` in degrees with ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    R = np.asarray(R, dtype=np.float64)
    pitch = math.asin(min(1.0, max(-1.0, -R[2, 0])))
    yaw = math.atan2(R[1, 0], R[0, 0])
    roll = math.atan2(R[2, 1], R[2, 2])
    return math.degrees(roll), math.degrees(pitch), math.degrees(yaw)


def euler_to_rotation(roll, pitch, yaw):
    r, p, y = (math.radians(v) for v in (roll, pitch, yaw))
    cr, sr, cp, sp, cy, sy = math.cos(r), math.sin(r), math.cos(p), math.sin(p), math.cos(y), math.sin(y)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


SERIES_COLUMNS = ["tx", "ty", "tz", "roll", "pitch", "yaw"]


def pose_components(pose: PoseSE3):
    return [*map(float, pose.translation), *rotation_to_euler(pose.rotation)]


def export_series(preds: Sequence[PoseSE3], gts: Sequence[PoseSE3], path):
    """Tab-separated ``index`` + six prediction components + the same six for ground truth.

    Angles are Z-Y-X Euler angles in degrees; gnuplot reads the file directly
    (``plot 'f' using 1:7, '' using 1:13`` compares yaw).
    """
    if len(preds) != len(gts):
        raise UsageError(f"{len(preds)} predictions but {len(gts)} ground-truth poses")
    header = "# index\t" + "\t".join(SERIES_COLUMNS + [f"gt_{c}" for c in SERIES_COLUMNS])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, (p, g) in enumerate(zip(preds, gts)):
            vals = pose_components(p) + pose_components(g)
            fh.write("\t".join([str(i)] + [repr(v) for v in vals]) + "\n")


def read_series(path):
    """Returns ``(preds, gts)`` as pose lists rebuilt from the series file."""
    preds, gts = [], []
    for line in open(path):
        if not line.strip() or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split("\t")[1:]]
        if len(vals) != 12:
            raise DataError(f"{path}: expected 13 columns, got {len(vals) + 1}")
        for dst, v in ((preds, vals[:6]), (gts, vals[6:])):
            dst.append(PoseSE3(euler_to_rotation(*v[3:6]), v[:3]))
    return preds, gts


def smoothness(poses: Sequence[PoseSE3]) -> Dict[str, float]:
    """Our stand-in smoothness score: std of frame-to-frame differences per component."""
    if len(poses) < 2:
        return {c: 0.0 for c in SERIES_COLUMNS}
    comp = np.array([pose_components(p) for p in poses])
    d = np.diff(comp, axis=0)
    return {c: float(v) for c, v in zip(SERIES_COLUMNS, d.std(axis=0))}


# --------------------------------------------------------------------------- attention


GEOMETRIC = (FeatureId.CORNER, FeatureId.SURFACE)


@dataclass
class Cell:
    total: float = 0.0
    count: int = 0

    @property
    def mean(self):
        return self.total / self.count if self.count else None


@dataclass
class AttentionReport:
    """Mean cross-edge weight grouped by the second-scan endpoint's semantic and geometric class."""

    by_class: Dict[int, Cell] = field(default_factory=dict)
    by_feature: Dict[int, Cell] = field(default_factory=dict)
    by_cell: Dict[Tuple[int, int], Cell] = field(default_factory=dict)
    n_edges: int = 0

    def mean(self, semantic=None, feature=None):
        if semantic is not None and feature is not None:
            c = self.by_cell.get((int(semantic), int(feature)))
        elif semantic is not None:
            c = self.by_class.get(int(semantic))
        elif feature is not None:
            c = self.by_feature.get(int(feature))
        else:
            tot = sum(c.total for c in self.by_class.values())
            return tot / self.n_edges if self.n_edges else None
        return c.mean if c is not None else None

    def to_tsv(self, names: Optional[Dict[int, str]] = None) -> str:
        """Rows per semantic class, columns corner/surface/total; empty cells render as ``-``."""
        names = names or {}
        fmt = lambda v: "-" if v is None else f"{v:.3f}"
        lines = ["class\tcorner\tsurface\ttotal\tn_corner\tn_surface\tn_total"]
        for s in sorted(self.by_class):
            cells = [self.by_cell.get((s, int(f))) for f in GEOMETRIC]
            lines.append("\t".join([
                names.get(s, str(s)),
                *[fmt(c.mean if c else None) for c in cells],
                fmt(self.by_class[s].mean),
                *[str(c.count if c else 0) for c in cells],
                str(self.by_class[s].count),
            ]))
        feats = [self.by_feature.get(int(f)) for f in GEOMETRIC]
        lines.append("\t".join([
            "all",
            *[fmt(c.mean if c else None) for c in feats],
            fmt(self.mean()),
            *[str(c.count if c else 0) for c in feats],
            str(self.n_edges),
        ]))
        return "\n".join(lines) + "\n"


def aggregate_attention(runs: Sequence[Tuple[CrossGraph, np.ndarray]]) -> AttentionReport:
    rep = AttentionReport()
    for cg, w in runs:
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if len(w) != cg.n_cross:
            raise ValueError(f"{len(w)} weights for {cg.n_cross} cross edges")
        dst = cg.cross_edges[:, 1]
        sem = cg.g_l.semantic[dst].astype(np.int64)
        feat = cg.g_l.feature[dst].astype(np.int64)
        for key_arr, table, key in (
            (sem, rep.by_class, lambda s, f: s),
            (feat, rep.by_feature, lambda s, f: f),
            (sem * 8 + feat, rep.by_cell, lambda s, f: (s, f)),
        ):
            uniq, inv = np.unique(key_arr, return_inverse=True)
            sums = np.bincount(inv, weights=w, minlength=len(uniq))
            counts = np.bincount(inv, minlength=len(uniq))
            for j, u in enumerate(uniq):
                s, f = (int(u) // 8, int(u) % 8) if table is rep.by_cell else (int(u), int(u))
                c = table.setdefault(key(s, f), Cell())
                c.total += float(sums[j])
                c.count += int(counts[j])
        rep.n_edges += len(w)
    return rep


# --------------------------------------------------------------------------- heatmap

# Five-stop ramp from cold to hot; intensity 0 is dark blue, 1 is red.
RAMP = np.array(
    [
        [0.00, 0, 0, 255],
        [0.25, 0, 255, 255],
        [0.50, 0, 255, 0],
        [0.75, 255, 255, 0],
        [1.00, 255, 0, 0],
    ],
    dtype=np.float64,
)


def ramp_color(x):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([np.interp(x, RAMP[:, 0], RAMP[:, c]) for c in (1, 2, 3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def node_intensity(cg: CrossGraph, weights) -> np.ndarray:
    """Max incident cross-edge weight per joint node, divided by the global maximum."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    val = np.zeros(cg.n_nodes)
    e = cg.cross_joint()
    if len(e):
        np.maximum.at(val, e[:, 0], w)
        np.maximum.at(val, e[:, 1], w)
    top = val.max() if len(val) else 0.0
    return val / top if top > 0 else val


def export_heatmap(cg: CrossGraph, weights, path, side="both", pose_k: Optional[PoseSE3] = None):
    """ASCII PLY with per-vertex ``red green blue`` and the normalized ``intensity``.

    ``side`` selects the second-scan nodes (``"l"``), first-scan nodes (``"k"``), or both;
    ``pose_k`` optionally moves first-scan nodes into the second scan's frame.
    """
    if side not in ("k", "l", "both"):
        raise UsageError(f"side must be 'k', 'l' or 'both', got {side!r}")
    inten = node_intensity(cg, weights)
    pk = cg.g_k.positions if pose_k is None else pose_k.apply(cg.g_k.positions)
    pos = np.vstack([pk, cg.g_l.positions])
    sl = {"k": slice(0, cg.n_k), "l": slice(cg.n_k, cg.n_nodes), "both": slice(0, cg.n_nodes)}[side]
    pos, inten = pos[sl], inten[sl]
    rgb = ramp_color(inten)
    try:
        with open(path, "w") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(pos)}\n")
            for p in ("x", "y", "z"):
                fh.write(f"property float {p}\n")
            for c in ("red", "green", "blue"):
                fh.write(f"property uchar {c}\n")
            fh.write("property float intensity\nend_header\n")
            for p, c, v in zip(pos, rgb, inten):
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]} {v:.6f}\n")
    except OSError as exc:
        raise DataError(f"cannot write heatmap {path}: {exc}") from exc
    return len(pos)
