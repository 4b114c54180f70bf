"""Ground-truth match labels, attention and pose losses, and the epoch loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import diffcore as dc
from .data_io import PoseSE3
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    DegenerateWeightsError,
    NoPositiveLabelsError,
    TrainingError,
)
from .graph import CrossGraph
from .model import SemGatConfig, forward, init_params, select_max_edges
from .pose import WeightedMatchSet, weighted_svd, weighted_svd_diff

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
METRICS_HEADER = "epoch\ttrain_total\ttrain_La\ttrain_Lp\tval_total\tval_RR"


@dataclass
class GtMatchLabels:
    labels: np.ndarray  # (E,) in {0, 1}, aligned with cg.cross_edges

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)

    @property
    def n_pos(self):
        return int(self.labels.sum())

    @property
    def n_neg(self):
        return int(len(self.labels) - self.labels.sum())

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return GtMatchLabels(self.labels[idx])


@dataclass
class TrainRunConfig:
    learning_rate: float = 1e-3
    epochs: int = 80
    batch_size: int = 4
    alpha: float = 1e3
    gt_radius: float = 2.0
    train_thresh: float = 3.0
    infer_thresh: float = 2.0
    patience: int = 10
    seed: int = 0
    val_fraction: float = 0.2
    # "selected": BCE on the max-weight edge per second-scan node; "all": every candidate edge
    loss_edges: str = "selected"
    use_attention_loss: bool = True
    use_pose_loss: bool = True
    weighted_centroids: bool = True
    # BCE is averaged over edges within a pair and summed over the pairs of a batch
    edge_reduction: str = "mean"
    batch_reduction: str = "sum"
    success_rte: float = 0.6
    success_rre: float = 5.0

    def validate(self):
        positive = ("learning_rate", "epochs", "batch_size", "alpha", "gt_radius", "train_thresh", "infer_thresh", "patience")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.patience > self.epochs:
            raise ConfigError("train.patience must not exceed train.epochs")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("train.val_fraction must be in [0, 1)")
        if self.loss_edges not in ("selected", "all"):
            raise ConfigError("train.loss_edges must be 'selected' or 'all'")
        if self.edge_reduction != "mean" or self.batch_reduction != "sum":
            raise ConfigError("only edge_reduction=mean, batch_reduction=sum are implemented")
        if not (self.use_attention_loss or self.use_pose_loss):
            raise ConfigError("at least one of the two losses must be enabled")
        return self

    def to_dict(self):
        return asdict(self)


def extract_gt_matches(cg: CrossGraph, gt: PoseSE3, radius: float = 2.0) -> GtMatchLabels:
    """An edge is positive iff its ``k`` end is the nearest first-scan point node to its ``l`` end
    under ``gt``, within ``radius``.  Ties go to the lower node index."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    labels = np.zeros(cg.n_cross, dtype=np.int8)
    if cg.n_cross == 0:
        return GtMatchLabels(labels)
    k_idx = np.flatnonzero(cg.g_k.point_mask())
    l_idx = np.flatnonzero(cg.g_l.point_mask())
    if len(k_idx) == 0 or len(l_idx) == 0:
        return GtMatchLabels(labels)
    moved = gt.apply(cg.g_k.positions[k_idx])
    tree = cKDTree(moved)
    q = cg.g_l.positions[l_idx]
    nearest = np.full(cg.n_l, -1, dtype=np.int64)
    pairs = tree.query_ball_point(q, radius)
    for row, cand in enumerate(pairs):
        if not cand:
            continue
        cand = np.asarray(cand)
        d = np.linalg.norm(moved[cand] - q[row], axis=1)
        best = cand[np.lexsort((cand, d))[0]]
        nearest[l_idx[row]] = k_idx[best]
    e = cg.cross_edges
    labels[nearest[e[:, 1]] == e[:, 0]] = 1
    return GtMatchLabels(labels)


def attention_loss(weights, labels, eps: float = LOG_EPS) -> dc.Tensor:
    """Class-balanced BCE, averaged over edges; the positive term is scaled by #neg/#pos."""
    w = dc.as_tensor(weights)
    y = np.asarray(labels.labels if isinstance(labels, GtMatchLabels) else labels, dtype=np.float64).reshape(-1)
    if w.data.shape != y.shape:
        raise ValueError(f"weights {w.data.shape} and labels {y.shape} differ in shape")
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    if n_pos == 0:
        raise NoPositiveLabelsError("no positive labels; class weight undefined")
    w_n = n_neg / n_pos if n_neg > 0 else 1.0
    wc = dc.clip(w, eps, 1.0 - eps)
    per_edge = (w_n * y) * dc.log(wc) + (1.0 - y) * dc.log(1.0 - wc)
    return -dc.tmean(per_edge)


def pose_loss(rotation, translation, gt: PoseSE3, alpha: float = 1e3):
    """Returns ``(L_p, L_r, L_t)`` with ``L_p = alpha * L_r + L_t``."""
    R = dc.as_tensor(rotation)
    t = dc.as_tensor(translation)
    # equals 3 - <R, R_gt> for rotations, without the cancellation near the optimum
    d = R - gt.rotation
    l_r = 0.5 * dc.tsum(d * d)
    l_t = dc.norm(dc.reshape(t, (3,)) - gt.translation)
    return alpha * l_r + l_t, l_r, l_t


@dataclass
class PairSample:
    pair_id: str
    train_graph: CrossGraph
    eval_graph: CrossGraph
    gt: PoseSE3
    train_labels: Optional[GtMatchLabels] = None
    eval_labels: Optional[GtMatchLabels] = None

    def prepare(self, radius):
        if self.train_labels is None:
            self.train_labels = extract_gt_matches(self.train_graph, self.gt, radius)
        if self.eval_labels is None:
            self.eval_labels = extract_gt_matches(self.eval_graph, self.gt, radius)
        return self


@dataclass
class PairLoss:
    total: Optional[dc.Tensor]
    la: float = float("nan")
    lp: float = float("nan")
    pose: Optional[PoseSE3] = None
    skipped: List[str] = field(default_factory=list)


def estimate_pose(cg: CrossGraph, weights, weighted_centroids=True, edges=None) -> PoseSE3:
    """Weighted alignment over the max-selected cross edges (or ``edges`` if given)."""
    w = np.asarray(weights, dtype=np.float64)
    sel = select_max_edges(w, cg) if edges is None else np.asarray(edges)
    e = cg.cross_edges[sel]
    ms = WeightedMatchSet(cg.g_k.positions[e[:, 0]], cg.g_l.positions[e[:, 1]], w[sel])
    return weighted_svd(ms, weighted_centroids)


def pair_loss(cg, labels, gt, params, model_cfg, cfg: TrainRunConfig, training, rng, pair_id="") -> PairLoss:
    out = forward(cg, params, model_cfg, training, rng)
    return loss_from_weights(out.weights, cg, labels, gt, cfg, training, pair_id)


def loss_from_weights(w, cg, labels, gt, cfg: TrainRunConfig, training=True, pair_id="") -> PairLoss:
    """``L_a + L_p`` given the cross-edge weights; terms that cannot be formed are skipped."""
    sel = select_max_edges(w.data, cg)
    result = PairLoss(None)
    terms = []
    if cfg.use_attention_loss:
        idx = sel if cfg.loss_edges == "selected" else np.arange(cg.n_cross)
        try:
            la = attention_loss(dc.index(w, idx), labels.labels[idx])
            result.la = la.item()
            terms.append(la)
        except NoPositiveLabelsError:
            result.skipped.append("La")
            log.warning("pair %s: no positive labels, attention loss skipped", pair_id)
    if cfg.use_pose_loss or not training:
        e = cg.cross_edges[sel]
        try:
            dp = weighted_svd_diff(
                dc.index(w, sel), cg.g_k.positions[e[:, 0]], cg.g_l.positions[e[:, 1]], cfg.weighted_centroids
            )
            result.pose = dp.to_pose()
            if cfg.use_pose_loss:
                if training and not dp.gradient_reliable():
                    result.skipped.append("Lp")
                    log.warning("pair %s: repeated singular values, pose loss skipped", pair_id)
                else:
                    lp, _, _ = pose_loss(dp.rotation, dp.translation, gt, cfg.alpha)
                    result.lp = lp.item()
                    terms.append(lp)
        except (DegenerateGeometryError, DegenerateWeightsError) as exc:
            result.skipped.append("Lp")
            log.warning("pair %s: pose loss skipped (%s)", pair_id, exc)
    if terms:
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        if not np.isfinite(total.data).all():
            raise TrainingError(f"non-finite loss on pair {pair_id}")
        result.total = total
    return result


def split_dataset(samples: Sequence, val_fraction=0.2, seed=0):
    """Seeded shuffle, then the first ``1 - val_fraction`` share trains."""
    n = len(samples)
    if n == 0:
        raise ConfigError("dataset is empty")
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    if n > 1:
        n_val = min(max(n_val, 1 if val_fraction > 0 else 0), n - 1)
    train = [samples[i] for i in sorted(order[n_val:])]
    val = [samples[i] for i in sorted(order[:n_val])]
    return train, val


def _mean(values):
    v = [x for x in values if np.isfinite(x)]
    return float(np.mean(v)) if v else float("nan")


def validate_model(samples, params, model_cfg, cfg: TrainRunConfig):
    """Mean loss and registration recall over ``samples`` with inference graphs."""
    from .evaluate import registration_recall, score_pose

    totals, results = [], []
    for s in samples:
        pl = pair_loss(s.eval_graph, s.eval_labels, s.gt, params, model_cfg, cfg, False, None, s.pair_id)
        if pl.total is not None:
            totals.append(pl.total.item())
        pred = pl.pose if pl.pose is not None else PoseSE3.identity()
        results.append(score_pose(pred, s.gt, cfg.success_rte, cfg.success_rre, degenerate=pl.pose is None))
    rr = registration_recall(results) if results else None
    return _mean(totals), rr


def format_metrics_row(epoch, train_total, train_la, train_lp, val_total, val_rr):
    return "\t".join([str(epoch)] + [repr(float(v)) for v in (train_total, train_la, train_lp, val_total, val_rr)])


@dataclass
class TrainResult:
    params: dc.ParamStore  # best by validation loss
    best_epoch: int
    best_val: float
    history: List[dict]
    steps: int
    stopped_early: bool

    def metrics_lines(self):
        rows = [METRICS_HEADER]
        for h in self.history:
            rows.append(format_metrics_row(h["epoch"], h["train_total"], h["train_La"], h["train_Lp"], h["val_total"], h["val_RR"]))
        return rows


def train(
    samples: Sequence[PairSample],
    cfg: TrainRunConfig,
    model_cfg: Optional[SemGatConfig] = None,
    out_dir=None,
    params: Optional[dc.ParamStore] = None,
) -> TrainResult:
    """Adam on ``L_a + L_p`` with seeded shuffling, early stopping on validation loss,
    and the best parameters retained (and written to ``out_dir`` when given)."""
    cfg.validate()
    model_cfg = (model_cfg or SemGatConfig()).validate()
    if len(samples) == 0:
        raise ConfigError("dataset is empty")
    for s in samples:
        s.prepare(cfg.gt_radius)
    train_set, val_set = split_dataset(samples, cfg.val_fraction, cfg.seed)
    params = params if params is not None else init_params(model_cfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = open(out / "metrics.tsv", "w")
        metrics.write(METRICS_HEADER + "\n")

    history, steps = [], 0
    best_val, best_epoch, best_snap, stale = math.inf, 0, params.snapshot(), 0
    stopped = False
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(train_set))
            tot, las, lps = [], [], []
            for b in range(0, len(order), cfg.batch_size):
                batch_loss = None
                for i in order[b : b + cfg.batch_size]:
                    s = train_set[i]
                    pl = pair_loss(s.train_graph, s.train_labels, s.gt, params, model_cfg, cfg, True, rng, s.pair_id)
                    if pl.total is None:
                        continue
                    tot.append(pl.total.item())
                    las.append(pl.la)
                    lps.append(pl.lp)
                    batch_loss = pl.total if batch_loss is None else batch_loss + pl.total
                if batch_loss is None:
                    continue
                params.zero_grad()
                dc.backward(batch_loss)
                dc.adam_step(params, cfg.learning_rate)
                steps += 1

            if val_set:
                val_total, rr = validate_model(val_set, params, model_cfg, cfg)
                val_rr = rr.recall if rr is not None else float("nan")
            else:
                val_total, val_rr = _mean(tot), float("nan")
            row = dict(
                epoch=epoch,
                train_total=_mean(tot),
                train_La=_mean(las),
                train_Lp=_mean(lps),
                val_total=val_total,
                val_RR=val_rr,
            )
            history.append(row)
            if out is not None:
                metrics.write(format_metrics_row(*row.values()) + "\n")
                metrics.flush()
            log.info("epoch %d train %.4f val %.4f RR %.1f", epoch, row["train_total"], val_total, val_rr)

            if np.isfinite(val_total) and val_total < best_val:
                best_val, best_epoch, best_snap, stale = val_total, epoch, params.snapshot(), 0
                if out is not None:
                    dc.save_checkpoint(out / "best.ckpt", params, {"epoch": epoch, "val_total": val_total,
                                                                   "model": model_cfg.to_dict()})
            else:
                stale += 1
                if stale >= cfg.patience:
                    stopped = True
                    break
    finally:
        if out is not None:
            metrics.close()

    params.load_snapshot(best_snap)
    return TrainResult(params, best_epoch, best_val, history, steps, stopped)
