"""The cross-graph attention network: GCN+MLP keypoint encoder, two GATv2 stages."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractViolation
from .graph import CrossGraph


@dataclass
class SemGatConfig:
    gcn_f0: tuple = (3, 32)
    mlp_f0: tuple = (32, 64, 128)
    gcn_f1: tuple = (128, 256)
    mlp_f1: tuple = (256, 256, 256)
    gat_f0: tuple = (256, 128)
    gat_f0_heads: int = 3
    mlp_f3: tuple = (384, 64, 32)
    gat_f1: tuple = (32, 8)
    gat_f1_heads: int = 1
    dropout: float = 0.10
    negative_slope: float = 0.2
    gat_bias: bool = True

    def __post_init__(self):
        for name in ("gcn_f0", "mlp_f0", "gcn_f1", "mlp_f1", "gat_f0", "mlp_f3", "gat_f1"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))

    def validate(self):
        chain = [
            ("gcn_f0", "mlp_f0", self.gcn_f0[-1], self.mlp_f0[0]),
            ("mlp_f0", "gcn_f1", self.mlp_f0[-1], self.gcn_f1[0]),
            ("gcn_f1", "mlp_f1", self.gcn_f1[-1], self.mlp_f1[0]),
            ("mlp_f1", "gat_f0", self.mlp_f1[-1], self.gat_f0[0]),
            ("gat_f0", "mlp_f3", self.gat_f0[1] * self.gat_f0_heads, self.mlp_f3[0]),
            ("mlp_f3", "gat_f1", self.mlp_f3[-1], self.gat_f1[0]),
        ]
        if self.gcn_f0[0] != 3:
            raise ConfigError("gcn_f0 input must be 3 (node coordinates)")
        for a, b, out, inp in chain:
            if out != inp:
                raise ConfigError(f"{a} output {out} does not feed {b} input {inp}")
        if len(self.gcn_f0) != 2 or len(self.gcn_f1) != 2 or len(self.gat_f0) != 2 or len(self.gat_f1) != 2:
            raise ConfigError("GCN/GAT sizes are (in, out) pairs")
        if min(self.gat_f0_heads, self.gat_f1_heads) < 1:
            raise ConfigError("head counts must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        return self

    def scaled(self, factor):
        """Every hidden width multiplied by ``factor`` (input width 3 kept)."""
        f = lambda t: tuple(int(round(v * factor)) for v in t)
        return SemGatConfig(
            gcn_f0=(3, f(self.gcn_f0)[1]),
            mlp_f0=f(self.mlp_f0),
            gcn_f1=f(self.gcn_f1),
            mlp_f1=f(self.mlp_f1),
            gat_f0=f(self.gat_f0),
            gat_f0_heads=self.gat_f0_heads,
            mlp_f3=f(self.mlp_f3),
            gat_f1=f(self.gat_f1),
            gat_f1_heads=self.gat_f1_heads,
            dropout=self.dropout,
            negative_slope=self.negative_slope,
            gat_bias=self.gat_bias,
        )

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _add_linear(store, rng, name, d_in, d_out):
    store.add(f"{name}.weight", dc.glorot(rng, d_in, d_out))
    store.add(f"{name}.bias", np.zeros(d_out))


def _add_mlp(store, rng, name, sizes):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        _add_linear(store, rng, f"{name}.{i}", a, b)


def _add_gat(store, rng, name, d_in, d_out, heads, bias):
    width = heads * d_out
    store.add(f"{name}.w_src", dc.glorot(rng, d_in, width))
    store.add(f"{name}.b_src", np.zeros(width))
    store.add(f"{name}.w_dst", dc.glorot(rng, d_in, width))
    store.add(f"{name}.b_dst", np.zeros(width))
    store.add(f"{name}.att", dc.glorot(rng, d_out, 1, shape=(heads, d_out)))
    if bias:
        store.add(f"{name}.bias", np.zeros(width))


def init_params(cfg: SemGatConfig, seed=0) -> dc.ParamStore:
    """Glorot-uniform weights, zero biases."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    store = dc.ParamStore()
    _add_linear(store, rng, "gcn_f0", *cfg.gcn_f0)
    _add_mlp(store, rng, "mlp_f0", cfg.mlp_f0)
    _add_linear(store, rng, "gcn_f1", *cfg.gcn_f1)
    _add_mlp(store, rng, "mlp_f1", cfg.mlp_f1)
    _add_gat(store, rng, "gat_f0", *cfg.gat_f0, cfg.gat_f0_heads, cfg.gat_bias)
    _add_mlp(store, rng, "mlp_f3", cfg.mlp_f3)
    _add_gat(store, rng, "gat_f1", *cfg.gat_f1, cfg.gat_f1_heads, cfg.gat_bias)
    return store


def parameter_count(params: dc.ParamStore) -> int:
    return params.total_count()


def mlp(x, params, name, n_layers):
    """ReLU between layers, linear output."""
    for i in range(n_layers):
        x = dc.linear(x, params[f"{name}.{i}.weight"], params[f"{name}.{i}.bias"])
        if i < n_layers - 1:
            x = dc.relu(x)
    return x


def _gat(x, adj, params, name, heads, cfg):
    bias = params[f"{name}.bias"] if f"{name}.bias" in params else None
    return dc.gatv2_layer(
        x, adj, heads,
        params[f"{name}.w_src"], params[f"{name}.b_src"],
        params[f"{name}.w_dst"], params[f"{name}.b_dst"],
        params[f"{name}.att"], bias, cfg.negative_slope,
    )


def check_pruned(cg: CrossGraph):
    missing = cg.unmatched_l_points()
    if len(missing):
        raise ContractViolation(f"{len(missing)} second-scan point nodes have no cross candidates; prune first")


def encode_keypoints(cg: CrossGraph, params, cfg: SemGatConfig, training=False, rng=None):
    """Node embeddings from coordinates, passing messages only along single-graph edges."""
    check_pruned(cg)
    adj = dc.SparseAdjacency.from_pairs(cg.intra_edges(), cg.n_nodes)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    h = dc.Tensor(cg.positions())
    h = dc.relu(dc.gcn_layer(h, adj, params["gcn_f0.weight"], params["gcn_f0.bias"]))
    h = dc.dropout(h, cfg.dropout, training, rng)
    h = mlp(h, params, "mlp_f0", len(cfg.mlp_f0) - 1)
    h = dc.relu(dc.gcn_layer(h, adj, params["gcn_f1.weight"], params["gcn_f1.bias"]))
    h = dc.dropout(h, cfg.dropout, training, rng)
    return mlp(h, params, "mlp_f1", len(cfg.mlp_f1) - 1)


@dataclass
class CrossAttentionOutput:
    weights: dc.Tensor  # (E,) attention of each cross edge, aligned with cg.cross_edges
    node_features: dc.Tensor
    first_alpha: dc.Tensor
    no_inputs: np.ndarray = field(repr=False, default=None)


def cross_attention(embeddings, cg: CrossGraph, params, cfg: SemGatConfig, training=False):
    """Edge confidences from the final GAT layer over the cross edges.

    The first GAT layer passes messages along cross edges in both directions so that
    first-scan nodes also receive candidate context; the final layer runs ``k -> l``
    and its coefficients are softmax-normalized over each second-scan node's candidates.
    """
    check_pruned(cg)
    fwd = cg.cross_joint()
    n = cg.n_nodes
    both = np.concatenate([fwd, fwd[:, ::-1]])
    adj_both = dc.SparseAdjacency.from_pairs(both, n)
    adj_fwd = dc.SparseAdjacency.from_pairs(fwd, n)
    h, alpha0, _ = _gat(embeddings, adj_both, params, "gat_f0", cfg.gat_f0_heads, cfg)
    h = dc.relu(h)
    h = mlp(h, params, "mlp_f3", len(cfg.mlp_f3) - 1)
    out, alpha, no_inputs = _gat(h, adj_fwd, params, "gat_f1", cfg.gat_f1_heads, cfg)
    w = alpha if cfg.gat_f1_heads == 1 else dc.tmean(alpha, axis=1)
    return CrossAttentionOutput(dc.reshape(w, (len(fwd),)), out, alpha0, no_inputs)


def forward(cg: CrossGraph, params, cfg: SemGatConfig, training=False, rng=None):
    emb = encode_keypoints(cg, params, cfg, training, rng)
    return cross_attention(emb, cg, params, cfg, training)


def select_max_edges(weights, cg: CrossGraph):
    """Index of the highest-weight cross edge per second-scan node (ties: lower k index)."""
    w = np.asarray(weights.data if isinstance(weights, dc.Tensor) else weights, dtype=np.float64)
    e = cg.cross_edges
    if len(e) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((e[:, 0], -w, e[:, 1]))
    dst = e[order, 1]
    first = np.concatenate([[True], dst[1:] != dst[:-1]])
    return np.sort(order[first])
