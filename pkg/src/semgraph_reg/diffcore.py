"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the registration network needs are provided: dense algebra,
row gather / segment sums for sparse message passing, GCN and GATv2 layers, dropout,
a rotation-from-covariance op with an analytic SVD adjoint, and Adam.
"""

from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict

import numpy as np
import scipy.sparse as sp

from .errors import (
    DataError,
    FormatError,
    NonFiniteGradientError,
    ShapeError,
)


class Tensor:
    """Array value with an optional gradient slot and a local backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor operators

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def _accum(self, g):
        # Gradients are never updated in place, so adopting ``g`` without a copy is safe
        # even when the same array flows to several parents.
        g = np.asarray(g, dtype=np.float64).reshape(self.shape)
        self.grad = g if self.grad is None else self.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Tensor):
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable requires-grad node."""
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    order, state, stack = [], {}, [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        if state.get(key) == 2:
            continue
        if state.get(key) == 1:
            raise RuntimeError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and state.get(id(p)) != 2:
                if state.get(id(p)) == 1:
                    raise RuntimeError("cycle detected in computation graph")
                stack.append((p, False))
    root._accum(np.ones(root.shape))
    for node in reversed(order):
        # nodes that received no gradient contribute nothing upstream
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# --------------------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def _unary(x, value, local_grad):
    x = as_tensor(x)

    def bw(g):
        x._accum(g * local_grad())

    return _make(value, (x,), bw)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda: out)


def log(x):
    x = as_tensor(x)
    return _unary(x, np.log(x.data), lambda: 1.0 / x.data)


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _unary(x, out, lambda: 0.5 / out)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0.0), lambda: mask)


def leaky_relu(x, negative_slope=0.2):
    x = as_tensor(x)
    slope = np.where(x.data > 0, 1.0, negative_slope)
    return _unary(x, x.data * slope, lambda: slope)


def clip(x, lo, hi):
    """Clamp with gradient passed only inside ``[lo, hi]``."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _unary(x, np.clip(x.data, lo, hi), lambda: inside)


def norm(x):
    """Euclidean norm of all entries; zero subgradient at the origin."""
    x = as_tensor(x)
    n = float(np.sqrt(np.sum(x.data**2)))

    def bw(g):
        if n > 0:
            x._accum(g * x.data / n)

    return _make(n, (x,), bw)


# --------------------------------------------------------------------------- shapes and reductions


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not agree")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def transpose(x):
    x = as_tensor(x)
    return _make(x.data.T, (x,), lambda g: x._accum(g.T))


def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: x._accum(g.reshape(x.shape)))


def tsum(x, axis=None):
    x = as_tensor(x)

    def bw(g):
        if axis is None:
            x._accum(np.broadcast_to(g, x.shape))
        else:
            x._accum(np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _make(x.data.sum(axis=axis), (x,), bw)


def tmean(x, axis=None):
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return tsum(x, axis) / float(n)


def index(x, idx):
    """Basic/advanced indexing; gradients scattered with ``np.add.at``."""
    x = as_tensor(x)

    def bw(g):
        full = np.zeros(x.shape)
        np.add.at(full, idx, g)
        x._accum(full)

    return _make(x.data[idx], (x,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def _incidence(seg, n):
    """Sparse ``n x len(seg)`` matrix with a one at ``(seg[e], e)``."""
    m = len(seg)
    return sp.csr_matrix((np.ones(m), (seg, np.arange(m))), shape=(n, m))


def gather(x, idx):
    """Row gather ``x[idx]`` with a sparse scatter-add backward."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        s = _incidence(idx, x.shape[0])
        x._accum((s @ g.reshape(len(idx), -1)).reshape(x.shape))

    return _make(x.data[idx], (x,), bw)


def segment_sum(x, seg, n):
    """Sum rows of ``x`` into ``n`` buckets given by ``seg``."""
    x = as_tensor(x)
    seg = np.asarray(seg, dtype=np.int64)
    flat = x.data.reshape(len(seg), -1)
    out = (_incidence(seg, n) @ flat).reshape((n,) + x.shape[1:])
    return _make(out, (x,), lambda g: x._accum(g[seg]))


def spmm(a, x):
    """Constant sparse matrix times a dense tensor."""
    x = as_tensor(x)
    at = a.T.tocsr()
    return _make(a @ x.data, (x,), lambda g: x._accum(at @ g))


def segment_max(values, seg, n):
    """Per-bucket max of a constant array (``-inf`` for empty buckets)."""
    out = np.full((n,) + values.shape[1:], -np.inf)
    np.maximum.at(out, seg, values)
    return out


def segment_softmax(scores, seg, n):
    """Softmax of ``scores`` rows within each bucket of ``seg`` (max-shifted)."""
    scores = as_tensor(scores)
    shift = segment_max(scores.data, seg, n)[seg]
    ex = exp(scores - shift)
    den = segment_sum(ex, seg, n)
    return ex / gather(den, seg)


# --------------------------------------------------------------------------- rotation from covariance


def svd_backward(U, S, Vt, gU, gS, gV):
    """Adjoint of ``A = U diag(S) V^T`` for square full SVDs with distinct singular values."""
    V = Vt.T
    s2 = S**2
    diff = s2[None, :] - s2[:, None]
    np.fill_diagonal(diff, 1.0)
    F = 1.0 / diff
    np.fill_diagonal(F, 0.0)
    UtgU = U.T @ gU
    VtgV = V.T @ gV
    inner = (F * (UtgU - UtgU.T)) * S[None, :]
    inner = inner + np.diag(gS) + S[:, None] * (F * (VtgV - VtgV.T))
    return U @ inner @ Vt


def kabsch_rotation(H):
    """Reflection-corrected rotation ``V diag(1,1,d) U^T`` from ``H = U S V^T``.

    Returns ``(R, singular_values)``; the singular values are plain arrays for the
    caller's degeneracy checks.
    """
    H = as_tensor(H)
    U, S, Vt = np.linalg.svd(H.data)
    V = Vt.T
    d = 1.0 if np.linalg.det(V @ U.T) >= 0 else -1.0
    D = np.diag([1.0, 1.0, d])
    R = V @ D @ U.T

    def bw(g):
        gV = g @ U @ D
        gU = g.T @ V @ D
        H._accum(svd_backward(U, S, Vt, gU, np.zeros(3), gV))

    return _make(R, (H,), bw), S


# --------------------------------------------------------------------------- layers


class SparseAdjacency:
    """Directed edge list over ``n`` nodes; messages flow ``src -> dst``."""

    def __init__(self, src, dst, n, weights=None):
        self.src = np.asarray(src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        self.n = int(n)
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)
        if len(self.src) != len(self.dst):
            raise ShapeError("src and dst lengths differ")
        if len(self.src) and (min(self.src.min(), self.dst.min()) < 0 or max(self.src.max(), self.dst.max()) >= n):
            raise DataError("edge index out of range")
        if len(self.src) and len(np.unique(self.src * n + self.dst)) != len(self.src):
            raise DataError("duplicate (src, dst) edge")
        self._gcn = None

    @classmethod
    def from_pairs(cls, pairs, n):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return cls(pairs[:, 0], pairs[:, 1], n)

    def __len__(self):
        return len(self.src)

    def in_degree(self):
        return np.bincount(self.dst, minlength=self.n)

    def gcn_matrix(self):
        """``D^-1/2 (A + I) D^-1/2`` with ``A`` symmetrized, as CSR."""
        if self._gcn is None:
            n = self.n
            a = sp.coo_matrix((np.ones(len(self.src)), (self.src, self.dst)), shape=(n, n)).tocsr()
            a = ((a + a.T) > 0).astype(np.float64)
            a = a.tolil()
            a.setdiag(0)
            a = a.tocsr() + sp.identity(n, format="csr")
            deg = np.asarray(a.sum(axis=1)).ravel()
            dinv = sp.diags(1.0 / np.sqrt(deg))
            self._gcn = (dinv @ a @ dinv).tocsr()
        return self._gcn


def linear(x, weight, bias=None):
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x @ weight
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
        out = out + bias
    return out


def gcn_layer(x, adj: SparseAdjacency, weight, bias=None):
    x = as_tensor(x)
    if x.shape[0] != adj.n:
        raise ShapeError(f"gcn: {x.shape[0]} feature rows for {adj.n} nodes")
    return linear(spmm(adj.gcn_matrix(), x), weight, bias)


def gatv2_layer(x, adj: SparseAdjacency, heads, w_src, b_src, w_dst, b_dst, att, bias=None, negative_slope=0.2):
    """GATv2 attention over ``adj`` with separate source/destination projections.

    ``w_src``/``w_dst``: ``(d_in, heads*d_out)``; ``att``: ``(heads, d_out)``.
    Returns ``(features (n, heads*d_out), alpha (E, heads), no_inputs mask)``.
    Nodes without in-edges get zero messages (plus bias).
    """
    x = as_tensor(x)
    att = as_tensor(att)
    n, E = adj.n, len(adj)
    d_out = att.shape[1]
    if x.shape[0] != n:
        raise ShapeError(f"gat: {x.shape[0]} feature rows for {n} nodes")
    if as_tensor(w_src).shape[1] != heads * d_out:
        raise ShapeError("gat: projection width must equal heads * d_out")
    xs = linear(x, w_src, b_src)
    xd = linear(x, w_dst, b_dst)
    xs_e = gather(xs, adj.src)
    z = leaky_relu(xs_e + gather(xd, adj.dst), negative_slope)
    scores = tsum(reshape(z, (E, heads, d_out)) * reshape(att, (1, heads, d_out)), axis=2)
    alpha = segment_softmax(scores, adj.dst, n)
    msg = reshape(reshape(xs_e, (E, heads, d_out)) * reshape(alpha, (E, heads, 1)), (E, heads * d_out))
    out = segment_sum(msg, adj.dst, n)
    if bias is not None:
        out = out + bias
    return out, alpha, adj.in_degree() == 0


def dropout(x, rate, training, rng=None):
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must be in [0, 1)")
    x = as_tensor(x)
    if not training or rate == 0:
        return x
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


# --------------------------------------------------------------------------- parameters and Adam


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class ParamStore:
    """Named trainable tensors with Adam moment buffers."""

    def __init__(self):
        self.params = OrderedDict()
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros(t.shape)
        self.v[name] = np.zeros(t.shape)
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def total_count(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def snapshot(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_snapshot(self, snap):
        for k, v in snap.items():
            self.params[k].data = v.copy()

    def copy(self):
        out = ParamStore()
        for k, p in self.params.items():
            out.add(k, p.data.copy())
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.step = self.step
        return out


def adam_step(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; clears gradients afterwards."""
    for name, p in store:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(name)
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    for name, p in store:
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        m = store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
    return store


# --------------------------------------------------------------------------- checkpoints

MAGIC = b"SGRCKPT\x00"
VERSION = 1


def save_checkpoint(path, store: ParamStore, extra=None):
    """Header (magic, version, JSON manifest), then params, first and second moments.

    Values are little-endian float64 in manifest order.
    """
    manifest = {
        "params": [{"name": k, "shape": list(p.shape)} for k, p in store],
        "step": store.step,
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(blob)))
    buf.write(blob)
    for section in (lambda k: store.params[k].data, lambda k: store.m[k], lambda k: store.v[k]):
        for k in store.params:
            buf.write(np.ascontiguousarray(section(k), dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns ``(store, extra)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    version, n = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(raw[16 : 16 + n])
    off = 16 + n
    store = ParamStore()
    specs = [(e["name"], tuple(e["shape"])) for e in manifest["params"]]
    sections = []
    need = 3 * 8 * sum(int(np.prod(e["shape"], dtype=np.int64)) for e in manifest["params"])
    if off + need != len(raw):
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(raw) - off}")
    for _ in range(3):
        vals = {}
        for name, shape in specs:
            count = int(np.prod(shape, dtype=np.int64))
            vals[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
            off += 8 * count
        sections.append(vals)
    for name, _ in specs:
        store.add(name, sections[0][name])
        store.m[name] = sections[1][name]
        store.v[name] = sections[2][name]
    store.step = manifest["step"]
    return store, manifest.get("extra", {})
