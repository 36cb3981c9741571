"""Neural decoupling of node derivatives into self and pairwise interaction parts.

Predicted derivative of node i (node type k, edge types e)::

    xdot_i = f_k(x_i) + sum_e sum_j A^e_ij [g0_e(x_i, x_j) + g1_e(x_i) * g2_e(x_j)]

Every function is a small MLP with trainable rational activations.  Gradients
are hand-written reverse-mode passes; no autodiff framework is involved.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy import sparse

from .preprocess import TrainingSet
from .topology import ObservationMask, Topology

log = logging.getLogger(__name__)

RATIONAL_A0 = (1.1915, 1.5957, 0.5000, 0.0218)
RATIONAL_B0 = (2.3830, 0.0000, 1.0000)


class DecouplerError(RuntimeError):
    pass


# --------------------------------------------------------------------------- rational activation

def rational_forward(a, b, x):
    """(a0 + a1 x + a2 x^2 + a3 x^3) / (1 + |b0 + b1 x + b2 x^2|)"""
    x = np.asarray(x, dtype=float)
    p = a[0] + x * (a[1] + x * (a[2] + x * a[3]))
    q = b[0] + x * (b[1] + x * b[2])
    return p / (1.0 + np.abs(q))


@njit(cache=True)
def _rational_fwd_kernel(z, a, b, y):
    zf = z.ravel()
    yf = y.ravel()
    a0, a1, a2, a3 = a[0], a[1], a[2], a[3]
    b0, b1, b2 = b[0], b[1], b[2]
    for k in range(zf.size):
        x = zf[k]
        yf[k] = (a0 + x * (a1 + x * (a2 + x * a3))) / (1.0 + abs(b0 + x * (b1 + x * b2)))


# reassociation only: lets the seven coefficient reductions vectorise
@njit(cache=True, fastmath={"reassoc"})
def _rational_bwd_kernel(z, a, b, g, dz, sums):
    zf = z.ravel()
    gf = g.ravel()
    df = dz.ravel()
    a0, a1, a2, a3 = a[0], a[1], a[2], a[3]
    b0, b1, b2 = b[0], b[1], b[2]
    s0 = s1 = s2 = s3 = t0 = t1 = t2 = 0.0
    for k in range(zf.size):
        x = zf[k]
        p = a0 + x * (a1 + x * (a2 + x * a3))
        q = b0 + x * (b1 + x * b2)
        inv = 1.0 / (1.0 + abs(q))
        sg = 1.0 if q > 0 else (-1.0 if q < 0 else 0.0)
        gp = gf[k] * inv
        gq = -gp * p * inv * sg
        df[k] = gp * (a1 + x * (2.0 * a2 + 3.0 * a3 * x)) + gq * (b1 + 2.0 * b2 * x)
        x2 = x * x
        s0 += gp
        s1 += gp * x
        s2 += gp * x2
        s3 += gp * x2 * x
        t0 += gq
        t1 += gq * x
        t2 += gq * x2
    sums[0] = s0
    sums[1] = s1
    sums[2] = s2
    sums[3] = s3
    sums[4] = t0
    sums[5] = t1
    sums[6] = t2


def _rational_apply(a, b, z):
    z = np.ascontiguousarray(z)
    y = np.empty_like(z)
    _rational_fwd_kernel(z, a, b, y)
    return y


def _rational_backward(a, b, z, grad_out):
    """Returns (dL/dz, dL/da, dL/db) for y = R(z)."""
    z = np.ascontiguousarray(z)
    dz = np.empty_like(z)
    sums = np.empty(7)
    _rational_bwd_kernel(z, a, b, np.ascontiguousarray(grad_out), dz, sums)
    return dz, sums[:4].copy(), sums[4:].copy()


# --------------------------------------------------------------------------- MLP

class MLP:
    """Linear -> Rational blocks followed by a linear readout."""

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        self.sizes = list(sizes)
        self.W, self.b, self.act_a, self.act_b = [], [], [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            if rng is None:
                self.W.append(np.zeros((fan_in, fan_out)))
                self.b.append(np.zeros(fan_out))
            else:
                self.W.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                self.b.append(rng.uniform(-bound, bound, fan_out))
        for _ in range(len(self.sizes) - 2):
            self.act_a.append(np.array(RATIONAL_A0))
            self.act_b.append(np.array(RATIONAL_B0))

    def params(self) -> list[np.ndarray]:
        return self.W + self.b + self.act_a + self.act_b

    def forward(self, x):
        cache = []
        h = x
        n_hidden = len(self.act_a)
        for layer in range(n_hidden):
            z = h @ self.W[layer] + self.b[layer]
            cache.append((h, z))
            h = _rational_apply(self.act_a[layer], self.act_b[layer], z)
        cache.append((h, None))
        return h @ self.W[-1] + self.b[-1], cache

    def __call__(self, x):
        return self.forward(np.asarray(x, dtype=float))[0]

    def backward(self, cache, dy):
        """Gradients aligned with :meth:`params`."""
        n_hidden = len(self.act_a)
        gW = [None] * len(self.W)
        gb = [None] * len(self.b)
        ga = [None] * n_hidden
        gbb = [None] * n_hidden
        h, _ = cache[-1]
        gW[-1] = h.T @ dy
        gb[-1] = dy.sum(axis=0)
        dh = dy @ self.W[-1].T
        for layer in range(n_hidden - 1, -1, -1):
            h_in, z = cache[layer]
            dz, ga[layer], gbb[layer] = _rational_backward(self.act_a[layer], self.act_b[layer], z, dh)
            gW[layer] = h_in.T @ dz
            gb[layer] = dz.sum(axis=0)
            if layer:
                dh = dz @ self.W[layer].T
        return gW + gb + ga + gbb

    def to_json(self) -> dict:
        return {"sizes": self.sizes,
                "W": [w.ravel().tolist() for w in self.W],
                "b": [v.tolist() for v in self.b],
                "act_a": [v.tolist() for v in self.act_a],
                "act_b": [v.tolist() for v in self.act_b]}

    @classmethod
    def from_json(cls, obj) -> "MLP":
        net = cls(obj["sizes"])
        net.W = [np.array(w, dtype=float).reshape(i, o)
                 for w, i, o in zip(obj["W"], net.sizes[:-1], net.sizes[1:])]
        net.b = [np.array(v, dtype=float) for v in obj["b"]]
        net.act_a = [np.array(v, dtype=float) for v in obj["act_a"]]
        net.act_b = [np.array(v, dtype=float) for v in obj["act_b"]]
        return net


# --------------------------------------------------------------------------- model

@dataclass
class MlpSpec:
    hidden: int = 50
    self_layers: int = 2
    inter_layers: int = 3


@dataclass
class InteractionNets:
    g0: MLP
    g1: MLP
    g2: MLP

    def nets(self):
        return (self.g0, self.g1, self.g2)


@dataclass
class DecouplerModel:
    """Self nets per node type, interaction triples per edge type, plus fixed scalings.

    Inputs are standardised with ``x_shift``/``x_scale``; self outputs are
    multiplied by ``self_scale`` and interaction outputs by ``inter_scale``.
    """

    d: int
    self_nets: list
    inter_nets: list
    x_shift: np.ndarray
    x_scale: np.ndarray
    self_scale: np.ndarray
    inter_scale: np.ndarray
    arch: MlpSpec = field(default_factory=MlpSpec)

    @classmethod
    def init(cls, d: int, n_node_types: int = 1, n_edge_types: int = 1, arch: MlpSpec | None = None,
             seed: int = 0, x_shift=None, x_scale=None, self_scale=None, inter_scale=None,
             zero: bool = False) -> "DecouplerModel":
        arch = arch or MlpSpec()
        rng = None if zero else np.random.default_rng(seed)
        h = arch.hidden
        self_nets = [MLP([d] + [h] * arch.self_layers + [d], rng) for _ in range(n_node_types)]
        inter = [InteractionNets(MLP([2 * d] + [h] * arch.inter_layers + [d], rng),
                                 MLP([d] + [h] * arch.inter_layers + [d], rng),
                                 MLP([d] + [h] * arch.inter_layers + [d], rng))
                 for _ in range(n_edge_types)]
        ones = np.ones(d)
        return cls(d, self_nets, inter,
                   np.zeros(d) if x_shift is None else np.asarray(x_shift, float),
                   ones.copy() if x_scale is None else np.asarray(x_scale, float),
                   ones.copy() if self_scale is None else np.asarray(self_scale, float),
                   ones.copy() if inter_scale is None else np.asarray(inter_scale, float),
                   arch)

    def nets(self) -> list[MLP]:
        out = list(self.self_nets)
        for tri in self.inter_nets:
            out.extend(tri.nets())
        return out

    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets() for p in net.params()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        off = 0
        for p in self.params():
            p[...] = vec[off: off + p.size].reshape(p.shape)
            off += p.size

    def _norm(self, x):
        return (x - self.x_shift) / self.x_scale

    # ---- checkpoint
    def to_json(self) -> dict:
        return {"d": self.d,
                "arch": {"hidden": self.arch.hidden, "self_layers": self.arch.self_layers,
                         "inter_layers": self.arch.inter_layers},
                "x_shift": self.x_shift.tolist(), "x_scale": self.x_scale.tolist(),
                "self_scale": self.self_scale.tolist(), "inter_scale": self.inter_scale.tolist(),
                "self_nets": [n.to_json() for n in self.self_nets],
                "inter_nets": [{k: getattr(t, k).to_json() for k in ("g0", "g1", "g2")}
                               for t in self.inter_nets]}

    @classmethod
    def from_json(cls, obj) -> "DecouplerModel":
        return cls(obj["d"], [MLP.from_json(n) for n in obj["self_nets"]],
                   [InteractionNets(*(MLP.from_json(t[k]) for k in ("g0", "g1", "g2")))
                    for t in obj["inter_nets"]],
                   np.array(obj["x_shift"]), np.array(obj["x_scale"]),
                   np.array(obj["self_scale"]), np.array(obj["inter_scale"]),
                   MlpSpec(**obj["arch"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "DecouplerModel":
        return cls.from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- graph plumbing

class _Graph:
    """Edge index structures for one (topology, mask) pair."""

    def __init__(self, topology: Topology, mask: ObservationMask | None, n_edge_types: int):
        a = topology.adjacency.copy()
        node_obs = np.ones(topology.n, dtype=bool)
        if mask is not None:
            a = a * mask.adj_mask
            node_obs = mask.state_mask.all(axis=1)
            a = a * node_obs[None, :]
        self.n = topology.n
        self.node_obs = node_obs
        self.node_type = topology.node_type
        i, j = np.nonzero(a)
        w = a[i, j]
        et = topology.edge_type[i, j]
        if et.size and et.max() >= n_edge_types:
            raise DecouplerError("topology has more edge types than the model")
        self.groups = []
        for e in range(n_edge_types):
            sel = et == e
            ii, jj, ww = i[sel], j[sel], w[sel]
            m = ii.size
            scatter = sparse.csr_matrix((ww, (ii, np.arange(m))), shape=(self.n, m))
            gi = sparse.csr_matrix((np.ones(m), (ii, np.arange(m))), shape=(self.n, m))
            gj = sparse.csr_matrix((np.ones(m), (jj, np.arange(m))), shape=(self.n, m))
            self.groups.append((ii, jj, ww, scatter, gi, gj))


def _apply_nodes(mat, x):
    """(n, m) sparse applied along axis 1 of (B, m, d) -> (B, n, d)."""
    B, m, d = x.shape
    y = mat @ x.transpose(1, 0, 2).reshape(m, B * d)
    return np.asarray(y).reshape(mat.shape[0], B, d).transpose(1, 0, 2)


def _forward(model: DecouplerModel, graph: _Graph, X: np.ndarray, keep_cache: bool = False):
    B, N, d = X.shape
    Z = model._norm(X)
    self_out = np.zeros_like(X)
    caches = {"self": [], "inter": []}
    for k, net in enumerate(model.self_nets):
        idx = np.nonzero(graph.node_type == k)[0]
        if idx.size == 0:
            caches["self"].append(None)
            continue
        y, c = net.forward(Z[:, idx].reshape(-1, d))
        self_out[:, idx] = y.reshape(B, idx.size, d)
        caches["self"].append((idx, c))
    inter_out = np.zeros_like(X)
    flatZ = Z.reshape(B * N, d)
    for e, tri in enumerate(model.inter_nets):
        ii, jj, ww, scatter, gi, gj = graph.groups[e]
        if ii.size == 0:
            caches["inter"].append(None)
            continue
        pair = np.concatenate([Z[:, ii], Z[:, jj]], axis=2).reshape(-1, 2 * d)
        y0, c0 = tri.g0.forward(pair)
        y1, c1 = tri.g1.forward(flatZ)
        y2, c2 = tri.g2.forward(flatZ)
        y0 = y0.reshape(B, ii.size, d)
        y1 = y1.reshape(B, N, d)
        y2 = y2.reshape(B, N, d)
        edge_val = y0 + y1[:, ii] * y2[:, jj]
        inter_out += _apply_nodes(scatter, edge_val)
        caches["inter"].append((c0, c1, c2, y1, y2))
    pred = model.self_scale * self_out + model.inter_scale * inter_out
    pred = pred * graph.node_obs[None, :, None]
    return pred, (caches if keep_cache else None)


def _backward(model: DecouplerModel, graph: _Graph, X: np.ndarray, caches, dpred):
    B, N, d = X.shape
    dpred = dpred * graph.node_obs[None, :, None]
    grads = []
    dself = dpred * model.self_scale
    for k, net in enumerate(model.self_nets):
        entry = caches["self"][k]
        if entry is None:
            grads.extend(np.zeros_like(p) for p in net.params())
            continue
        idx, c = entry
        grads.extend(net.backward(c, dself[:, idx].reshape(-1, d)))
    dinter = dpred * model.inter_scale
    for e, tri in enumerate(model.inter_nets):
        entry = caches["inter"][e]
        if entry is None:
            for net in tri.nets():
                grads.extend(np.zeros_like(p) for p in net.params())
            continue
        c0, c1, c2, y1, y2 = entry
        ii, jj, ww, scatter, gi, gj = graph.groups[e]
        dedge = _apply_nodes(scatter.T.tocsr(), dinter)  # (B, m, d) = w * dout[i]
        dy1 = _apply_nodes(gi, dedge * y2[:, jj])
        dy2 = _apply_nodes(gj, dedge * y1[:, ii])
        grads.extend(tri.g0.backward(c0, dedge.reshape(-1, d)))
        grads.extend(tri.g1.backward(c1, dy1.reshape(-1, d)))
        grads.extend(tri.g2.backward(c2, dy2.reshape(-1, d)))
    return grads


def predict_derivative(model: DecouplerModel, topology: Topology, state: np.ndarray,
                       mask: ObservationMask | None = None) -> np.ndarray:
    """Model derivative for a single (N, d) state or a (B, N, d) batch."""
    X = np.asarray(state, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1:] != (topology.n, model.d):
        raise DecouplerError(f"state shape {X.shape[1:]} != {(topology.n, model.d)}")
    if topology.n_node_types > len(model.self_nets):
        raise DecouplerError("topology has more node types than the model")
    graph = _Graph(topology, mask, len(model.inter_nets))
    pred, _ = _forward(model, graph, X)
    return pred[0] if single else pred


def query_self(model: DecouplerModel, k: int, grid) -> np.ndarray:
    """Self-dynamics values (physical units) at each d-vector of ``grid``."""
    x = np.asarray(grid, dtype=float).reshape(-1, model.d)
    return model.self_scale * model.self_nets[k](model._norm(x))


def query_inter(model: DecouplerModel, e: int, grid) -> np.ndarray:
    """Interaction values for rows ``[x_i, x_j]`` (shape (n, 2d)) of ``grid``."""
    g = np.asarray(grid, dtype=float).reshape(-1, 2 * model.d)
    zi = model._norm(g[:, :model.d])
    zj = model._norm(g[:, model.d:])
    tri = model.inter_nets[e]
    out = tri.g0(np.concatenate([zi, zj], axis=1)) + tri.g1(zi) * tri.g2(zj)
    return model.inter_scale * out


# --------------------------------------------------------------------------- loss

def loss_eq5(pred: np.ndarray, target: np.ndarray, lam: float = 0.1, mode: str = "variance",
             return_grad: bool = False):
    """Mean absolute error plus ``lam`` times the spread of per-node L1 errors.

    ``pred``/``target`` are (N, d) or a (B, N, d) batch (averaged over B).
    ``mode="variance"`` uses the mean-centred sample variance of the per-node
    L1 norms; ``mode="literal"`` squares ``||r_i||_1 + mean(r_i)`` instead.
    With ``return_grad`` the gradient with respect to ``pred`` is returned too.
    """
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise DecouplerError(f"shape mismatch {p.shape} vs {t.shape}")
    single = p.ndim == 2
    if single:
        p, t = p[None], t[None]
    B, N, d = p.shape
    if lam > 0 and N < 2:
        raise DecouplerError("variance term needs N >= 2")
    r = t - p
    sr = np.sign(r)
    norms = np.abs(r).sum(axis=2)  # (B, N)
    scale = 1.0 / (N * d)
    if lam > 0:
        if mode == "variance":
            u = norms - norms.mean(axis=1, keepdims=True)
        elif mode == "literal":
            u = norms + r.mean(axis=2)
        else:
            raise DecouplerError(f"unknown loss mode {mode!r}")
        spread = (u ** 2).sum(axis=1) / (N - 1)
    else:
        u = np.zeros_like(norms)
        spread = np.zeros(B)
    per_t = scale * (norms.sum(axis=1) + lam * spread)
    loss = float(per_t.mean())
    if not return_grad:
        return loss
    coef = 2.0 * lam / (N - 1) if lam > 0 else 0.0
    dr = sr + coef * u[:, :, None] * sr
    if lam > 0 and mode == "literal":
        dr = dr + coef * u[:, :, None] / d
    grad = -scale * dr / B
    return loss, (grad[0] if single else grad)


# --------------------------------------------------------------------------- training

@dataclass
class TrainConfig:
    lr: float = 5e-3
    weight_decay: float = 1e-3
    epochs: int = 1000
    patience: int = 50
    seed: int = 0
    lam: float = 0.1
    loss_mode: str = "variance"
    batch_size: int | None = None
    lr_schedule: str = "cosine"
    min_lr_frac: float = 0.01
    val_tol: float = 1e-4
    min_delta: float = 1e-3


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped: str = ""

    def to_json(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "stopped": self.stopped}


def loss_and_grad(model: DecouplerModel, topology: Topology, states, targets, lam=0.1,
                  mode="variance", mask: ObservationMask | None = None, scale=None, graph=None):
    """Loss on scale-normalised residuals and its gradient w.r.t. ``model.params()``."""
    graph = graph or _Graph(topology, mask, len(model.inter_nets))
    sc = np.ones(model.d) if scale is None else np.asarray(scale)
    pred, caches = _forward(model, graph, states, keep_cache=True)
    obs = graph.node_obs[None, :, None]
    loss, g = loss_eq5(pred / sc, targets * obs / sc, lam, mode, return_grad=True)
    return loss, _backward(model, graph, states, caches, g / sc)


def _target_scales(ts: TrainingSet, topology: Topology):
    """Input shift/scale, output scales for self and per-edge interaction outputs."""
    X = ts.states.reshape(-1, ts.d)
    Y = ts.targets.reshape(-1, ts.d)
    shift = X.mean(axis=0)
    xs = X.std(axis=0)
    xs = np.where(xs > 1e-12, xs, 1.0)
    ys = np.sqrt(np.mean(Y ** 2, axis=0))
    ys = np.where(ys > 1e-12, ys, 1.0)
    deg = topology.adjacency.sum(axis=1)
    mean_deg = deg[deg > 0].mean() if np.any(deg > 0) else 1.0
    return shift, xs, ys, ys / mean_deg


def train_decoupler(ts: TrainingSet, topology: Topology, arch: MlpSpec | None = None,
                    opt: TrainConfig | None = None, mask: ObservationMask | None = None,
                    model: DecouplerModel | None = None):
    """AdamW training of all decoupler nets on the training split.

    Returns ``(model, log)``; the model holds the parameters with the lowest
    validation loss seen.  Training stops when the validation loss falls below
    ``val_tol`` or has not improved by a relative ``min_delta`` for
    ``patience`` epochs.
    """
    opt = opt or TrainConfig()
    Xtr, Ytr = ts.split("train")
    Xva, Yva = ts.split("val")
    if Xtr.shape[0] == 0:
        raise DecouplerError("empty training split")
    mask = mask if mask is not None else ts.mask
    if model is None:
        shift, xs, ys, yi = _target_scales(ts, topology)
        model = DecouplerModel.init(ts.d, topology.n_node_types, topology.n_edge_types, arch,
                                    seed=opt.seed, x_shift=shift, x_scale=xs, self_scale=ys,
                                    inter_scale=yi)
    graph = _Graph(topology, mask, len(model.inter_nets))
    scale = model.self_scale
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    rng = np.random.default_rng(opt.seed + 1)
    log_ = TrainLog()
    best = (math.inf, model.get_flat(), -1)
    stale = 0
    step = 0
    has_val = Xva.shape[0] > 0
    for epoch in range(opt.epochs):
        if opt.lr_schedule == "cosine":
            frac = opt.min_lr_frac + (1 - opt.min_lr_frac) * 0.5 * (1 + math.cos(math.pi * epoch / opt.epochs))
            lr = opt.lr * frac
        else:
            lr = opt.lr
        if opt.batch_size:
            order = rng.permutation(Xtr.shape[0])
            batches = [order[s:s + opt.batch_size] for s in range(0, order.size, opt.batch_size)]
        else:
            batches = [slice(None)]
        epoch_loss = 0.0
        for sel in batches:
            loss, grads = loss_and_grad(model, topology, Xtr[sel], Ytr[sel], opt.lam, opt.loss_mode,
                                        mask, scale, graph)
            if not math.isfinite(loss):
                raise DecouplerError(f"non-finite training loss at epoch {epoch}")
            step += 1
            c1 = 1 - beta1 ** step
            c2 = 1 - beta2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= beta1
                mi += (1 - beta1) * g
                vi *= beta2
                vi += (1 - beta2) * g * g
                p -= lr * (mi / c1 / (np.sqrt(vi / c2) + eps) + opt.weight_decay * p)
            epoch_loss += loss
        log_.train_loss.append(epoch_loss / len(batches))
        if has_val:
            pv, _ = _forward(model, graph, Xva)
            obs = graph.node_obs[None, :, None]
            val = loss_eq5(pv / scale, Yva * obs / scale, opt.lam, opt.loss_mode)
        else:
            val = log_.train_loss[-1]
        if not math.isfinite(val):
            raise DecouplerError(f"non-finite validation loss at epoch {epoch}")
        log_.val_loss.append(val)
        if val < best[0] * (1 - opt.min_delta):
            stale = 0
        else:
            stale += 1
        if val < best[0]:
            best = (val, model.get_flat(), epoch)
        if val < opt.val_tol:
            log_.stopped = "val_tol"
            break
        if stale >= opt.patience:
            log_.stopped = "patience"
            break
    else:
        log_.stopped = "epochs"
    model.set_flat(best[1])
    log_.best_epoch = best[2]
    log.info("decoupler: best val %.3e at epoch %d (%s)", best[0], best[2], log_.stopped)
    return model, log_
