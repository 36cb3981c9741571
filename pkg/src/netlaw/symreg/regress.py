"""From trained decoupler networks to closed-form node-wise equations.

Variable convention: ``x_i`` / ``x_j`` for one-dimensional states, otherwise
``x_i1 .. x_id`` and ``x_j1 .. x_jd`` (1-based state components).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..topology import Topology
from .expression import (Expression, UnboundVariableError, compile_numpy, evaluate, linear_combination,
                         parse_infix, parse_prefix, simplify, to_infix, to_prefix)
from .library import FunctionLibrary, stlsq
from .sampling import kmeans_sample
from .search import SearchConfig, expression_error, search_regress


class RegressionError(RuntimeError):
    pass


def variable_names(d: int) -> tuple[list[str], list[str]]:
    """(self variable names, interaction variable names) for state dimension ``d``."""
    if d == 1:
        return ["x_i"], ["x_i", "x_j"]
    xi = [f"x_i{c + 1}" for c in range(d)]
    xj = [f"x_j{c + 1}" for c in range(d)]
    return xi, xi + xj


# ---------------------------------------------------------------------------- query sources

class NetQuery:
    """Adapter exposing a trained :class:`DecouplerModel` to the regression driver."""

    def __init__(self, model):
        from ..decoupler import query_inter, query_self
        self.model = model
        self.d = model.d
        self.n_node_types = len(model.self_nets)
        self.n_edge_types = len(model.inter_nets)
        self._qs, self._qi = query_self, query_inter

    def query_self(self, k: int, x: np.ndarray) -> np.ndarray:
        return self._qs(self.model, k, x)

    def query_inter(self, e: int, x: np.ndarray) -> np.ndarray:
        return self._qi(self.model, e, x)


class FunctionQuery:
    """Known functions ``self_fns[k](X) -> (n, d)`` and ``inter_fns[e](XiXj) -> (n, d)``."""

    def __init__(self, d: int, self_fns, inter_fns):
        self.d = d
        self.self_fns = list(self_fns)
        self.inter_fns = list(inter_fns)
        self.n_node_types = len(self.self_fns)
        self.n_edge_types = len(self.inter_fns)

    def query_self(self, k, x):
        return np.asarray(self.self_fns[k](np.asarray(x, dtype=float)), dtype=float).reshape(len(x), self.d)

    def query_inter(self, e, x):
        return np.asarray(self.inter_fns[e](np.asarray(x, dtype=float)), dtype=float).reshape(len(x), self.d)


# ---------------------------------------------------------------------------- configs

@dataclass(frozen=True)
class SamplingConfig:
    """Raw draws from the training-state distribution, reduced by k-means.

    ``mode="data"`` resamples observed states (pairs along edges for the
    interaction) with Gaussian jitter of ``jitter`` times the per-dimension
    spread; ``mode="uniform"`` draws inside ``ranges`` (per state dimension)
    or the observed envelope.
    """

    n_raw: int = 10000
    k: int = 512
    jitter: float = 0.01
    mode: str = "data"
    ranges: tuple | None = None


@dataclass(frozen=True)
class SparseBackend:
    library: FunctionLibrary
    threshold: float = 0.05
    max_iters: int = 20


@dataclass(frozen=True)
class SearchBackend:
    config: SearchConfig = field(default_factory=SearchConfig)


# ---------------------------------------------------------------------------- discovered model

@dataclass(frozen=True)
class FittedExpression:
    expr: Expression
    error: float = 0.0
    complexity: int = 0

    def to_json(self) -> dict:
        return {"prefix": to_prefix(self.expr), "infix": to_infix(self.expr),
                "error": self.error if np.isfinite(self.error) else None, "complexity": self.complexity or self.expr.size()}

    @classmethod
    def from_json(cls, obj) -> "FittedExpression":
        return cls(parse_prefix(obj["prefix"]), float("nan") if obj.get("error") is None else float(obj["error"]), int(obj.get("complexity", 0)))


@dataclass(frozen=True)
class DiscoveredModel:
    """Self expressions per node type and interaction expressions per edge type (one per state dim)."""

    d: int
    self_exprs: tuple
    inter_exprs: tuple
    provenance: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_exprs(cls, d: int, self_exprs, inter_exprs, provenance=None) -> "DiscoveredModel":
        """Build from plain expressions (or infix strings); nested as [type][dim]."""
        def wrap(e):
            e = parse_infix(e) if isinstance(e, str) else e
            return e if isinstance(e, FittedExpression) else FittedExpression(e, 0.0, e.size())

        return cls(d, tuple(tuple(wrap(e) for e in row) for row in self_exprs),
                   tuple(tuple(wrap(e) for e in row) for row in inter_exprs), dict(provenance or {}))

    def self_expr(self, k: int = 0, dim: int = 0) -> Expression:
        return self.self_exprs[k][dim].expr

    def inter_expr(self, e: int = 0, dim: int = 0) -> Expression:
        return self.inter_exprs[e][dim].expr

    def to_json(self) -> dict:
        return {"d": self.d,
                "variables": dict(zip(("self", "inter"), variable_names(self.d))),
                "self": [[f.to_json() for f in row] for row in self.self_exprs],
                "inter": [[f.to_json() for f in row] for row in self.inter_exprs],
                "provenance": self.provenance}

    @classmethod
    def from_json(cls, obj) -> "DiscoveredModel":
        return cls(int(obj["d"]),
                   tuple(tuple(FittedExpression.from_json(f) for f in row) for row in obj["self"]),
                   tuple(tuple(FittedExpression.from_json(f) for f in row) for row in obj["inter"]),
                   dict(obj.get("provenance", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "DiscoveredModel":
        return cls.from_json(json.loads(Path(path).read_text()))

    def describe(self) -> str:
        lines = []
        for k, row in enumerate(self.self_exprs):
            for c, f in enumerate(row):
                lines.append(f"self[{k}][{c}] = {to_infix(f.expr)}")
        for e, row in enumerate(self.inter_exprs):
            for c, f in enumerate(row):
                lines.append(f"inter[{e}][{c}] = {to_infix(f.expr)}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------- sampling

def _jittered(rows: np.ndarray, n_raw: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    pick = rows[rng.integers(rows.shape[0], size=n_raw)]
    spread = rows.max(axis=0) - rows.min(axis=0)
    out = pick + rng.normal(0.0, 1.0, pick.shape) * jitter * spread
    return np.clip(out, rows.min(axis=0), rows.max(axis=0))


def _uniform(lo: np.ndarray, hi: np.ndarray, n_raw: int, rng) -> np.ndarray:
    return lo + (hi - lo) * rng.random((n_raw, lo.size))


def draw_query_points(states: np.ndarray, topology: Topology, sampling: SamplingConfig, seed: int):
    """Representative self and interaction query points per node / edge type.

    Returns ``(self_points, inter_points)``: lists indexed by type of arrays of
    shape (k, d) and (k, 2d); a type with no data gets ``None``.
    """
    X = np.asarray(states, dtype=float)
    if X.ndim == 2:
        X = X[..., None]
    T, N, d = X.shape
    if N != topology.n:
        raise RegressionError(f"states have {N} nodes, topology {topology.n}")
    seeds = np.random.SeedSequence(seed).spawn(topology.n_node_types + topology.n_edge_types)
    self_pts, inter_pts = [], []
    ranges = None if sampling.ranges is None else np.asarray(sampling.ranges, dtype=float).reshape(d, 2)
    for k in range(topology.n_node_types):
        rng = np.random.default_rng(seeds[k])
        rows = X[:, topology.node_type == k, :].reshape(-1, d)
        if rows.size == 0:
            self_pts.append(None)
            continue
        if sampling.mode == "uniform":
            lo, hi = (ranges[:, 0], ranges[:, 1]) if ranges is not None else (rows.min(0), rows.max(0))
            raw = _uniform(lo, hi, sampling.n_raw, rng)
        else:
            raw = _jittered(rows, sampling.n_raw, sampling.jitter, rng)
        self_pts.append(_reduce(raw, sampling.k, int(rng.integers(2**31))))
    ii, jj, _, et = topology.edges()
    for e in range(topology.n_edge_types):
        rng = np.random.default_rng(seeds[topology.n_node_types + e])
        sel = et == e
        if not sel.any():
            inter_pts.append(None)
            continue
        if sampling.mode == "uniform":
            flat = X.reshape(-1, d)
            lo, hi = (ranges[:, 0], ranges[:, 1]) if ranges is not None else (flat.min(0), flat.max(0))
            raw = _uniform(np.r_[lo, lo], np.r_[hi, hi], sampling.n_raw, rng)
        else:
            t_idx = rng.integers(T, size=sampling.n_raw)
            e_idx = rng.choice(np.flatnonzero(sel), size=sampling.n_raw)
            pairs = np.concatenate([X[t_idx, ii[e_idx]], X[t_idx, jj[e_idx]]], axis=1)
            raw = _jittered(pairs, sampling.n_raw, sampling.jitter, rng) if sampling.jitter > 0 else pairs
        inter_pts.append(_reduce(raw, sampling.k, int(rng.integers(2**31))))
    return self_pts, inter_pts


def _reduce(raw: np.ndarray, k: int, seed: int) -> np.ndarray:
    distinct = np.unique(raw, axis=0).shape[0]
    return kmeans_sample(raw, min(k, distinct), seed)


# ---------------------------------------------------------------------------- backends

def _run_backend(backend, names: list[str], pts: np.ndarray, y: np.ndarray, seed: int):
    env = {nm: pts[:, c] for c, nm in enumerate(names)}
    if isinstance(backend, SparseBackend):
        lib = backend.library.restrict(names)
        fit = stlsq(lib.design(env), y, backend.threshold, backend.max_iters)
        expr = simplify(linear_combination(fit.coef, lib.terms))
        front = []
    elif isinstance(backend, SearchBackend):
        cfg = backend.config
        cfg = SearchConfig(**{**cfg.__dict__, "seed": seed})
        front = search_regress(env, y, cfg)
        expr = front[0].expr
    else:
        raise RegressionError(f"unknown backend {type(backend).__name__}")
    err = expression_error(expr, env, y)
    alts = [{"infix": to_infix(c.expr), "error": c.error, "complexity": c.size} for c in front]
    return FittedExpression(expr, err, expr.size()), alts


def regress_decoupler(model, states: np.ndarray, topology: Topology, sampling: SamplingConfig | None = None,
                      backend=None, seed: int = 0) -> DiscoveredModel:
    """Query the decoupler on representative points and regress each output dimension.

    Parameters
    ----------
    model : trained ``DecouplerModel`` or any object with ``d``, ``n_node_types``,
        ``n_edge_types``, ``query_self(k, X)`` and ``query_inter(e, X)``
    states : training states (T, N, d) defining the sampling distribution
    topology : provides node / edge type membership and edge pairs
    sampling, backend : see :class:`SamplingConfig`, :class:`SparseBackend`, :class:`SearchBackend`
    """
    src = NetQuery(model) if hasattr(model, "self_nets") else model
    sampling = sampling or SamplingConfig()
    backend = backend or SearchBackend()
    d = src.d
    self_names, inter_names = variable_names(d)
    self_pts, inter_pts = draw_query_points(states, topology, sampling, seed)
    if len(self_pts) > src.n_node_types or len(inter_pts) > src.n_edge_types:
        raise RegressionError("topology has more node/edge types than the decoupler")
    seeds = np.random.SeedSequence(seed).spawn(2 * d * (len(self_pts) + len(inter_pts)) + 1)
    unit = iter(int(s.generate_state(1)[0]) for s in seeds)
    zero = FittedExpression(Expression.const(0.0), 0.0, 1)
    self_rows, inter_rows, alternatives = [], [], {}
    for k, pts in enumerate(self_pts):
        if pts is None:
            self_rows.append(tuple(zero for _ in range(d)))
            continue
        out = src.query_self(k, pts)
        row = []
        for c in range(d):
            try:
                fe, alts = _run_backend(backend, self_names, pts, out[:, c], next(unit))
            except Exception as exc:  # stage label for the caller
                raise RegressionError(f"self[{k}][{c}]: {exc}") from exc
            row.append(fe)
            alternatives[f"self[{k}][{c}]"] = alts
        self_rows.append(tuple(row))
    for e, pts in enumerate(inter_pts):
        if pts is None:
            inter_rows.append(tuple(zero for _ in range(d)))
            continue
        out = src.query_inter(e, pts)
        row = []
        for c in range(d):
            try:
                fe, alts = _run_backend(backend, inter_names, pts, out[:, c], next(unit))
            except Exception as exc:
                raise RegressionError(f"inter[{e}][{c}]: {exc}") from exc
            row.append(fe)
            alternatives[f"inter[{e}][{c}]"] = alts
        inter_rows.append(tuple(row))
    prov = {"backend": "sparse" if isinstance(backend, SparseBackend) else "search", "seed": seed,
            "n_points": sampling.k, "n_raw": sampling.n_raw, "alternatives": alternatives}
    return DiscoveredModel(d, tuple(self_rows), tuple(inter_rows), prov)


# ---------------------------------------------------------------------------- assembly

def assemble_rhs(dm: DiscoveredModel, topology: Topology):
    """Node-wise RHS ``f(t, X)`` on (N, d) states: self part plus adjacency-weighted interactions."""
    d = dm.d
    self_names, inter_names = variable_names(d)
    if topology.n_node_types > len(dm.self_exprs):
        raise RegressionError("topology has more node types than the discovered model")
    for row in dm.self_exprs:
        for f in row:
            extra = f.expr.variables() - set(self_names)
            if extra:
                raise UnboundVariableError(f"self expression uses unknown variable(s) {sorted(extra)}")
    self_fns = [[compile_numpy(f.expr, self_names) for f in row] for row in dm.self_exprs]
    inter_fns = [[compile_numpy(f.expr, inter_names) for f in row] for row in dm.inter_exprs]
    groups = []
    ii, jj, ww, et = topology.edges()
    for e in range(min(topology.n_edge_types, len(inter_fns))):
        sel = et == e
        if sel.any():
            groups.append((inter_fns[e], ii[sel], jj[sel], ww[sel]))
    if topology.n_edges() and int(et.max()) >= len(inter_fns):
        raise RegressionError("topology has more edge types than the discovered model")
    node_groups = [np.flatnonzero(topology.node_type == k) for k in range(topology.n_node_types)]
    N = topology.n

    def rhs(t, X):
        X = np.asarray(X, dtype=float).reshape(N, d)
        out = np.empty((N, d))
        for k, nodes in enumerate(node_groups):
            cols = [X[nodes, c] for c in range(d)]
            for c in range(d):
                out[nodes, c] = self_fns[k][c](*cols)
        for fns, i, j, w in groups:
            cols = [X[i, c] for c in range(d)] + [X[j, c] for c in range(d)]
            for c in range(d):
                out[:, c] += np.bincount(i, weights=w * fns[c](*cols), minlength=N)
        return out

    return rhs


# ---------------------------------------------------------------------------- joint refit on data

def _split_terms(expr: Expression) -> list[Expression]:
    """Additive terms of ``expr`` with leading numeric factors stripped."""
    expr = simplify(expr)
    if expr.op == "+":
        return _split_terms(expr.args[0]) + _split_terms(expr.args[1])
    if expr.op == "-":
        return _split_terms(expr.args[0]) + _split_terms(expr.args[1])
    if expr.op == "*" and expr.args[0].is_const:
        return _split_terms(expr.args[1])
    if expr.op == "*" and expr.args[1].is_const:
        return _split_terms(expr.args[0])
    if expr.is_const:
        return [Expression.const(1.0)]
    return [expr]


def _term_union(dm: DiscoveredModel, kind: str, t: int, c: int, use_alternatives: bool) -> list:
    row = dm.self_exprs if kind == "self" else dm.inter_exprs
    terms = _split_terms(row[t][c].expr)
    if use_alternatives:
        for alt in dm.provenance.get("alternatives", {}).get(f"{kind}[{t}][{c}]", []):
            terms += _split_terms(parse_infix(alt["infix"]))
    return list(dict.fromkeys(terms))


class _Columns:
    """Cached design columns: a term's contribution to every (time, node) derivative entry."""

    def __init__(self, X: np.ndarray, topology: Topology):
        self.X = X
        self.T, self.N, self.d = X.shape
        self.names = variable_names(self.d)
        self.topology = topology
        self.edges = topology.edges()
        self.cache = {}

    def column(self, kind: str, t: int, term: Expression) -> np.ndarray:
        key = (kind, t, term)
        if key not in self.cache:
            self.cache[key] = self._build(kind, t, term)
        return self.cache[key]

    def _build(self, kind, t, term):
        X, T, N, d = self.X, self.T, self.N, self.d
        self_names, inter_names = self.names
        if kind == "self":
            nodes = self.topology.node_type == t
            env = {nm: X[:, :, m] for m, nm in enumerate(self_names)}
            return (np.broadcast_to(evaluate(term, env), (T, N)) * nodes[None, :]).ravel()
        ii, jj, ww, et = self.edges
        sel = et == t
        i, j, w = ii[sel], jj[sel], ww[sel]
        env = {nm: X[:, i, m] for m, nm in enumerate(self_names)}
        env.update({nm: X[:, j, m] for m, nm in zip(range(d), inter_names[d:])})
        vals = np.broadcast_to(evaluate(term, env), (T, i.size)) * w
        agg = np.zeros((T, N))
        np.add.at(agg, (slice(None), i), vals)
        return agg.ravel()

    def slots(self, dm: DiscoveredModel) -> list[tuple[str, int]]:
        et = self.edges[3]
        return ([("self", k) for k in range(len(dm.self_exprs))]
                + [("inter", e) for e in range(len(dm.inter_exprs)) if np.any(et == e)])


def _joint_fit(cols: _Columns, chosen: dict, y: np.ndarray, threshold: float):
    """Least-squares coefficients for the union of chosen terms; returns (slots, coef, residual)."""
    slots, mats = [], []
    for (kind, t), terms in chosen.items():
        for term in terms:
            slots.append((kind, t, term))
            mats.append(cols.column(kind, t, term))
    coef = np.zeros(len(slots))
    if not slots:
        return slots, coef, y
    theta = np.column_stack(mats)
    live = np.any(theta != 0, axis=0)
    if live.any():
        coef[live] = stlsq(theta[:, live], y, threshold, check_rank=False).coef
    return slots, coef, y - theta @ coef


def _rebuild(dm: DiscoveredModel, c: int, slots, coef, new_self, new_inter) -> int:
    size = 0
    for kind, rows in (("self", new_self), ("inter", new_inter)):
        for t in range(len(rows)):
            terms = [(s[2], coef[n]) for n, s in enumerate(slots) if s[0] == kind and s[1] == t]
            if not terms:
                continue
            expr = simplify(linear_combination([v for _, v in terms], [term for term, _ in terms]))
            rows[t][c] = FittedExpression(expr, float("nan"), expr.size())
            size += expr.size()
    return size


def refit_on_data(dm: DiscoveredModel, states: np.ndarray, targets: np.ndarray, topology: Topology,
                  threshold: float = 0.0, use_alternatives: bool = False) -> DiscoveredModel:
    """Jointly refit the linear coefficients of every discovered term against observed derivatives.

    Each expression is split into additive terms (with ``use_alternatives``,
    terms of every Pareto-front alternative are pooled as well); self terms are
    evaluated per node and interaction terms are summed over weighted
    neighbours, then one thresholded least-squares problem per state dimension
    fixes all coefficients at once.  This resolves the self/interaction split
    using the data rather than the networks.
    """
    X = np.asarray(states, dtype=float)
    Y = np.asarray(targets, dtype=float)
    cols = _Columns(X, topology)
    new_self = [list(row) for row in dm.self_exprs]
    new_inter = [list(row) for row in dm.inter_exprs]
    for c in range(dm.d):
        chosen = {(kind, t): _term_union(dm, kind, t, c, use_alternatives) for kind, t in cols.slots(dm)}
        slots, coef, _ = _joint_fit(cols, chosen, Y[:, :, c].ravel(), threshold)
        if slots:
            _rebuild(dm, c, slots, coef, new_self, new_inter)
    prov = dict(dm.provenance)
    prov["refit_on_data"] = {"threshold": threshold, "use_alternatives": use_alternatives}
    return DiscoveredModel(dm.d, tuple(tuple(r) for r in new_self), tuple(tuple(r) for r in new_inter), prov)


def _options(dm: DiscoveredModel, kind: str, t: int, c: int, library: FunctionLibrary | None) -> list[tuple]:
    row = dm.self_exprs if kind == "self" else dm.inter_exprs
    opts = [tuple(dict.fromkeys(_split_terms(row[t][c].expr)))]
    if library is not None:
        names = variable_names(dm.d)[0 if kind == "self" else 1]
        full = tuple(library.restrict(names).terms)
        if full not in opts:
            opts.append(full)
    for alt in dm.provenance.get("alternatives", {}).get(f"{kind}[{t}][{c}]", []):
        terms = tuple(dict.fromkeys(_split_terms(parse_infix(alt["infix"]))))
        if terms not in opts:
            opts.append(terms)
    return opts


def select_on_data(dm: DiscoveredModel, states: np.ndarray, targets: np.ndarray, topology: Topology,
                   threshold: float = 0.0, parsimony: float = 1e-3, passes: int = 2,
                   library: FunctionLibrary | None = None) -> DiscoveredModel:
    """Pick one candidate structure per expression and refit all coefficients on the data.

    For every self / interaction slot the options are the reported expression
    and each alternative on its Pareto front, reduced to their additive terms;
    with a ``library`` its full (variable-restricted) term set is one more
    option, whose thresholded refit prunes it back to a sparse expression.
    Slots are updated one at a time (``passes`` sweeps) to the option that
    minimises ``NRMSE + parsimony * size`` of the jointly refitted model
    against the observed derivatives.
    """
    X = np.asarray(states, dtype=float)
    Y = np.asarray(targets, dtype=float)
    cols = _Columns(X, topology)
    new_self = [list(row) for row in dm.self_exprs]
    new_inter = [list(row) for row in dm.inter_exprs]
    picks = {}
    for c in range(dm.d):
        y = Y[:, :, c].ravel()
        scale = float(np.std(y)) or 1.0
        keys = cols.slots(dm)
        options = {key: _options(dm, key[0], key[1], c, library) for key in keys}
        choice = {key: 0 for key in keys}

        def score(ch):
            chosen = {key: options[key][ch[key]] for key in keys}
            slots, coef, resid = _joint_fit(cols, chosen, y, threshold)
            size = sum(term.size() + 2 for (_, _, term), v in zip(slots, coef) if v != 0)
            return float(np.sqrt(np.mean(resid ** 2)) / scale) + parsimony * size

        best = score(choice)
        for _ in range(passes):
            improved = False
            for key in keys:
                for o in range(len(options[key])):
                    if o == choice[key]:
                        continue
                    trial = {**choice, key: o}
                    s = score(trial)
                    if s < best - 1e-15:
                        best, choice, improved = s, trial, True
            if not improved:
                break
        chosen = {key: options[key][choice[key]] for key in keys}
        slots, coef, _ = _joint_fit(cols, chosen, y, threshold)
        if slots:
            _rebuild(dm, c, slots, coef, new_self, new_inter)
        picks[str(c)] = {f"{k}[{t}]": choice[(k, t)] for k, t in keys}
        picks[f"score{c}"] = best
    prov = dict(dm.provenance)
    prov["select_on_data"] = {"threshold": threshold, "parsimony": parsimony, "choices": picks}
    return DiscoveredModel(dm.d, tuple(tuple(r) for r in new_self), tuple(tuple(r) for r in new_inter), prov)
