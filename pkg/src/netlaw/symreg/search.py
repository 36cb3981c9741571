"""Expression search and constant refinement.

The search keeps a pool of basis trees (exhaustively enumerated up to a small
depth, then grown by crossover/mutation of the best bases) and runs a beam
search over sparse linear combinations of pool members.  Linear coefficients
come from least squares; constants nested inside bases are tuned with BFGS.
Candidates are ranked by ``error + parsimony * size`` where ``error`` is the
root mean squared error divided by the output standard deviation (RMSE keeps
accuracy differences visible next to a per-node penalty of 1e-3).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .expression import (BINARY, UNARY, DomainError, Expression, compile_numpy, evaluate,
                         linear_combination, simplify)

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    operators: tuple = ("+", "-", "*", "/", "pow", "exp", "sin", "cos")
    max_depth: int = 3
    beam_width: int = 8
    max_terms: int = 4
    iters: int = 4
    seed: int = 0
    parsimony: float = 1e-3
    prune_tol: float = 1e-3
    restarts: int = 8
    pool_size: int = 6000
    offspring: int = 400
    exponents: tuple = (2.0, 3.0)
    leaf_constants: tuple = (1.0,)
    polish_top: int = 5


@dataclass(frozen=True)
class Candidate:
    expr: Expression
    error: float
    size: int
    score: float = field(compare=False)


def _as_env(inputs) -> dict:
    return {k: np.asarray(v, dtype=float).ravel() for k, v in inputs.items()}


def _denominator(y: np.ndarray) -> float:
    v = float(np.var(y))
    return v if v > 1e-300 else 1.0


def expression_error(expr: Expression, inputs: dict, outputs) -> float:
    """Normalised RMSE of ``expr``; ``inf`` if evaluation leaves the domain."""
    y = np.asarray(outputs, dtype=float).ravel()
    try:
        pred = np.broadcast_to(evaluate(expr, _as_env(inputs)), y.shape)
    except DomainError:
        return math.inf
    return float(np.sqrt(np.mean((pred - y) ** 2) / _denominator(y)))


# ---------------------------------------------------------------------------- constants

def fit_constants(expr: Expression, inputs: dict, outputs, restarts: int = 8, seed: int = 0) -> Expression:
    """BFGS on the squared error over the constant slots of ``expr``.

    The first start uses the current constants, the remaining ``restarts - 1``
    are random perturbations.  The best result is returned only if it does not
    increase the error; constant-free expressions are returned unchanged.
    """
    c0 = np.array(expr.constants())
    if c0.size == 0:
        return expr
    env = _as_env(inputs)
    y = np.asarray(outputs, dtype=float).ravel()
    names = list(env)
    arrays = [env[k] for k in names]

    def objective(c):
        try:
            f = compile_numpy(expr.with_constants(c), names)
            with np.errstate(all="ignore"):
                pred = f(*arrays)
        except (OverflowError, ZeroDivisionError, ValueError):
            return 1e300
        val = float(np.mean((pred - y) ** 2))
        return val if math.isfinite(val) else 1e300

    base = expression_error(expr, inputs, y)
    rng = np.random.default_rng(seed)
    best_c, best_f = None, math.inf
    for r in range(max(1, restarts)):
        start = c0 if r == 0 else c0 + rng.normal(0.0, 1.0, c0.size) * (1.0 + np.abs(c0))
        try:
            res = minimize(objective, start, method="BFGS", options={"gtol": 1e-12, "maxiter": 500})
        except (ValueError, FloatingPointError):
            continue
        if math.isfinite(res.fun) and res.fun < best_f:
            best_c, best_f = res.x, float(res.fun)
    if best_c is None or best_f >= 1e300:
        log.warning("fit_constants: all %d restarts non-finite, keeping %s", restarts, expr)
        return expr
    out = expr.with_constants(best_c)
    if expression_error(out, inputs, y) <= base:
        return out
    return expr


# ---------------------------------------------------------------------------- basis pool

class _Pool:
    """Distinct basis trees with cached values on the sample points."""

    def __init__(self, n: int):
        self.exprs: list[Expression] = []
        self.values: list[np.ndarray] = []
        self.sizes: list[int] = []
        self.depths: list[int] = []
        self._keys: dict = {}
        self.n = n

    @staticmethod
    def _key(v: np.ndarray):
        scale = np.linalg.norm(v)
        u = v / scale
        nz = np.flatnonzero(np.abs(u) > 1e-12)
        if u[nz[0]] < 0:
            u = -u
        return np.round(u, 9).tobytes()

    def add(self, expr: Expression, values: np.ndarray, depth: int) -> bool:
        if values.shape != (self.n,) or not np.all(np.isfinite(values)):
            return False
        if np.max(np.abs(values)) > 1e12 or np.ptp(values) <= 1e-12 * max(1.0, np.max(np.abs(values))):
            return False  # constants are covered by the intercept column
        key = self._key(values)
        size = expr.size()
        if key in self._keys:
            k = self._keys[key]
            if size < self.sizes[k]:
                self.exprs[k], self.values[k], self.sizes[k], self.depths[k] = expr, values, size, depth
            return False
        self._keys[key] = len(self.exprs)
        self.exprs.append(expr)
        self.values.append(values)
        self.sizes.append(size)
        self.depths.append(depth)
        return True

    def __len__(self):
        return len(self.exprs)


def _combine(op: str, a, b):
    """Apply ``op`` to (expr, values) operands; returns None on domain trouble."""
    ea, va = a
    with np.errstate(all="ignore"):
        if op in UNARY:
            if op == "log" and np.any(va <= 0) or op == "sqrt" and np.any(va < 0):
                return None
            return Expression(op, (ea,)), getattr(np, {"abs": "abs"}.get(op, op))(va)
        eb, vb = b
        if op == "+":
            v = va + vb
        elif op == "-":
            v = va - vb
        elif op == "*":
            v = va * vb
        elif op == "/":
            if np.any(vb == 0):
                return None
            v = va / vb
        elif op == "pow":
            expo = float(eb.value)
            if np.any(va < 0) and not expo.is_integer() or np.any(va == 0) and expo < 0:
                return None
            v = np.power(va, expo)
        else:
            raise SearchError(f"unknown operator {op!r}")
    return Expression(op, (ea, eb)), v


def _enumerate(env: dict, cfg: SearchConfig, rng: np.random.Generator) -> _Pool:
    n = len(next(iter(env.values())))
    pool = _Pool(n)
    leaves = [(Expression.var(k), v) for k, v in env.items()]
    consts = [(Expression.const(c), np.full(n, c)) for c in cfg.leaf_constants]
    for e, v in leaves:
        pool.add(e, v, 1)
    binary = [op for op in cfg.operators if op in BINARY and op != "pow"]
    unary = [op for op in cfg.operators if op in UNARY]
    use_pow = "pow" in cfg.operators
    levels = [leaves + consts]  # levels[d-1]: trees of depth exactly d
    for depth in range(2, cfg.max_depth + 1):
        lower = [t for lev in levels for t in lev]
        top = levels[-1]
        new = []
        for t in top:
            for op in unary:
                new.append((op, t, None))
            if use_pow:
                for p in cfg.exponents:
                    new.append(("pow", t, (Expression.const(p), None)))
        top_start = len(lower) - len(top)
        for op in binary:
            commutative = op in ("+", "*")
            for ia, a in enumerate(top):
                for ib, b in enumerate(lower):
                    if commutative and top_start <= ib < top_start + ia:
                        continue  # (b, a) already listed
                    new.append((op, a, b))
                    if not commutative and ib < top_start:
                        new.append((op, b, a))
        budget = max(0, cfg.pool_size - len(pool))
        if len(new) > budget:
            pick = rng.choice(len(new), size=budget, replace=False)
            new = [new[k] for k in np.sort(pick)]
        made = []
        for op, a, b in new:
            if a[0].is_const and (b is None or b[0].is_const):
                continue
            out = _combine(op, a, b)
            if out is None:
                continue
            if pool.add(out[0], out[1], depth):
                made.append(out)
        levels.append(made)
        if len(pool) >= cfg.pool_size:
            break
    return pool


def _evolve(pool: _Pool, parents: list[int], cfg: SearchConfig, rng: np.random.Generator,
            max_depth: int) -> int:
    """Add offspring of ``parents`` (crossover with random pool members, unary mutation)."""
    binary = [op for op in cfg.operators if op in BINARY and op != "pow"]
    unary = [op for op in cfg.operators if op in UNARY]
    added = 0
    if not parents:
        return 0
    for _ in range(cfg.offspring):
        pa = parents[int(rng.integers(len(parents)))]
        a = (pool.exprs[pa], pool.values[pa])
        r = rng.random()
        if r < 0.2 and unary:
            op, b = unary[int(rng.integers(len(unary)))], None
            depth = pool.depths[pa] + 1
        elif r < 0.3 and "pow" in cfg.operators:
            p = cfg.exponents[int(rng.integers(len(cfg.exponents)))]
            op, b = "pow", (Expression.const(p), None)
            depth = pool.depths[pa] + 1
        elif binary:
            op = binary[int(rng.integers(len(binary)))]
            if rng.random() < 0.2 and cfg.leaf_constants:
                c = cfg.leaf_constants[int(rng.integers(len(cfg.leaf_constants)))]
                pb, b = -1, (Expression.const(c), np.full(pool.n, c))
                depth_b = 1
            else:
                pb = int(rng.integers(len(pool)))
                b = (pool.exprs[pb], pool.values[pb])
                depth_b = pool.depths[pb]
            if rng.random() < 0.5:
                a, b = b, a
            depth = 1 + max(pool.depths[pa], depth_b)
        else:
            continue
        if depth > max_depth:
            continue
        out = _combine(op, a, b)
        if out is not None and pool.add(out[0], out[1], depth):
            added += 1
    return added


# ---------------------------------------------------------------------------- beam over combinations

def _subset_size(sizes: np.ndarray, subset: tuple) -> int:
    # intercept column 0 contributes a bare constant; others "c * b"
    total = sum(1 if k == 0 else int(sizes[k]) + 2 for k in subset)
    return max(1, total + max(0, len(subset) - 1))


def _beam(design: np.ndarray, sizes: np.ndarray, y: np.ndarray, cfg: SearchConfig) -> dict:
    """Scores of every explored subset: {subset: (nmse, size)}."""
    n, p = design.shape
    denom = _denominator(y) * n
    norms2 = np.einsum("ij,ij->j", design, design)
    archive = {(): (math.sqrt(float(y @ y) / denom), 1)}
    beam = [()]
    for _ in range(cfg.max_terms):
        proposals = {}
        for subset in beam:
            if subset:
                q, _ = np.linalg.qr(design[:, list(subset)])
                resid = y - q @ (q.T @ y)
                proj = design - q @ (q.T @ design)
            else:
                resid, proj = y, design
            pn2 = np.einsum("ij,ij->j", proj, proj)
            ok = pn2 > 1e-10 * norms2
            ok[list(subset)] = False
            gain = np.where(ok, (resid @ proj) ** 2 / np.where(ok, pn2, 1.0), -np.inf)
            base = float(resid @ resid)
            new_err = np.sqrt(np.maximum(base - gain, 0.0) / denom)
            base_size = _subset_size(sizes, subset)
            extra = np.where(np.arange(p) == 0, 1, sizes + 2) + (1 if subset else 0)
            score = new_err + cfg.parsimony * (base_size * (1 if subset else 0) + extra)
            order = np.argsort(score)[: cfg.beam_width]
            for k in order:
                if not np.isfinite(score[k]):
                    continue
                key = tuple(sorted(subset + (int(k),)))
                if key not in proposals:
                    proposals[key] = float(score[k])
        if not proposals:
            break
        ranked = sorted(proposals, key=proposals.get)[: cfg.beam_width]
        for key in ranked:
            cols = design[:, list(key)]
            coef = np.linalg.lstsq(cols, y, rcond=None)[0]
            err = math.sqrt(float(np.sum((cols @ coef - y) ** 2)) / denom)
            archive[key] = (err, _subset_size(sizes, key))
        beam = ranked
    return archive


def _snap(c: float) -> float:
    r = round(c)
    return float(r) if abs(c - r) <= 1e-9 * max(1.0, abs(c)) else float(c)


def _materialise(subset: tuple, pool: _Pool, design: np.ndarray, y: np.ndarray, prune_tol: float) -> Expression:
    """Least-squares linear combination over ``subset`` with small coefficients pruned and refit."""
    keep = list(subset)
    coef = np.zeros(0)
    while keep:
        coef = np.linalg.lstsq(design[:, keep], y, rcond=None)[0]
        small = np.abs(coef) < prune_tol
        if not small.any():
            break
        keep = [k for k, s in zip(keep, small) if not s]
    if not keep:
        return Expression.const(0.0)
    terms = [Expression.const(1.0) if k == 0 else pool.exprs[k - 1] for k in keep]
    return simplify(linear_combination([_snap(c) for c in coef], terms))


def _prune_constants(expr: Expression, inputs, y, tol: float, cfg: SearchConfig) -> Expression:
    vals = expr.constants()
    if not vals:
        return expr
    small = [abs(v) < tol for v in vals]
    if not any(small):
        return expr
    zeroed = simplify(expr.with_constants([0.0 if s else v for v, s in zip(vals, small)]))
    return fit_constants(zeroed, inputs, y, restarts=cfg.restarts, seed=cfg.seed)


def pareto_front(cands: list[Candidate]) -> list[Candidate]:
    """Non-dominated candidates by (error, size), ordered by score."""
    front = []
    for c in cands:
        dominated = any((o.error <= c.error and o.size <= c.size) and (o.error < c.error or o.size < c.size)
                        for o in cands)
        if not dominated and not any(f.expr == c.expr for f in front):
            front.append(c)
    return sorted(front, key=lambda c: (c.score, c.size))


def search_regress(inputs: dict, outputs, config: SearchConfig | None = None) -> list[Candidate]:
    """Search closed-form expressions for ``outputs`` as a function of ``inputs``.

    Parameters
    ----------
    inputs : mapping of variable name -> 1-D sample array
    outputs : 1-D targets, same length
    config : search settings; deterministic for a fixed ``config.seed``

    Returns
    -------
    Pareto front over (error, size), best score first.  The constant model is
    always admissible, so the front is never empty.
    """
    cfg = config or SearchConfig()
    env = _as_env(inputs)
    y = np.asarray(outputs, dtype=float).ravel()
    if y.size == 0:
        raise SearchError("no samples")
    if any(v.shape != y.shape for v in env.values()):
        raise SearchError("input and output sample counts differ")
    rng = np.random.default_rng(cfg.seed)
    pool = _enumerate(env, cfg, rng) if env else _Pool(y.size)
    evolve_depth = cfg.max_depth + 2
    for gen in range(max(1, cfg.iters)):
        design = np.column_stack([np.ones(y.size)] + pool.values) if len(pool) else np.ones((y.size, 1))
        sizes = np.array([1] + pool.sizes)
        scored = _beam(design, sizes, y, cfg)
        if gen == cfg.iters - 1 or not len(pool):
            break
        best = sorted(scored, key=lambda s: scored[s][0] + cfg.parsimony * scored[s][1])[: cfg.beam_width]
        parents = sorted({k - 1 for s in best for k in s if k > 0})
        _evolve(pool, parents, cfg, rng, evolve_depth)

    # materialise the best-scoring subsets of the final generation
    ranked = sorted(scored, key=lambda s: scored[s][0] + cfg.parsimony * scored[s][1])
    cands = []
    seen = set()
    for rank, subset in enumerate(ranked[: max(cfg.polish_top * 4, 20)]):
        expr = _materialise(subset, pool, design, y, cfg.prune_tol)
        if rank < cfg.polish_top and any(pool.exprs[k - 1].constants() for k in subset if k > 0):
            expr = fit_constants(expr, env, y, restarts=cfg.restarts, seed=cfg.seed)
            expr = _prune_constants(expr, env, y, cfg.prune_tol, cfg)
        if expr in seen:
            continue
        seen.add(expr)
        cands.append(_candidate(expr, env, y, cfg))
    mean_expr = Expression.const(_snap(float(np.mean(y))) if abs(np.mean(y)) >= cfg.prune_tol else 0.0)
    if mean_expr not in seen:
        cands.append(_candidate(mean_expr, env, y, cfg))
    cands = [c for c in cands if math.isfinite(c.error)]
    return pareto_front(cands)


def _candidate(expr: Expression, env: dict, y: np.ndarray, cfg: SearchConfig) -> Candidate:
    err = expression_error(expr, env, y)
    size = expr.size()
    return Candidate(expr, err, size, err + cfg.parsimony * size)
