"""Network topologies: random generators, edge-list ingestion, spurious-link
perturbation and observation masks.

Convention: ``adjacency[i, j]`` is the weight with which node ``j`` enters the
derivative of node ``i``.  Edge-list lines ``src dst w`` set ``adjacency[src, dst]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TopologyError(ValueError):
    """Invalid topology arguments or malformed topology files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Topology:
    """Weighted (possibly directed) graph with node and edge type labels."""

    adjacency: np.ndarray
    directed: bool = False
    node_type: np.ndarray | None = None
    edge_type: np.ndarray | None = None
    allow_self_loops: bool = False

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise TopologyError(f"adjacency must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise TopologyError("adjacency weights must be finite and >= 0")
        if not self.allow_self_loops and np.any(np.diag(a) != 0):
            raise TopologyError("self-loops present but allow_self_loops is False")
        n = a.shape[0]
        nt = np.zeros(n, dtype=np.int64) if self.node_type is None else np.asarray(self.node_type, dtype=np.int64)
        et = np.zeros((n, n), dtype=np.int64) if self.edge_type is None else np.asarray(self.edge_type, dtype=np.int64)
        if nt.shape != (n,) or et.shape != (n, n):
            raise TopologyError("node_type must have shape (n,) and edge_type (n, n)")
        et = np.where(a > 0, et, 0)
        for name, labels in (("node_type", nt), ("edge_type", et[a > 0])):
            if labels.size and (labels.min() < 0 or np.unique(labels).size != labels.max() + 1):
                raise TopologyError(f"{name} labels must be dense in [0, K)")
        object.__setattr__(self, "adjacency", _frozen(a))
        object.__setattr__(self, "node_type", _frozen(nt))
        object.__setattr__(self, "edge_type", _frozen(et))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_node_types(self) -> int:
        return int(self.node_type.max()) + 1 if self.n else 0

    @property
    def n_edge_types(self) -> int:
        mask = self.adjacency > 0
        return int(self.edge_type[mask].max()) + 1 if mask.any() else 1

    @property
    def in_degree(self) -> np.ndarray:
        """Number of nonzero entries per row (afferent connections)."""
        return (self.adjacency > 0).sum(axis=1)

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Nonzero entries as arrays ``(i, j, weight, edge_type)`` in row-major order."""
        i, j = np.nonzero(self.adjacency)
        return i, j, self.adjacency[i, j], self.edge_type[i, j]

    def n_edges(self) -> int:
        nnz = int(np.count_nonzero(self.adjacency))
        return nnz if self.directed else nnz // 2

    def with_adjacency(self, adjacency: np.ndarray) -> "Topology":
        return Topology(adjacency, self.directed, self.node_type, self.edge_type, self.allow_self_loops)

    def permuted(self, perm: np.ndarray) -> "Topology":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        p = np.asarray(perm)
        return Topology(self.adjacency[np.ix_(p, p)], self.directed, self.node_type[p],
                        self.edge_type[np.ix_(p, p)], self.allow_self_loops)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.directed == other.directed
                and np.array_equal(self.adjacency, other.adjacency)
                and np.array_equal(self.node_type, other.node_type)
                and np.array_equal(self.edge_type, other.edge_type))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Which node states (``state_mask``, n x d) and links (``adj_mask``, n x n) are observed."""

    state_mask: np.ndarray
    adj_mask: np.ndarray

    @classmethod
    def full(cls, n: int, d: int) -> "ObservationMask":
        return cls(np.ones((n, d), dtype=bool), np.ones((n, n), dtype=bool))

    def __post_init__(self):
        sm = np.asarray(self.state_mask, dtype=bool)
        am = np.asarray(self.adj_mask, dtype=bool)
        if sm.ndim != 2 or am.shape != (sm.shape[0], sm.shape[0]):
            raise TopologyError("mask shapes must be (n, d) and (n, n)")
        object.__setattr__(self, "state_mask", _frozen(sm))
        object.__setattr__(self, "adj_mask", _frozen(am))

    def check(self, topology: Topology, d: int) -> None:
        if self.state_mask.shape != (topology.n, d):
            raise TopologyError(f"state_mask shape {self.state_mask.shape} != {(topology.n, d)}")


def _check_n(n: int) -> None:
    if int(n) != n or n < 2:
        raise TopologyError(f"n must be an integer >= 2, got {n}")


def gen_er(n: int, p: float, seed: int) -> Topology:
    """Undirected Erdos-Renyi G(n, p) graph without self-loops."""
    _check_n(n)
    if not 0.0 <= p <= 1.0:
        raise TopologyError(f"p must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    a = (upper | upper.T).astype(np.float64)
    return Topology(a, directed=False)


def gen_ba(n: int, m: int, seed: int) -> Topology:
    """Barabasi-Albert preferential attachment grown from an m-node complete core.

    Every new node links to ``m`` distinct existing nodes sampled with
    probability proportional to their current degree.
    """
    _check_n(n)
    if not 1 <= m < n:
        raise TopologyError(f"m must satisfy 1 <= m < n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    a = np.zeros((n, n))
    a[:m, :m] = 1.0
    np.fill_diagonal(a, 0.0)
    degree = a.sum(axis=1)
    for new in range(m, n):
        w = degree[:new].copy()
        if w.sum() == 0:  # m == 1 core has no edges yet
            w[:] = 1.0
        targets = rng.choice(new, size=m, replace=False, p=w / w.sum())
        a[new, targets] = a[targets, new] = 1.0
        degree[targets] += 1
        degree[new] += m
    return Topology(a, directed=False)


def load_edge_list(path, weighted: bool = False, directed: bool = False,
                   allow_self_loops: bool = False) -> Topology:
    """Read ``src dst [weight]`` lines (0-based ids, ``#`` comments allowed)."""
    path = Path(path)
    if not path.exists():
        raise TopologyError(f"edge list not found: {path}")
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) not in (2, 3):
                raise ValueError("expected 'src dst [weight]'")
            src, dst = int(parts[0]), int(parts[1])
            w = float(parts[2]) if (weighted and len(parts) == 3) else 1.0
        except ValueError as exc:
            raise TopologyError(f"{path}:{lineno}: cannot parse {raw!r} ({exc})") from None
        if src < 0 or dst < 0:
            raise TopologyError(f"{path}:{lineno}: negative node id")
        if not np.isfinite(w) or w < 0:
            raise TopologyError(f"{path}:{lineno}: negative or non-finite weight {w}")
        rows.append((src, dst, w))
    if not rows:
        raise TopologyError(f"{path}: no edges")
    n = 1 + max(max(s, d) for s, d, _ in rows)
    a = np.zeros((n, n))
    for s, d, w in rows:
        a[s, d] = w
        if not directed:
            a[d, s] = w
    return Topology(a, directed=directed, allow_self_loops=allow_self_loops)


def save_edge_list(topology: Topology, path) -> None:
    """Write one ``src dst weight`` line per edge (upper triangle only if undirected)."""
    i, j, w, _ = topology.edges()
    keep = np.ones_like(i, dtype=bool) if topology.directed else i <= j
    with open(path, "w") as fh:
        for s, d, x in zip(i[keep].tolist(), j[keep].tolist(), w[keep].tolist()):
            fh.write(f"{s} {d} {x!r}\n")


def save_adjacency_csv(topology: Topology, path) -> None:
    np.savetxt(path, topology.adjacency, delimiter=",", fmt="%.17g")


def load_adjacency_csv(path, directed: bool | None = None) -> Topology:
    a = np.loadtxt(path, delimiter=",", ndmin=2)
    if directed is None:
        directed = not np.array_equal(a, a.T)
    return Topology(a, directed=directed)


def perturb_topology(topology: Topology, eta: float, seed: int) -> Topology:
    """Flip every ordered (or unordered, if undirected) off-diagonal pair with probability eta.

    Existing edges are removed and absent pairs are added as unit-weight links.
    """
    if not 0.0 <= eta <= 1.0:
        raise TopologyError(f"eta must lie in [0, 1], got {eta}")
    a = topology.adjacency
    n = topology.n
    rng = np.random.default_rng(seed)
    r = rng.random((n, n))
    if not topology.directed:
        r = np.triu(r, k=1)
        r = r + r.T
    flip = r < eta
    np.fill_diagonal(flip, False)
    present = a > 0
    out = np.where(present & flip, 0.0, a)
    out = np.where(~present & flip, 1.0, out)
    if topology.allow_self_loops:
        np.fill_diagonal(out, np.diag(a))
    et = np.where(out > 0, topology.edge_type, 0)
    return Topology(out, topology.directed, topology.node_type, et, topology.allow_self_loops)
