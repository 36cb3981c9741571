"""Poincare sections and parameter scans of (discovered) chaotic network models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynamicsSpec, IntegrationError, builtin_rhs, integrate_ivp
from .topology import Topology


class ChaosError(ValueError):
    pass


@dataclass(frozen=True)
class SectionConfig:
    """Section ``x[node, dim] = value`` crossed in ``direction``; ``record_dim`` is reported.

    ``transient`` is the discarded initial time; ``None`` drops the first half
    of the integration window.
    """

    dim: int = 0
    value: float = 0.1
    direction: str = "rising"
    transient: float | None = None
    record_dim: int = 1
    node: int = 0

    def __post_init__(self):
        if self.direction not in ("rising", "falling", "both"):
            raise ChaosError(f"direction must be rising, falling or both, got {self.direction!r}")

    def transient_for(self, t_end: float) -> float:
        tr = 0.5 * t_end if self.transient is None else float(self.transient)
        if not 0.0 <= tr < t_end:
            raise ChaosError(f"transient {tr} must lie in [0, t_end={t_end})")
        return tr


def _crossings(times, series, states, cfg: SectionConfig) -> np.ndarray:
    s = series - cfg.value
    lo, hi = s[:-1], s[1:]
    rising = (lo < 0) & (hi >= 0)
    falling = (lo > 0) & (hi <= 0)
    sel = {"rising": rising, "falling": falling, "both": rising | falling}[cfg.direction]
    k = np.flatnonzero(sel)
    if k.size == 0:
        return np.empty((0, states.shape[-1]))
    frac = (-lo[k] / (hi[k] - lo[k]))[:, None]
    return states[k] + frac * (states[k + 1] - states[k])


def poincare_section(rhs, topology: Topology | None, x0, cfg: SectionConfig, t_end: float,
                     dt_out: float = 0.01, rtol: float = 1e-10, atol: float = 1e-10,
                     method: str = "DOP853") -> np.ndarray:
    """States of ``cfg.node`` at each directed crossing after the transient.

    Crossing states are linearly interpolated between output samples.  Returns
    an array of shape (n_crossings, d), empty when the section is never hit.
    """
    tr = cfg.transient_for(t_end)
    traj = integrate_ivp(rhs, topology, x0, t_end, dt_out, rtol=rtol, atol=atol, method=method)
    keep = traj.times >= tr
    node_states = traj.states[keep, cfg.node, :]
    if not 0 <= cfg.dim < node_states.shape[1] or not 0 <= cfg.record_dim < node_states.shape[1]:
        raise ChaosError("section or record dimension out of range")
    return _crossings(traj.times[keep], node_states[:, cfg.dim], node_states, cfg)


def count_clusters(values, gap: float) -> int:
    """Groups left after merging sorted values whose neighbours differ by at most ``gap``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        return 0
    return int(1 + np.sum(np.diff(v) > gap))


@dataclass
class BifurcationResult:
    c_values: list
    values: dict                      # c -> 1-D array of recorded section values
    failures: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[float, float]]:
        return [(c, float(v)) for c in self.c_values for v in self.values.get(c, ())]

    def value_range(self) -> float:
        allv = np.concatenate([np.asarray(v) for v in self.values.values()] or [np.zeros(0)])
        return float(np.ptp(allv)) if allv.size else 0.0

    def cluster_counts(self, gap_frac: float = 0.05, scale: float | None = None) -> dict:
        """Clusters per c with gap ``gap_frac * scale`` (default scale: value range over the scan)."""
        scale = self.value_range() if scale is None else scale
        gap = gap_frac * scale
        return {c: count_clusters(self.values[c], gap) for c in self.c_values if c in self.values}

    def distinct_counts(self, frac: float = 1e-3, scale: float | None = None) -> dict:
        """Finer count separating values that differ by more than ``frac`` of the scan range."""
        return self.cluster_counts(frac, scale)

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("c,value\n")
            for c, v in self.rows():
                fh.write(f"{float(c)!r},{float(v)!r}\n")


def bifurcation_scan(family, topology: Topology | None, x0, cfg: SectionConfig, t_end: float,
                     c_range: tuple | None = None, c_steps: int | None = None, c_values=None,
                     dt_out: float = 0.01, rtol: float = 1e-10, atol: float = 1e-10,
                     method: str = "DOP853") -> BifurcationResult:
    """Section values of ``cfg.record_dim`` for each parameter value.

    ``family(c)`` must return an RHS accepted by :func:`integrate_ivp`.  Give
    either ``c_range`` with ``c_steps >= 2`` or explicit ``c_values``.
    Integration failures are recorded per c and the scan continues.
    """
    if c_values is None:
        if c_range is None or c_steps is None or c_steps < 2:
            raise ChaosError("need c_range with c_steps >= 2, or explicit c_values")
        c_values = np.linspace(c_range[0], c_range[1], c_steps)
    cs = [float(c) for c in c_values]
    values, failures = {}, {}
    for c in cs:
        try:
            pts = poincare_section(family(c), topology, x0, cfg, t_end, dt_out, rtol, atol, method)
        except IntegrationError as exc:
            failures[c] = f"{exc} (t={exc.t_fail:.4g})"
            continue
        values[c] = pts[:, cfg.record_dim]
    return BifurcationResult(cs, values, failures)


def rossler_family(topology: Topology, a: float = 0.2, b: float = 0.2, eps: float = 0.15):
    """Coupled Rossler RHS as a function of the parameter ``c``."""

    def make(c: float):
        return DynamicsSpec("Rossler", {"eps": eps, "a": a, "b": b, "c": c})

    return make


def discovered_family(dm, topology: Topology, term: str = "x_i3", dim: int = 2, node_type: int = 0):
    """Parameter family of a discovered model through the coefficient of ``term``.

    The discovered self expression of ``dim`` contains ``-c_hat * term``; the
    family replaces ``c_hat`` by ``c`` and leaves everything else unchanged.
    Returns ``(family, c_hat)``.
    """
    from .metrics import coefficient_vector
    from .symreg.library import FunctionLibrary
    from .symreg.regress import assemble_rhs, variable_names

    xi, _ = coefficient_vector(dm.self_expr(node_type, dim), FunctionLibrary((term,)))
    c_hat = -float(xi[0])
    names = variable_names(dm.d)[0]
    if term not in names:
        raise ChaosError(f"{term!r} is not a self variable of a {dm.d}-dimensional model")
    col = names.index(term)
    base = assemble_rhs(dm, topology)
    nodes = topology.node_type == node_type

    def make(c: float):
        def rhs(t, X):
            out = base(t, X)
            out[nodes, dim] += (c_hat - c) * np.asarray(X).reshape(out.shape)[nodes, col]
            return out
        return rhs

    return make, c_hat


def true_family_rhs(topology: Topology, **params):
    """Plain callable version of :func:`rossler_family` (for symmetry with discovered models)."""
    fam = rossler_family(topology, **params)
    return lambda c: (lambda t, X: builtin_rhs(fam(c), topology, X, t))
