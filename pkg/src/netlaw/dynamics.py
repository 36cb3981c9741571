"""Benchmark network dynamics, IVP integration and observation noise."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .topology import Topology

# default parameter sets; Bio uses B as the signed linear coefficient (F + B x)
DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "Bio": {"F": 1.0, "B": -1.0},
    "Gene": {"B": 2.0, "f": 1.0, "h": 2.0},
    "MI": {"b": 1.0, "k": 5.0, "c": 1.0, "d": 5.0, "e": 0.9, "h": 0.1},
    "LV": {"alpha": 0.5, "theta": 1.0},
    "Neur": {"tau": -1.0, "mu": 1.0},
    "Epi": {"delta": 1.0},
    "Kuramoto": {"eps": 0.015, "omega_mean": 1.0, "omega_std": 1.0},
    "FHN": {"eps": 1.0, "a": 0.28, "b": 0.5, "c": -0.04},
    "PredatorPrey": {"a": 1.0, "b": 0.2, "c": 0.7},
    "Lorenz": {"a": 10.0, "eps": 0.05, "r": 28.0, "b": 10.0 / 3.0},
    "Rossler": {"eps": 0.15, "a": 0.2, "b": 0.2, "c": 5.7},
}

STATE_DIM = {"Bio": 1, "Gene": 1, "MI": 1, "LV": 1, "Neur": 1, "Epi": 1, "Kuramoto": 1,
             "FHN": 2, "PredatorPrey": 2, "Lorenz": 3, "Rossler": 3}

# default simulation settings per model: (init distribution, dt, T, T_end)
SIM_SETTINGS = {
    "Bio": (("uniform", 0.0, 2.0), 1e-4, 0.1, 0.5),
    "Gene": (("uniform", 0.0, 2.0), 1e-2, 5.0, 10.0),
    "MI": (("uniform", 0.0, 2.0), 1e-3, 1.0, 5.0),
    "LV": (("uniform", 0.0, 5.0), 1e-4, 0.1, 0.5),
    "Neur": (("uniform", 0.0, 2.0), 1e-2, 5.0, 10.0),
    "Epi": (("uniform", 0.0, 1.0), 1e-3, 1.0, 5.0),
    "Kuramoto": (("uniform", 0.0, 2.0 * np.pi), 1e-2, 5.0, 100.0),
    "FHN": (("gaussian", 0.0, 1.0), 1e-2, 3.0, 100.0),
    "Lorenz": (("gaussian", 0.0, 1.0), 1e-2, 3.0, 100.0),
    "Rossler": (("gaussian", 0.0, 1.0), 1e-2, 3.0, 100.0),
}


class DynamicsError(ValueError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t_fail: float):
        super().__init__(f"{message} (at t={t_fail:.6g})")
        self.t_fail = t_fail


@dataclass(frozen=True)
class DynamicsSpec:
    """A named model plus parameters; ``Custom`` wraps a user callable ``rhs(t, X)``."""

    model: str
    params: dict = field(default_factory=dict)
    node_params: dict = field(default_factory=dict)
    d: int | None = None
    rhs: Callable | None = None

    def __post_init__(self):
        if self.model == "Custom":
            if self.rhs is None or self.d is None:
                raise DynamicsError("Custom dynamics need rhs and d")
            return
        if self.model not in DEFAULT_PARAMS:
            raise DynamicsError(f"unknown model {self.model!r}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.model])
        if unknown:
            raise DynamicsError(f"unknown parameters for {self.model}: {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.model], **self.params}
        if not all(np.isfinite(float(v)) for v in merged.values()):
            raise DynamicsError("parameters must be finite")
        object.__setattr__(self, "params", merged)
        if self.d is not None and self.d != STATE_DIM[self.model]:
            raise DynamicsError(f"{self.model} has state dimension {STATE_DIM[self.model]}")
        object.__setattr__(self, "d", STATE_DIM[self.model])
        object.__setattr__(self, "node_params",
                           {k: np.asarray(v, dtype=float) for k, v in self.node_params.items()})

    def to_json(self) -> dict:
        if self.model == "Custom":
            raise DynamicsError("Custom dynamics cannot be serialized")
        return {"model": self.model, "params": dict(self.params),
                "node_params": {k: v.tolist() for k, v in self.node_params.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> "DynamicsSpec":
        return cls(obj["model"], obj.get("params", {}), obj.get("node_params", {}))


def predator_prey_topology(n_prey: int) -> Topology:
    """Fully connected predator (node 0) + prey graph with K=2 node and E=3 edge types.

    Edge types: 0 = predator <- prey, 1 = prey <- predator, 2 = prey <- prey.
    """
    n = n_prey + 1
    a = np.ones((n, n)) - np.eye(n)
    node_type = np.r_[0, np.ones(n_prey, dtype=int)]
    et = np.full((n, n), 2)
    et[0, :] = 0
    et[1:, 0] = 1
    return Topology(a, directed=True, node_type=node_type, edge_type=et)


def _diffusive(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sum_j A_ij (x_j - x_i)"""
    return a @ x - a.sum(axis=1) * x


def builtin_rhs(spec: DynamicsSpec, topology: Topology | None, state: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Time derivative of an (N, d) state for one of the built-in models."""
    x = np.asarray(state, dtype=float)
    if spec.model == "Custom":
        return np.asarray(spec.rhs(t, x), dtype=float).reshape(x.shape)
    if topology is None or x.shape != (topology.n, spec.d):
        n = None if topology is None else topology.n
        raise DynamicsError(f"state shape {x.shape} != {(n, spec.d)}")
    p = spec.params
    a = topology.adjacency
    m = spec.model
    if spec.d == 1:
        v = x[:, 0]
        if m == "Bio":
            out = p["F"] + p["B"] * v + v * (a @ v)
        elif m == "Gene":
            hv = v ** p["h"]
            out = -p["B"] * v ** p["f"] + a @ (hv / (hv + 1.0))
        elif m == "MI":
            inter = (a * (v[:, None] * v[None, :])
                     / (p["d"] + p["e"] * v[:, None] + p["h"] * v[None, :])).sum(axis=1)
            out = p["b"] + v * (1 - v / p["k"]) * (v / p["c"] - 1) + inter
        elif m == "LV":
            out = v * (p["alpha"] - p["theta"] * v) - v * (a @ v)
        elif m == "Neur":
            out = -v + a @ (1.0 / (1.0 + np.exp(p["tau"] * (v - p["mu"]))))
        elif m == "Epi":
            out = -p["delta"] * v + (1.0 - v) * (a @ v)
        elif m == "Kuramoto":
            omega = spec.node_params.get("omega")
            if omega is None:
                raise DynamicsError("Kuramoto needs node_params['omega']")
            s, c = np.sin(v), np.cos(v)
            # sum_j A_ij sin(x_j - x_i) = cos x_i (A sin x) - sin x_i (A cos x)
            out = omega + p["eps"] * (c * (a @ s) - s * (a @ c))
        else:
            raise DynamicsError(f"unknown model {m!r}")
        return out[:, None]
    if m == "FHN":
        u, w = x[:, 0], x[:, 1]
        kin = np.maximum(topology.in_degree, 1)
        du = u - u ** 3 - w + p["eps"] * _diffusive(a, u) / kin
        dw = p["a"] + p["b"] * u + p["c"] * w
        return np.stack([du, dw], axis=1)
    if m == "Lorenz":
        x1, x2, x3 = x.T
        d1 = p["a"] * (x2 - x1) + p["eps"] * _diffusive(a, x1)
        d2 = p["r"] * x1 - x1 * x3 - x2
        d3 = x1 * x2 - p["b"] * x3
        return np.stack([d1, d2, d3], axis=1)
    if m == "Rossler":
        x1, x2, x3 = x.T
        d1 = -x2 - x3 + p["eps"] * _diffusive(a, x1)
        d2 = x1 + p["a"] * x2
        d3 = p["b"] + x3 * (x1 - p["c"])
        return np.stack([d1, d2, d3], axis=1)
    if m == "PredatorPrey":
        n_prey = topology.n - 1
        diff = x[:, None, :] - x[None, :, :]  # x_i - x_j
        r2 = (diff ** 2).sum(axis=2)
        np.fill_diagonal(r2, 1.0)
        rep = diff / r2[:, :, None]
        out = np.empty_like(x)
        out[0] = -p["c"] / n_prey * rep[0, 1:].sum(axis=0)
        prey_prey = rep[1:, 1:] - p["a"] * diff[1:, 1:]
        out[1:] = p["b"] * rep[1:, 0] + prey_prey.sum(axis=1) / n_prey
        return out
    raise DynamicsError(f"unknown model {m!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled states, ``states[k]`` is the (N, d) state at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray
    spec: DynamicsSpec | None = None
    topology: Topology | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=float)
        if s.ndim == 2:
            s = s[:, :, None]
        if t.ndim != 1 or s.shape[0] != t.size:
            raise DynamicsError("times and states disagree in length")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean() + 1e-12 * max(1.0, abs(t[-1])):
                raise DynamicsError("times must be uniformly spaced and increasing")
        if not np.all(np.isfinite(s)):
            raise DynamicsError("non-finite states")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def window(self, t_end: float) -> "Trajectory":
        """Samples with time <= t_end (within half a step)."""
        k = int(np.searchsorted(self.times, t_end + 0.5 * self.dt, side="right"))
        return replace(self, times=self.times[:k], states=self.states[:k])

    def with_states(self, states: np.ndarray, **meta) -> "Trajectory":
        return replace(self, states=states, meta={**self.meta, **meta})

    def save_csv(self, path) -> None:
        """Long format ``t,node,dim,value`` plus a ``.json`` metadata sidecar."""
        path = Path(path)
        T, N, d = self.states.shape
        tt = np.repeat(self.times, N * d)
        nn = np.tile(np.repeat(np.arange(N), d), T)
        dd = np.tile(np.arange(d), T * N)
        with open(path, "w") as fh:
            fh.write("t,node,dim,value\n")
            for row in zip(tt.tolist(), nn.tolist(), dd.tolist(), self.states.ravel().tolist()):
                fh.write(f"{row[0]!r},{row[1]},{row[2]},{row[3]!r}\n")
        side = {"seed": self.seed, **self.meta}
        if self.spec is not None and self.spec.model != "Custom":
            side["dynamics"] = self.spec.to_json()
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load_csv(cls, path, topology: Topology | None = None) -> "Trajectory":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        times = np.unique(data[:, 0])
        N = int(data[:, 1].max()) + 1
        d = int(data[:, 2].max()) + 1
        states = np.empty((times.size, N, d))
        ti = np.searchsorted(times, data[:, 0])
        states[ti, data[:, 1].astype(int), data[:, 2].astype(int)] = data[:, 3]
        meta, spec, seed = {}, None, None
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
            seed = meta.pop("seed", None)
            if "dynamics" in meta:
                spec = DynamicsSpec.from_json(meta.pop("dynamics"))
        return cls(times, states, spec, topology, seed, meta)


def integrate_ivp(rhs, topology: Topology | None, x0: np.ndarray, t_end: float, dt_out: float,
                  rtol: float = 1e-12, atol: float = 1e-12, method: str = "RK45") -> Trajectory:
    """Adaptive embedded Runge-Kutta integration sampled on a uniform grid.

    ``rhs`` is a :class:`DynamicsSpec` or a callable ``f(t, X) -> dX/dt`` on
    (N, d) arrays.  Output times are ``0, dt_out, ..., t_end``; dense output
    supplies the off-step values.
    """
    if dt_out <= 0 or t_end < dt_out:
        raise DynamicsError("need dt_out > 0 and t_end >= dt_out")
    if rtol <= 0 or atol <= 0:
        raise DynamicsError("tolerances must be positive")
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    shape = x0.shape
    if isinstance(rhs, DynamicsSpec):
        spec = rhs

        def f(t, y):
            return builtin_rhs(spec, topology, y.reshape(shape), t).ravel()
    else:
        spec = None

        def f(t, y):
            return np.asarray(rhs(t, y.reshape(shape)), dtype=float).ravel()

    steps = int(round(t_end / dt_out))
    times = np.arange(steps + 1) * dt_out
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(f, (0.0, times[-1]), x0.ravel(), method=method, t_eval=times,
                        rtol=rtol, atol=atol)
    if sol.status != 0 or sol.y.shape[1] != times.size:
        t_fail = float(sol.t[-1]) if sol.t.size else 0.0
        raise IntegrationError(f"integration failed: {sol.message}", t_fail)
    states = sol.y.T.reshape((times.size,) + shape)
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states.reshape(times.size, -1)), axis=1)))
        raise IntegrationError("non-finite state", float(times[bad]))
    return Trajectory(times, states, spec, topology,
                      meta={"dt": dt_out, "t_end": float(times[-1]), "rtol": rtol, "atol": atol})


def draw_initial(init, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``init`` is ``("uniform", lo, hi)``, ``("gaussian", mu, sigma)`` or ``("constant", v)``."""
    kind = init[0]
    if kind == "uniform":
        return rng.uniform(init[1], init[2], size=(n, d))
    if kind == "gaussian":
        return rng.normal(init[1], init[2], size=(n, d))
    if kind == "constant":
        return np.full((n, d), float(init[1]))
    raise DynamicsError(f"unknown initial distribution {kind!r}")


def simulate_dataset(spec: DynamicsSpec, topology: Topology, init, table_row: dict, seed: int,
                     rtol: float = 1e-12, atol: float = 1e-12) -> Trajectory:
    """Draw X(0) (and per-node random parameters), integrate to ``T_end`` on a ``dt`` grid.

    ``table_row`` carries ``dt``, ``T`` (inference horizon) and ``T_end``.
    """
    rng = np.random.default_rng(seed)
    if spec.model == "Kuramoto" and "omega" not in spec.node_params:
        omega = rng.normal(spec.params["omega_mean"], spec.params["omega_std"], size=topology.n)
        spec = replace(spec, node_params={**spec.node_params, "omega": omega})
    x0 = draw_initial(tuple(init), topology.n, spec.d, rng)
    traj = integrate_ivp(spec, topology, x0, table_row["T_end"], table_row["dt"], rtol, atol)
    meta = {**traj.meta, "T": table_row["T"], "T_end": table_row["T_end"], "init": list(init),
            "model": spec.model}
    return replace(traj, seed=seed, meta=meta)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = noisy - clean
    return float(10 * np.log10(np.mean(clean ** 2) / np.mean(noise ** 2)))


def add_state_noise(traj: Trajectory, snr_db: float, seed: int) -> Trajectory:
    """Additive white Gaussian noise at the given SNR (dB), measured per (node, dim) series.

    ``snr_db = inf`` returns the trajectory unchanged.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return traj
    if not np.isfinite(snr_db):
        raise DynamicsError("snr_db must be finite or +inf")
    rng = np.random.default_rng(seed)
    power = np.mean(traj.states ** 2, axis=0, keepdims=True)
    sigma = np.sqrt(power / 10 ** (snr_db / 10))
    noisy = traj.states + sigma * rng.standard_normal(traj.states.shape)
    return traj.with_states(noisy, snr_db=float(snr_db), noisy=True)
