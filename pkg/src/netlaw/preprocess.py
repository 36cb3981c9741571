"""Window selection, smoothing and numerical differentiation of node trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import savgol_filter

from .dynamics import Trajectory
from .topology import ObservationMask, Topology


class PreprocessError(ValueError):
    pass


# one-sided 4th-order first-derivative stencils over offsets 0..4 (and mirrored)
_FORWARD = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_SECOND = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0  # offsets -1..3


def five_point_derivative(series: np.ndarray, delta_t: float, axis: int = 0,
                          return_flags: bool = False):
    """Fourth-order finite differences along ``axis``.

    Interior points use ``(x[k-2] - 8 x[k-1] + 8 x[k+1] - x[k+2]) / (12 dt)``; the
    two samples at each end use one-sided five-point stencils and are flagged
    ``True`` in the optional boundary mask.
    """
    x = np.moveaxis(np.asarray(series, dtype=float), axis, 0)
    n = x.shape[0]
    if n < 5:
        raise PreprocessError(f"need at least 5 samples, got {n}")
    if delta_t <= 0:
        raise PreprocessError("delta_t must be positive")
    out = np.empty_like(x)
    out[2:-2] = (8.0 * (x[3:-1] - x[1:-3]) - (x[4:] - x[:-4])) / 12.0
    # stencils sum to zero, so differencing against the end sample keeps constants exact
    head, tail = x[:5] - x[0], x[::-1][:5] - x[-1]
    out[0] = np.tensordot(_FORWARD, head, axes=1)
    out[1] = np.tensordot(_SECOND, head, axes=1)
    out[-1] = -np.tensordot(_FORWARD, tail, axes=1)
    out[-2] = -np.tensordot(_SECOND, tail, axes=1)
    out = np.moveaxis(out / delta_t, 0, axis)
    if return_flags:
        flags = np.zeros(n, dtype=bool)
        flags[[0, 1, -2, -1]] = True
        return out, flags
    return out


def sg_smooth(series: np.ndarray, window: int, polyorder: int, axis: int = 0) -> np.ndarray:
    """Savitzky-Golay smoothing; edges are fitted on the first/last full window."""
    x = np.asarray(series, dtype=float)
    if window % 2 != 1 or window < 1:
        raise PreprocessError("window must be a positive odd integer")
    if window == 1:
        return x.copy()
    if polyorder >= window:
        raise PreprocessError("polyorder must be smaller than window")
    if window > x.shape[axis]:
        raise PreprocessError(f"window {window} longer than series ({x.shape[axis]})")
    return savgol_filter(x, window, polyorder, axis=axis, mode="interp")


@dataclass(frozen=True)
class IntervalChoice:
    T_star: float
    S: int
    delta_t: float
    objective_value: float
    stride: int = 1
    history: tuple = field(default=(), repr=False)


def interval_objective(states: np.ndarray, dt: float, stride: int, s_steps: int, lam: float) -> float:
    """Discretised window objective on the ``s_steps``-step grid with spacing ``stride * dt``.

    First term: squared change of the derivative between consecutive grid
    points; second: squared deviation of the last 11 derivatives from the
    final one, weighted by ``lam``.
    """
    grid = states[: s_steps * stride + 1: stride]
    xdot = five_point_derivative(grid, stride * dt).reshape(grid.shape[0], -1)
    rough = np.sum(np.diff(xdot, axis=0) ** 2)
    tail = xdot[-11:] - xdot[-1]
    return float(rough + lam * np.sum(tail ** 2))


def select_interval(traj: Trajectory, s_steps: int = 100, lam: float = 1.0, t0: float | None = None,
                    cooling: float = 0.95, iters: int = 200, seed: int = 0,
                    t_min: float = 0.0, n_probes: int = 20) -> IntervalChoice:
    """Simulated annealing over the window end time ``T``.

    Candidates are ``T = k * s_steps * dt`` so every grid point is a trajectory
    sample.  ``t0`` is the initial temperature; when ``None`` it is set to the
    objective spread over ``n_probes`` random candidates.  Returns the best
    candidate seen after a unit-step descent polish; with ``iters=0`` that is
    the initial (longest feasible) candidate.
    """
    if traj.times.size < 5:
        raise PreprocessError("trajectory shorter than 5 samples")
    if lam < 0:
        raise PreprocessError("lambda must be >= 0")
    dt = traj.dt
    n_samples = traj.times.size
    k_max = (n_samples - 1) // s_steps
    if k_max < 1:
        raise PreprocessError(f"trajectory has {n_samples} samples, need >= s_steps + 1 = {s_steps + 1}")
    if s_steps < 4:
        raise PreprocessError("s_steps must be >= 4")
    k_min = max(1, min(k_max, int(math.ceil(t_min / (s_steps * dt) - 1e-9))))
    rng = np.random.default_rng(seed)
    cache: dict[int, float] = {}

    def J(k: int) -> float:
        if k not in cache:
            cache[k] = interval_objective(traj.states, dt, k, s_steps, lam)
        return cache[k]

    k = k_max
    best_k, best_j = k, J(k)
    temp = t0
    if temp is None:
        probes = [J(int(p)) for p in rng.integers(k_min, k_max + 1, size=n_probes)]
        temp = float(np.ptp(probes + [best_j])) or 1.0
    history = [(k, best_j)]
    span = max(1, (k_max - k_min) // 4)
    cur_j = best_j
    for _ in range(iters):
        step = int(rng.integers(1, span + 1)) * (1 if rng.random() < 0.5 else -1)
        cand = min(k_max, max(k_min, k + step))
        cj = J(cand)
        if cj <= cur_j or rng.random() < math.exp(-(cj - cur_j) / max(temp, 1e-300)):
            k, cur_j = cand, cj
            if cj < best_j:
                best_k, best_j = cand, cj
        history.append((k, cur_j))
        temp *= cooling
    # greedy polish of the best candidate over unit steps
    while iters > 0:
        nxt = min((c for c in (best_k - 1, best_k + 1) if k_min <= c <= k_max), key=J, default=best_k)
        if J(nxt) >= best_j:
            break
        best_k, best_j = nxt, J(nxt)
    T_star = best_k * s_steps * dt
    return IntervalChoice(T_star=T_star, S=s_steps, delta_t=T_star / s_steps,
                          objective_value=best_j, stride=best_k, history=tuple(history))


def full_interval(traj: Trajectory, s_steps: int) -> IntervalChoice:
    """Longest window compatible with ``s_steps`` grid steps (no search)."""
    k = (traj.times.size - 1) // s_steps
    if k < 1:
        raise PreprocessError("trajectory too short for s_steps")
    T_star = k * s_steps * traj.dt
    return IntervalChoice(T_star, s_steps, T_star / s_steps,
                          interval_objective(traj.states, traj.dt, k, s_steps, 1.0), k)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Per-timestamp node states and derivative targets on the selected grid.

    ``states`` / ``targets`` have shape (T, N, d); ``split`` marks each timestamp
    as train (True) or validation (False).
    """

    times: np.ndarray
    states: np.ndarray
    targets: np.ndarray
    train_mask: np.ndarray
    mask: ObservationMask | None = None

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        sel = self.train_mask if which == "train" else ~self.train_mask
        return self.states[sel], self.targets[sel]

    def save_csv(self, path) -> None:
        T, N, d = self.states.shape
        cols = ["node", "t"] + [f"x{k}" for k in range(d)] + [f"xdot{k}" for k in range(d)] + ["split"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for ti in range(T):
                tag = "train" if self.train_mask[ti] else "val"
                for i in range(N):
                    vals = [repr(float(v)) for v in self.states[ti, i]] + [repr(float(v)) for v in self.targets[ti, i]]
                    fh.write(f"{i},{float(self.times[ti])!r}," + ",".join(vals) + f",{tag}\n")

    @classmethod
    def load_csv(cls, path) -> "TrainingSet":
        lines = Path(path).read_text().splitlines()
        header = lines[0].split(",")
        d = sum(1 for c in header if c.startswith("xdot"))
        rows = [ln.split(",") for ln in lines[1:]]
        times = sorted({float(r[1]) for r in rows})
        N = 1 + max(int(r[0]) for r in rows)
        tindex = {t: k for k, t in enumerate(times)}
        states = np.empty((len(times), N, d))
        targets = np.empty_like(states)
        train = np.zeros(len(times), dtype=bool)
        for r in rows:
            ti, i = tindex[float(r[1])], int(r[0])
            states[ti, i] = [float(v) for v in r[2:2 + d]]
            targets[ti, i] = [float(v) for v in r[2 + d:2 + 2 * d]]
            train[ti] = r[-1] == "train"
        return cls(np.array(times), states, targets, train)


def split_timestamps(n: int, val_ratio: float, seed: int) -> np.ndarray:
    """Random train mask with ``floor(val_ratio * n)`` validation timestamps."""
    n_val = int(math.floor(val_ratio * n + 1e-9))
    rng = np.random.default_rng(seed)
    mask = np.ones(n, dtype=bool)
    mask[rng.permutation(n)[:n_val]] = False
    return mask


def build_training_pairs(traj: Trajectory, topology: Topology | None, choice: IntervalChoice,
                         smooth: bool = False, window: int = 7, polyorder: int = 3,
                         interior_only: bool = True, val_ratio: float = 0.2, split_seed: int = 0,
                         mask: ObservationMask | None = None) -> TrainingSet:
    """Smooth (optionally) and differentiate the selected window, then split timestamps."""
    stride = choice.stride
    last = choice.S * stride
    if last >= traj.times.size:
        raise PreprocessError("interval extends beyond the trajectory")
    grid_t = traj.times[: last + 1: stride]
    grid_x = traj.states[: last + 1: stride]
    if smooth:
        grid_x = sg_smooth(grid_x, window, polyorder, axis=0)
    xdot, flags = five_point_derivative(grid_x, stride * traj.dt, return_flags=True)
    keep = ~flags if interior_only else np.ones_like(flags)
    if not keep.any():
        raise PreprocessError("empty window after boundary exclusion")
    times, states, targets = grid_t[keep], grid_x[keep], xdot[keep]
    if not np.all(np.isfinite(targets)):
        raise PreprocessError("non-finite derivative targets")
    train = split_timestamps(times.size, val_ratio, split_seed)
    return TrainingSet(times, states, targets, train, mask)
