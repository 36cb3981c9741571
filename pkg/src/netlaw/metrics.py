"""Prediction and equation-recovery scores."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class MetricsError(ValueError):
    pass


class UndefinedMetricError(MetricsError):
    """A ratio with a zero denominator; the well-defined companion values are attached."""

    def __init__(self, message: str, recall: float | None = None, precision: float | None = None):
        super().__init__(message)
        self.recall = recall
        self.precision = precision


def _pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(truth, dtype=float)
    b = np.asarray(pred, dtype=float)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def r2_score(truth, pred) -> float:
    """Coefficient of determination on (N, T[, d]) node trajectories.

    The reference is the node average at each time, ``Xbar(t)``; residual and
    total sums are pooled over all nodes and times.
    """
    a, b = _pair(truth, pred)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    ss_res = np.sum((a - b) ** 2)
    ss_tot = np.sum((a - a.mean(axis=0, keepdims=True)) ** 2)
    if ss_tot == 0:
        raise MetricsError("truth is constant across nodes at every time (SS_tot = 0)")
    return float(1.0 - ss_res / ss_tot)


def _max_pair_distance(points: np.ndarray) -> float:
    if points.shape[1] == 1:
        return float(np.ptp(points))
    pts = np.unique(points, axis=0)
    if pts.shape[0] > points.shape[1] + 1:
        try:
            from scipy.spatial import ConvexHull
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate (flat) cloud: fall back to all points
            pass
    best = 0.0
    for s in range(0, pts.shape[0], 2048):
        blk = pts[s:s + 2048]
        d2 = ((blk[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def ned_score(truth, pred, truth_dot, pred_dot) -> np.ndarray:
    """Per-node normalised Euclidean distance over (state, derivative) trajectories.

    Inputs have shape (N, T) or (N, T, d).  The normaliser is the largest
    distance between any two true states (over all nodes and times).
    """
    x, xh = _pair(truth, pred)
    v, vh = _pair(truth_dot, pred_dot)
    if x.shape != v.shape:
        raise MetricsError("state and derivative arrays differ in shape")
    if x.ndim == 2:
        x, xh, v, vh = (arr[..., None] for arr in (x, xh, v, vh))
    dmax = _max_pair_distance(x.reshape(-1, x.shape[-1]))
    if dmax == 0:
        raise MetricsError("all true states identical (D_max = 0)")
    step = np.sqrt(((x - xh) ** 2).sum(-1) + ((v - vh) ** 2).sum(-1))
    return step.sum(axis=1) / dmax


def recall_precision(xi_true, xi_pred, tol: float = 0.0, strict: bool = True) -> tuple[float, float]:
    """Support overlap of two coefficient vectors (entries with ``|xi| > tol`` count as present).

    With ``strict`` an empty support raises :class:`UndefinedMetricError`
    (carrying the defined value); otherwise the undefined ratio is ``nan``.
    """
    a, b = _pair(xi_true, xi_pred)
    if a.ndim != 1:
        raise MetricsError("coefficient vectors must be 1-D")
    sa, sb = np.abs(a) > tol, np.abs(b) > tol
    both = int(np.sum(sa & sb))
    recall = both / sa.sum() if sa.any() else None
    precision = both / sb.sum() if sb.any() else None
    if strict and (recall is None or precision is None):
        which = "recall (no true terms)" if recall is None else "precision (no predicted terms)"
        raise UndefinedMetricError(f"undefined {which}", recall, precision)
    return (float("nan") if recall is None else float(recall),
            float("nan") if precision is None else float(precision))


def l2_coeff_error(xi_true, xi_pred) -> float:
    """``||xi_pred - xi_true||_2 / ||xi_true||_2``."""
    a, b = _pair(xi_true, xi_pred)
    norm = np.linalg.norm(a)
    if norm == 0:
        raise MetricsError("true coefficient vector has zero norm")
    return float(np.linalg.norm(b - a) / norm)


def mre_mae(truth, pred, return_excluded: bool = False):
    """Mean relative and mean absolute error over all entries.

    Entries with zero truth are left out of the relative error; their count
    is returned third when ``return_excluded`` is set.
    """
    a, b = _pair(truth, pred)
    err = np.abs(a - b)
    nz = a != 0
    mre = float(np.mean(err[nz] / np.abs(a[nz]))) if nz.any() else float("nan")
    mae = float(np.mean(err)) if err.size else float("nan")
    if return_excluded:
        return mre, mae, int(np.sum(~nz))
    return mre, mae


def mse(truth, pred) -> float:
    a, b = _pair(truth, pred)
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------- coefficients

def _split_sympy_terms(expr):
    import sympy as sp
    out = {}
    for term in sp.Add.make_args(sp.expand(expr)):
        coef, rest = term.as_coeff_Mul()
        out[rest] = out.get(rest, 0.0) + float(coef)
    return out


def coefficient_vector(expr, library) -> tuple[np.ndarray, float]:
    """Project an expression onto a reference library.

    The expression is expanded (constant folding and commutative reordering
    via sympy); each additive term is matched to the library term with the
    same non-numeric factor.  Returns ``(xi, other)`` where ``other`` is the
    absolute sum of coefficients of unmatched terms.
    """
    from .symreg.expression import to_sympy
    lib_keys = []
    for term in library.terms:
        parts = _split_sympy_terms(to_sympy(term))
        if len(parts) != 1:
            raise MetricsError(f"library term {term} is not a single product")
        (key, scale), = parts.items()
        lib_keys.append((key, scale))
    xi = np.zeros(len(lib_keys))
    other = 0.0
    for key, coef in _split_sympy_terms(to_sympy(expr)).items():
        if coef == 0.0:
            continue
        for k, (lk, scale) in enumerate(lib_keys):
            if key == lk:
                xi[k] += coef / scale
                break
        else:
            other += abs(coef)
    return xi, other


def support_scores(xi_true, xi_pred, other: float = 0.0, tol: float = 0.0) -> tuple[float, float]:
    """Recall / precision where a nonzero ``other`` slot counts as one spurious term."""
    a = np.append(np.asarray(xi_true, dtype=float), 0.0)
    b = np.append(np.asarray(xi_pred, dtype=float), other)
    return recall_precision(a, b, tol=tol, strict=False)


# ---------------------------------------------------------------------------- report

@dataclass
class MetricsReport:
    r2: float | None = None
    mre: float | None = None
    mae: float | None = None
    mre_excluded: int = 0
    l2_error: float | None = None
    recall: float | None = None
    precision: float | None = None
    ned: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("recall", "precision"):
            v = getattr(self, name)
            if v is not None and not np.isnan(v) and not 0.0 <= v <= 1.0:
                raise MetricsError(f"{name} must lie in [0, 1], got {v}")
        if any(v < 0 for v in self.ned):
            raise MetricsError("NED values must be >= 0")

    def to_json(self) -> dict:
        out = asdict(self)
        return json.loads(json.dumps(out, default=float).replace("NaN", "null"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls(**json.loads(Path(path).read_text()))

    def save_ned_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("node,ned\n")
            for i, v in enumerate(self.ned):
                fh.write(f"{i},{float(v)!r}\n")
