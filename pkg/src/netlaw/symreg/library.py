"""Function libraries and sequentially thresholded least squares."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .expression import Expression, evaluate, parse_infix, to_infix


class LibraryError(ValueError):
    pass


class RankDeficiencyError(LibraryError):
    """Library columns are linearly dependent on the sampled points."""

    def __init__(self, rank: int, n_terms: int):
        super().__init__(f"design matrix rank {rank} < {n_terms} library terms (collinear on samples)")
        self.rank = rank
        self.n_terms = n_terms


@dataclass(frozen=True)
class FunctionLibrary:
    """Ordered basis expressions; coefficient vectors index into ``terms``."""

    terms: tuple
    names: tuple = ()

    def __post_init__(self):
        if not self.terms:
            raise LibraryError("library must contain at least one term")
        terms = tuple(parse_infix(t) if isinstance(t, str) else t for t in self.terms)
        names = tuple(self.names) or tuple(to_infix(t) for t in terms)
        if len(names) != len(terms):
            raise LibraryError("names and terms differ in length")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.terms)

    def variables(self) -> frozenset:
        out = frozenset()
        for t in self.terms:
            out |= t.variables()
        return out

    def restrict(self, allowed) -> "FunctionLibrary":
        """Sub-library of terms whose variables are all in ``allowed``."""
        allowed = set(allowed)
        keep = [k for k, t in enumerate(self.terms) if t.variables() <= allowed]
        if not keep:
            raise LibraryError(f"no library term uses only {sorted(allowed)}")
        return FunctionLibrary(tuple(self.terms[k] for k in keep), tuple(self.names[k] for k in keep))

    def design(self, env: dict) -> np.ndarray:
        """(n_samples, n_terms) matrix of term values."""
        n = len(next(iter(env.values()))) if env else 1
        cols = [np.broadcast_to(evaluate(t, env), (n,)) for t in self.terms]
        return np.column_stack(cols)

    @classmethod
    def from_file(cls, path) -> "FunctionLibrary":
        lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
        return cls(tuple(parse_infix(ln) for ln in lines if ln))

    def save(self, path) -> None:
        Path(path).write_text("".join(to_infix(t) + "\n" for t in self.terms))

    @classmethod
    def polynomial(cls, variables, degree: int, include_constant: bool = True) -> "FunctionLibrary":
        """All monomials of total degree <= ``degree`` in ``variables``."""
        variables = list(variables)
        terms = [Expression.const(1.0)] if include_constant else []
        for deg in range(1, degree + 1):
            for combo in itertools.combinations_with_replacement(variables, deg):
                t = Expression.var(combo[0])
                for v in combo[1:]:
                    t = t * Expression.var(v)
                terms.append(t)
        return cls(tuple(terms))


@dataclass(frozen=True)
class SparseFit:
    coef: np.ndarray
    iterations: int
    residual: float
    rank: int


def stlsq(theta: np.ndarray, y: np.ndarray, threshold: float, max_iters: int = 20,
          check_rank: bool = True) -> SparseFit:
    """Least squares, zero ``|xi| < threshold``, refit on survivors; repeat to a fixpoint."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = theta.shape
    if n < p:
        raise LibraryError(f"need at least {p} samples for {p} terms, got {n}")
    rank = int(np.linalg.matrix_rank(theta))
    if check_rank and rank < p:
        raise RankDeficiencyError(rank, p)
    active = np.ones(p, dtype=bool)
    xi = np.zeros(p)
    it = 0
    for it in range(1, max_iters + 1):
        xi = np.zeros(p)
        if active.any():
            xi[active] = np.linalg.lstsq(theta[:, active], y, rcond=None)[0]
        small = np.abs(xi) < threshold
        new_active = active & ~small
        xi[~new_active] = 0.0
        if np.array_equal(new_active, active):
            break
        active = new_active
    if active.any():
        xi[active] = np.linalg.lstsq(theta[:, active], y, rcond=None)[0]
    resid = float(np.mean((theta @ xi - y) ** 2))
    return SparseFit(xi, it, resid, rank)


def sparse_regress(inputs: dict, outputs, library: FunctionLibrary, threshold: float,
                   max_iters: int = 20) -> np.ndarray:
    """Coefficient vector over ``library`` fitted by sequentially thresholded least squares.

    ``inputs`` maps variable names to 1-D sample arrays.
    """
    theta = library.design(inputs)
    return stlsq(theta, outputs, threshold, max_iters).coef
