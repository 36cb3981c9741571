"""Representative point selection for querying trained networks."""
from __future__ import annotations

import numpy as np


class SamplingError(ValueError):
    pass


def _sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_sample(points, k: int, seed: int, max_iter: int = 100, tol: float = 1e-9) -> np.ndarray:
    """k-means++ seeding, Lloyd iterations, then the data point nearest each centroid.

    Parameters
    ----------
    points : array of shape (n, m) (1-D input is treated as m = 1)
    k : number of representatives; must not exceed the number of distinct points
    seed : seeds the k-means++ draws
    max_iter, tol : stop after ``max_iter`` iterations or once no centroid moves more than ``tol``

    Returns
    -------
    (k, m) array of rows of ``points``.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n_distinct = np.unique(x, axis=0).shape[0]
    if k < 1 or k > n_distinct:
        raise SamplingError(f"k={k} must lie in [1, {n_distinct}] (distinct points)")
    rng = np.random.default_rng(seed)
    idx = [int(rng.integers(x.shape[0]))]
    d2 = _sqdist(x, x[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(x.shape[0], p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, _sqdist(x, x[[nxt]])[:, 0])
    centers = x[idx].copy()
    for _ in range(max_iter):
        label = np.argmin(_sqdist(x, centers), axis=1)
        counts = np.bincount(label, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, label, x)
        new = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centers)
        shift = np.max(np.sqrt(((new - centers) ** 2).sum(1)))
        centers = new
        if shift < tol:
            break
    nearest = np.argmin(_sqdist(x, centers), axis=0)
    return x[nearest]
