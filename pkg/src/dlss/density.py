"""Gaussian kernel density estimate over each point's nearest neighbours."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .data import Dataset
from .graph import NeighborLists, row_distances

__all__ = ["DensityProfile", "DensityError", "estimate_density", "bandwidth", "density_order"]

EXACT_PAIRS_MAX_N = 1500
MAX_SAMPLED_PAIRS = 1_000_000


class DensityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DensityProfile:
    """Normalized density ``p`` and the strict total order it induces.

    ``order[0]`` is the densest point; ties are broken by ascending index.
    ``rank`` is the inverse permutation of ``order``.
    """

    p: np.ndarray
    order: np.ndarray
    rank: np.ndarray
    sigma1: float = float("nan")

    @property
    def argmax(self) -> int:
        return int(self.order[0])

    def scaled(self, c: float) -> "DensityProfile":
        return DensityProfile(self.p * c, self.order, self.rank, self.sigma1)


def density_order(p: np.ndarray):
    order = np.lexsort((np.arange(p.size), -p))
    rank = np.empty_like(order)
    rank[order] = np.arange(p.size)
    return order, rank


def bandwidth(X: np.ndarray, seed: int = 0, stat: str = "mean") -> float:
    """One twentieth of the mean (or median) pairwise Euclidean distance.

    Exact for N <= 1500; otherwise estimated from at most 10^6 pairs of
    distinct points drawn uniformly with the given seed.
    """
    n = X.shape[0]
    if n < 2:
        raise DensityError("bandwidth needs at least two points")
    reduce = {"mean": np.mean, "median": np.median}.get(stat)
    if reduce is None:
        raise DensityError(f"unknown bandwidth statistic {stat!r}")
    if n <= EXACT_PAIRS_MAX_N:
        d = pdist(X)
    else:
        rng = np.random.default_rng(seed)
        m = min(n * (n - 1) // 2, MAX_SAMPLED_PAIRS)
        i = rng.integers(0, n, size=m)
        j = rng.integers(0, n - 1, size=m)
        j = j + (j >= i)  # uniform over j != i
        d = np.empty(m)
        step = 1 << 16
        for s in range(0, m, step):
            d[s:s + step] = row_distances(X, i[s:s + step], j[s:s + step, None])[:, 0]
    return float(reduce(d)) / 20.0


def estimate_density(ds, nl: NeighborLists, k_density: int = 20,
                     sigma1: Optional[float] = None, seed: int = 0,
                     stat: str = "mean") -> DensityProfile:
    """``p0(x) = sum over the k_density nearest neighbours m of exp(-|x - m|^2 / sigma1^2)``,
    normalized to sum to one."""
    X = ds.points if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if not 1 <= k_density <= nl.k:
        raise DensityError(f"k_density must be in 1..{nl.k}, got {k_density}")
    if sigma1 is None:
        sigma1 = bandwidth(X, seed=seed, stat=stat)
    elif not sigma1 > 0:
        raise DensityError("sigma1 must be positive")
    d = nl.dist[:, :k_density]
    if sigma1 == 0.0:
        # every pairwise distance is zero: all kernel values are exp(0)
        p0 = np.full(X.shape[0], float(k_density))
    else:
        p0 = np.exp(-(d * d) / sigma1**2).sum(axis=1)
    total = p0.sum()
    if total == 0.0:
        raise DensityError("density underflows everywhere; sigma1 too small")
    p = p0 / total
    order, rank = density_order(p)
    return DensityProfile(p=p, order=order, rank=rank, sigma1=float(sigma1))
