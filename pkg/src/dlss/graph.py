"""Exact kNN search and the Markov random walk on the kNN kernel graph."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .data import Dataset

__all__ = [
    "NeighborLists",
    "MarkovGraph",
    "GraphError",
    "knn",
    "brute_force_knn",
    "build_graph",
    "row_distances",
]

log = logging.getLogger(__name__)

# Above this ambient dimension kd-trees degrade to brute force; use BLAS blocks instead.
KDTREE_MAX_DIM = 16
_PAD = 4
_BLOCK_ELEMS = 1 << 23


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NeighborLists:
    """k nearest neighbours per point, self excluded, ascending distance."""

    idx: np.ndarray
    dist: np.ndarray
    k: int

    def head(self, k: int) -> "NeighborLists":
        """The first ``k`` neighbours of every row."""
        if not 1 <= k <= self.k:
            raise GraphError(f"cannot slice {k} neighbours out of {self.k}")
        return NeighborLists(self.idx[:, :k].copy(), self.dist[:, :k].copy(), k)


@dataclass(frozen=True, eq=False)
class MarkovGraph:
    W: sparse.csr_matrix
    deg: np.ndarray
    P: sparse.csr_matrix
    pi: np.ndarray
    sigma: float
    k: int
    bridges: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.W.shape[0]


def row_distances(X: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Euclidean distances ``|X[cols[r, j]] - X[rows[r]]|``, shaped like ``cols``.

    Every exact distance in this package goes through this expression so that
    independently computed values agree bit for bit.
    """
    diff = X[cols] - X[rows][:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def brute_force_knn(X: np.ndarray, k: int, rows=None):
    """Exact kNN by scanning all points; ties broken by lower index."""
    n = X.shape[0]
    rows = np.arange(n) if rows is None else np.asarray(rows)
    idx = np.empty((rows.size, k), dtype=np.int64)
    dist = np.empty((rows.size, k))
    allc = np.arange(n)
    step = max(1, _BLOCK_ELEMS // max(1, n * X.shape[1]))
    for s in range(0, rows.size, step):
        r = rows[s:s + step]
        cols = np.broadcast_to(allc, (r.size, n))
        d = row_distances(X, r, cols)
        d[np.arange(r.size), r] = np.inf
        # lexsort of (index, dist) == stable argsort on dist for index-ordered columns
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[s:s + step] = order
        dist[s:s + step] = np.take_along_axis(d, order, 1)
    return idx, dist


def _refine(X, rows, cand, k, bound_sq, tol_sq):
    """Exact-distance re-ranking of candidate neighbours.

    ``bound_sq`` is a lower bound on the (approximate) squared distance of any
    point not among the candidates; rows whose k-th exact distance is not
    clearly below it are recomputed by brute force.
    """
    self_mask = cand == rows[:, None]
    d = row_distances(X, rows, cand)
    d[self_mask] = np.inf
    cand = np.where(self_mask, np.iinfo(np.int64).max, cand)
    order = np.lexsort((cand, d), axis=1)[:, :k]
    idx = np.take_along_axis(cand, order, 1)
    dist = np.take_along_axis(d, order, 1)
    unsafe = ~(dist[:, -1] ** 2 < bound_sq - tol_sq)
    if np.any(unsafe):
        bi, bd = brute_force_knn(X, k, rows[unsafe])
        idx[unsafe], dist[unsafe] = bi, bd
    return idx, dist


def knn(ds, k: int, workers: int = 1) -> NeighborLists:
    """Exact k nearest Euclidean neighbours of every point (self excluded).

    Ties are broken by lower index, so the output does not depend on the search
    structure or on ``workers``.  Low-dimensional data goes through a kd-tree,
    high-dimensional data through blocked matrix products; both re-rank their
    candidates with exact distances.
    """
    X = ds.points if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    n, dim = X.shape
    if not 1 <= k < n:
        raise GraphError(f"need 1 <= k < N, got k={k}, N={n}")
    kk = min(n, k + 1 + _PAD)
    rows = np.arange(n)

    if dim <= KDTREE_MAX_DIM:
        tree = cKDTree(X)
        tdist, cand = tree.query(X, k=kk, workers=workers)
        cand = cand.astype(np.int64)
        if kk == n:
            bound = np.full(n, np.inf)
        else:
            bound = tdist[:, -1] ** 2
        tol = 1e-9 * np.maximum(bound, 1e-300)
        tol[~np.isfinite(bound)] = 0.0
        idx, dist = _refine(X, rows, cand, k, bound, tol)
        return NeighborLists(idx, dist, k)

    sqn = np.einsum("ij,ij->i", X, X)
    scale = sqn.max()
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    step = max(1, _BLOCK_ELEMS // n)
    for s in range(0, n, step):
        r = rows[s:s + step]
        approx = sqn[r, None] + sqn[None, :] - 2.0 * (X[r] @ X.T)
        if kk < n:
            part = np.argpartition(approx, kk - 1, axis=1)
            cand = part[:, :kk]
            # the kk-th smallest approximate value bounds everything left out
            bound = np.take_along_axis(approx, part[:, kk - 1:kk], 1)[:, 0]
            inner = np.take_along_axis(approx, cand, 1)
            bound = np.maximum(bound, inner.max(axis=1))
        else:
            cand = np.broadcast_to(rows, (r.size, n)).copy()
            bound = np.full(r.size, np.inf)
        tol = 1e-10 * dim * (sqn[r] + scale) + 1e-300
        idx[s:s + step], dist[s:s + step] = _refine(X, r, cand.astype(np.int64), k, bound, tol)
    return NeighborLists(idx, dist, k)


def _component_links(X: np.ndarray, comp: np.ndarray, ncomp: int):
    """Closest pair between every two components, as ``{(a, b): (d, i, j)}``.

    A Gram-matrix pass finds near-minimal pairs; these are then re-measured with
    ``row_distances`` so reported distances are exact.  Ties go to the smaller
    ``(min(i, j), max(i, j))``.
    """
    n, dim = X.shape
    sq = np.einsum("ij,ij->i", X, X)
    tol = 1e-10 * dim * 4.0 * (sq.max() + 1.0)
    members = [np.flatnonzero(comp == c) for c in range(ncomp)]
    near = np.empty((n, ncomp))  # approximate squared distance to each component
    step = max(1, _BLOCK_ELEMS // max(1, n))
    for s in range(0, n, step):
        r = slice(s, min(n, s + step))
        G = sq[r, None] + sq[None, :] - 2.0 * (X[r] @ X.T)
        for c, cols in enumerate(members):
            near[r, c] = G[:, cols].min(axis=1)
    links = {}
    for a in range(ncomp):
        for b in range(a + 1, ncomp):
            bound = near[members[a], b].min() + tol
            rows = members[a][near[members[a], b] <= bound]
            G = sq[rows, None] + sq[None, members[b]] - 2.0 * (X[rows] @ X[members[b]].T)
            ri, ci = np.nonzero(G <= bound)
            i, j = rows[ri], members[b][ci]
            d = row_distances(X, i, j[:, None])[:, 0]
            lo, hi = np.minimum(i, j), np.maximum(i, j)
            k = np.lexsort((hi, lo, d))[0]
            links[a, b] = (float(d[k]), int(lo[k]), int(hi[k]))
    return links


def _bridge_pairs(X: np.ndarray, comp: np.ndarray, ncomp: int):
    """Repeatedly join the two closest components (Kruskal on component links)."""
    links = _component_links(X, comp, ncomp)
    root = list(range(ncomp))

    def find(c):
        while root[c] != c:
            root[c] = root[root[c]]
            c = root[c]
        return c

    out = []
    for (a, b), (d, i, j) in sorted(links.items(), key=lambda kv: (kv[1][0], kv[1][1:])):
        ra, rb = find(a), find(b)
        if ra != rb:
            root[max(ra, rb)] = min(ra, rb)
            out.append((i, j, d))
    return out


def build_graph(ds, nl: NeighborLists, sigma: float = 1.0) -> MarkovGraph:
    """Gaussian kNN affinity graph, symmetrized by maximum, plus its random walk.

    ``W(x, y) = exp(-|x - y|^2 / sigma^2)`` when y is one of x's ``nl.k``
    neighbours or x one of y's.  A disconnected graph is repaired by adding the
    closest inter-component edge until a single component remains.
    """
    if not sigma > 0:
        raise GraphError("sigma must be positive")
    X = ds.points if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    n = X.shape[0]
    if nl.idx.shape[0] != n:
        raise GraphError("neighbour lists do not match the dataset")
    rows = np.repeat(np.arange(n), nl.k)
    vals = np.exp(-(nl.dist.ravel() ** 2) / sigma**2)
    A = sparse.csr_matrix((vals, (rows, nl.idx.ravel())), shape=(n, n))
    W = A.maximum(A.T).tocsr()
    W.eliminate_zeros()
    if np.any(np.diff(W.indptr) == 0):
        raise GraphError(
            "kernel weights underflow to zero for whole rows; "
            "sigma is too small for the scale of the data"
        )

    bridges = []
    ncomp, comp = connected_components(W, directed=False)
    if ncomp > 1:
        bridges = _bridge_pairs(X, comp, ncomp)
        for i, j, d in bridges:
            if np.exp(-(d**2) / sigma**2) == 0.0:
                raise GraphError(
                    f"bridge ({i}, {j}) at distance {d:.4g} has zero weight; increase sigma"
                )
        bi = np.array([[i, j] for i, j, _ in bridges]).T
        bw = np.exp(-(np.array([d for _, _, d in bridges]) ** 2) / sigma**2)
        B = sparse.csr_matrix((np.r_[bw, bw], (np.r_[bi[0], bi[1]], np.r_[bi[1], bi[0]])),
                              shape=(n, n))
        W = (W + B).tocsr()
    if bridges:
        warnings.warn(
            f"graph was disconnected; added {len(bridges)} bridge edge(s): "
            + ", ".join(f"({i},{j})" for i, j, _ in bridges),
            RuntimeWarning,
            stacklevel=2,
        )
    W.sort_indices()

    deg = np.asarray(W.sum(axis=1)).ravel()
    P = sparse.diags(1.0 / deg) @ W
    P = P.tocsr()
    pi = deg / deg.sum()
    return MarkovGraph(W=W, deg=deg, P=P, pi=pi, sigma=float(sigma), k=nl.k, bridges=bridges)
