"""Query selection by nearest-mode ambiguity, and seeded relabeling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .density import DensityProfile
from .diffusion import DiffusionModel, coords
from .evaluation import align
from .graph import row_distances
from .labeling import Labeling, SpatialIndex, run_dl, run_dlss
from .modes import ModeAnalysis

__all__ = [
    "QueryPlan",
    "ActiveError",
    "mode_distances",
    "plan_queries",
    "seeds_from_gt",
    "run_active",
    "random_baseline",
]


class ActiveError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QueryPlan:
    F: np.ndarray
    queries: np.ndarray
    L: int
    alpha: float


def mode_distances(dm: DiffusionModel, ma: ModeAnalysis, t: Optional[float] = None) -> np.ndarray:
    """N x K matrix of diffusion distances from every point to every mode."""
    t = ma.t if t is None else t
    C = coords(dm, t)
    n = C.shape[0]
    return row_distances(C, np.arange(n), np.broadcast_to(ma.modes, (n, ma.K)))


def plan_queries(dm: DiffusionModel, ma: ModeAnalysis, t: Optional[float] = None,
                 L: int = 0) -> QueryPlan:
    """Pick the L non-mode points whose two nearest modes are most nearly tied.

    ``F(x) = |d_t(x, m1) - d_t(x, m2)|`` for the two modes closest to x.
    """
    if ma.K < 2:
        raise ActiveError("query selection needs at least two modes")
    n = ma.p.size
    if not 0 <= L <= n - ma.K:
        raise ActiveError(f"budget L must be in 0..{n - ma.K}, got {L}")
    D = np.sort(mode_distances(dm, ma, t), axis=1)
    F = np.abs(D[:, 0] - D[:, 1])
    is_mode = np.zeros(n, dtype=bool)
    is_mode[ma.modes] = True
    cand = np.lexsort((np.arange(n), F))
    cand = cand[~is_mode[cand]]
    return QueryPlan(F=F, queries=cand[:L].copy(), L=int(L), alpha=L / n)


def seeds_from_gt(base: Labeling, gt: np.ndarray, queries: np.ndarray) -> dict:
    """Translate GT labels of queried points into the unsupervised label space.

    GT classes matched to a cluster by the overlap alignment of ``base`` take
    that cluster's label; unmatched GT classes get fresh labels after ``base.K``.
    """
    gt = np.asarray(gt, dtype=np.int64)
    queries = np.asarray(queries, dtype=np.int64)
    bad = queries[gt[queries] == 0]
    if bad.size:
        raise ActiveError(f"queried points without ground truth: {bad.tolist()}")
    if queries.size == 0:
        return {}
    inverse = {g: a for a, g in align(base.labels, gt).mapping.items() if g}
    nxt = base.K + 1
    for g in sorted(set(gt[queries].tolist())):
        if g not in inverse:
            inverse[g] = nxt
            nxt += 1
    return {int(q): int(inverse[int(gt[q])]) for q in queries}


def run_active(qp: QueryPlan, gt, ma: ModeAnalysis, dp: DensityProfile,
               si: Optional[SpatialIndex] = None) -> Labeling:
    """Label the queried points from ``gt``, then propagate with modes and queries as seeds.

    Uses DLSS when a spatial index is given, DL otherwise.
    """
    gt = np.asarray(getattr(gt, "labels", gt), dtype=np.int64)
    base = run_dlss(ma, dp, si) if si is not None else run_dl(ma, dp)
    if qp.queries.size == 0:
        return base
    seeds = seeds_from_gt(base, gt, qp.queries)
    return run_dlss(ma, dp, si, seeds=seeds) if si is not None else run_dl(ma, dp, seeds=seeds)


def random_baseline(seed: int, L: int, gt, ma: ModeAnalysis, dp: DensityProfile,
                    si: Optional[SpatialIndex] = None) -> Labeling:
    """Same as :func:`run_active` with L queries drawn uniformly, without
    replacement, from the non-mode points that have ground truth."""
    gt = np.asarray(getattr(gt, "labels", gt), dtype=np.int64)
    n = gt.size
    if L > n - ma.K:
        raise ActiveError(f"budget L must be at most {n - ma.K}")
    pool = np.setdiff1d(np.flatnonzero(gt > 0), ma.modes)
    if L > pool.size:
        raise ActiveError(f"only {pool.size} non-mode points carry ground truth")
    rng = np.random.default_rng(seed)
    q = np.sort(rng.choice(pool, size=L, replace=False))
    qp = QueryPlan(F=np.zeros(n), queries=q, L=int(L), alpha=L / n)
    return run_active(qp, gt, ma, dp, si)
