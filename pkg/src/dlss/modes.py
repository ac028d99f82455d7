"""Mode detection from density and diffusion distance, and cluster-count estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .density import DensityProfile
from .diffusion import DiffusionModel, coords
from .graph import row_distances

__all__ = [
    "ModeAnalysis",
    "KEstimate",
    "ModeError",
    "InconclusiveError",
    "analyze_modes",
    "nearest_higher_density",
    "top_k",
    "estimate_k",
]

_BLOCK_ELEMS = 1 << 24
_NO_PARENT = -1


class ModeError(ValueError):
    pass


class InconclusiveError(ModeError):
    """The sorted score curve carries no information about K."""


@dataclass(frozen=True, eq=False)
class ModeAnalysis:
    rho_tilde: np.ndarray
    rho: np.ndarray
    Dt: np.ndarray
    parent: np.ndarray
    modes: np.ndarray
    p: np.ndarray
    t: float
    # position in ``modes`` of the mode nearest (in d_t) to the density maximizer
    argmax_mode: int = 0

    @property
    def K(self) -> int:
        return int(self.modes.size)


@dataclass(frozen=True, eq=False)
class KEstimate:
    sorted_Dt: np.ndarray
    first_order: np.ndarray   # |Delta_i|, i = 1..search_limit+1
    second_order: np.ndarray  # Delta_i / Delta_{i+1}, i = 1..search_limit (nan where skipped)
    k_hat: int
    method_used: str


def top_k(score: np.ndarray, K: int) -> np.ndarray:
    """Indices of the K largest scores, ties by ascending index."""
    return np.lexsort((np.arange(score.size), -score))[:K]


def nearest_higher_density(C: np.ndarray, dp: DensityProfile):
    """For each point, the closest point (in the rows of ``C``) that precedes it in
    the density order.

    Returns ``(rho_tilde, parent)``; the densest point gets the largest distance
    to any point and parent -1.  Exact brute force in blocks of density rank.
    """
    n, m = C.shape
    order = dp.order
    rho_tilde = np.empty(n)
    parent = np.full(n, _NO_PARENT, dtype=np.int64)
    big = np.iinfo(np.int64).max

    top = order[0]
    d_top = row_distances(C, np.array([top]), np.arange(n)[None, :])[0]
    rho_tilde[top] = d_top.max()

    r0 = 1
    while r0 < n:
        # largest w with w * (r0 + w) * m <= _BLOCK_ELEMS
        cap = _BLOCK_ELEMS / m
        width = max(1, int((np.sqrt(r0 * r0 + 4.0 * cap) - r0) / 2.0))
        r1 = min(n, r0 + width)
        rows = order[r0:r1]
        cand = order[:r1]
        d = row_distances(C, rows, np.broadcast_to(cand, (rows.size, r1)))
        # column j (rank j) is admissible for row rank r iff j < r
        d[np.arange(r1)[None, :] >= np.arange(r0, r1)[:, None]] = np.inf
        best = d.min(axis=1)
        ids = np.where(d == best[:, None], cand[None, :], big).min(axis=1)
        rho_tilde[rows] = best
        parent[rows] = ids
        r0 = r1
    return rho_tilde, parent


def analyze_modes(dm: DiffusionModel, dp: DensityProfile, t: Optional[float] = None,
                  K: int = 1) -> ModeAnalysis:
    """Score ``D_t = p * rho_t`` and take its K maximizers as modes.

    ``rho_t`` is the diffusion distance to the nearest point of higher density,
    divided by its maximum.
    """
    t = dm.t_default if t is None else float(t)
    n = dp.p.size
    if not 1 <= K <= n:
        raise ModeError(f"K must be in 1..{n}, got {K}")
    C = coords(dm, t)
    rho_tilde, parent = nearest_higher_density(C, dp)
    scale = rho_tilde.max()
    if not scale > 0:
        raise ModeError("all points coincide in diffusion coordinates")
    rho = rho_tilde / scale
    Dt = dp.p * rho
    modes = top_k(Dt, K)
    d = row_distances(C, np.array([dp.argmax]), modes[None, :])[0]
    nearest = np.lexsort((modes, d))[0]
    return ModeAnalysis(rho_tilde=rho_tilde, rho=rho, Dt=Dt, parent=parent,
                        modes=modes, p=dp.p, t=t, argmax_mode=int(nearest))


def estimate_k(Dt, search_limit: int = 20) -> KEstimate:
    """Estimate the number of clusters from the kink in the sorted ``D_t`` curve.

    With ``s`` sorted descending and ``Delta_i = s_{i+1} - s_i`` (1-based), the
    first-order rule returns the smallest i >= 2 whose ``|Delta_i|`` is a local
    maximum, more than twice ``|Delta_{i-1}|`` and at least half the largest
    ``|Delta|``.  Failing that, the second-order rule maximizes
    ``Delta_i / Delta_{i+1}`` over i in 2..search_limit.  A gap at i means i
    clusters.
    """
    Dt = Dt.Dt if isinstance(Dt, ModeAnalysis) else np.asarray(Dt, dtype=np.float64)
    n = Dt.size
    if n <= search_limit + 2:
        raise ModeError(f"need more than {search_limit + 2} points, got {n}")
    s = np.sort(Dt)[::-1]
    if s[0] == s[-1]:
        raise InconclusiveError("all D_t values are equal")

    L = search_limit
    delta = s[1:L + 3] - s[:L + 2]          # Delta_1 .. Delta_{L+2}
    mag = np.abs(delta)
    gmax = mag[:L].max()

    for i in range(2, L + 1):               # 1-based gap index
        cur, prev, nxt = mag[i - 1], mag[i - 2], mag[i]
        if cur >= prev and cur >= nxt and cur > 2 * prev and cur >= 0.5 * gmax:
            return KEstimate(s, mag[:L + 1], _ratios(delta, L), i, "first-order")

    ratios = _ratios(delta, L)
    valid = ~np.isnan(ratios[1:])
    if not np.any(valid):
        raise InconclusiveError("no usable second-order ratios")
    cand = np.where(valid, ratios[1:], -np.inf)
    k_hat = int(np.argmax(cand)) + 2
    return KEstimate(s, mag[:L + 1], ratios, k_hat, "second-order")


def _ratios(delta: np.ndarray, L: int) -> np.ndarray:
    num, den = delta[:L], delta[1:L + 1]
    out = np.full(L, np.nan)
    ok = np.abs(den) >= 1e-15
    out[ok] = num[ok] / den[ok]
    return out
