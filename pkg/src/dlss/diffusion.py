"""Spectral decomposition of the random walk and diffusion distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .graph import MarkovGraph, row_distances

__all__ = [
    "DiffusionModel",
    "DiffusionError",
    "decompose",
    "elbow",
    "coords",
    "pair_distance",
    "oracle_distance",
    "oracle_distances",
]

DEFAULT_T = 30.0
DEFAULT_M_MAX = 50
# Dense eigh is cheaper and more robust than ARPACK below this size.
DENSE_MAX_N = 1500
ORACLE_MAX_N = 2000


class DiffusionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """Leading eigenpairs of P; ``phis`` are pi-orthonormal right eigenvectors."""

    lambdas: np.ndarray
    phis: np.ndarray
    M: int
    t_default: float = DEFAULT_T
    spectrum: Optional[np.ndarray] = None  # every eigenvalue computed, before truncation

    @property
    def n(self) -> int:
        return self.phis.shape[0]

    def truncate(self, M: int) -> "DiffusionModel":
        if not 1 <= M <= self.M:
            raise ValueError(f"cannot truncate {self.M} eigenpairs to {M}")
        return DiffusionModel(self.lambdas[:M].copy(), self.phis[:, :M].copy(), M,
                              self.t_default, self.spectrum)


def elbow(abs_lambdas: np.ndarray) -> int:
    """Truncation order at the largest gap ``|l_m| - |l_{m+1}|`` for m >= 2.

    Indices are 1-based: returning m keeps eigenpairs 1..m.
    """
    a = np.asarray(abs_lambdas)
    if a.size < 3:
        return int(a.size)
    gaps = a[1:-1] - a[2:]
    return int(np.argmax(gaps)) + 2


def _sym_conjugate(g: MarkovGraph) -> sparse.csr_matrix:
    dinv = 1.0 / np.sqrt(g.deg)
    S = sparse.diags(dinv) @ g.W @ sparse.diags(dinv)
    return ((S + S.T) * 0.5).tocsr()


def decompose(g: MarkovGraph, m_max: int = DEFAULT_M_MAX, n_eig: Optional[int] = None,
              t_default: float = DEFAULT_T, maxiter: Optional[int] = None,
              tol: float = 0.0) -> DiffusionModel:
    """Top eigenpairs of P through its symmetric conjugate ``D^-1/2 W D^-1/2``.

    With ``n_eig`` given exactly that many pairs are kept; otherwise ``m_max``
    pairs are computed and truncated at the eigenvalue elbow.
    """
    n = g.n
    m = int(n_eig) if n_eig is not None else int(m_max)
    if not 1 <= m <= n:
        raise DiffusionError(f"number of eigenpairs must be in 1..{n}, got {m}")
    if n_eig is None and m < 2:
        raise DiffusionError("m_max must be at least 2")

    S = _sym_conjugate(g)
    if n <= DENSE_MAX_N or m >= n - 1:
        vals, vecs = np.linalg.eigh(S.toarray())
    else:
        v0 = np.random.default_rng(0).standard_normal(n)
        try:
            vals, vecs = eigsh(S, k=m, which="LM", v0=v0, maxiter=maxiter, tol=tol)
        except ArpackNoConvergence as exc:
            raise DiffusionError(f"eigensolver did not converge: {exc}") from None

    # descending |lambda|, larger algebraic value first on ties
    order = np.lexsort((-vals, -np.abs(vals)))[:m]
    vals = vals[order]
    vecs = vecs[:, order]

    if np.count_nonzero(vals > 1.0 - 1e-8) > 1:
        raise DiffusionError(
            "eigenvalue 1 is repeated: the graph is disconnected; "
            "rebuild it with connectivity repair"
        )
    if abs(vals[0] - 1.0) > 1e-8:
        raise DiffusionError(f"leading eigenvalue {vals[0]!r} differs from 1")

    phis = vecs * (np.sqrt(g.deg.sum()) / np.sqrt(g.deg))[:, None]
    lead = np.argmax(np.abs(phis), axis=0)
    signs = np.sign(phis[lead, np.arange(phis.shape[1])])
    signs[signs == 0] = 1.0
    phis = phis * signs

    M = m if n_eig is not None else elbow(np.abs(vals))
    return DiffusionModel(lambdas=vals[:M].copy(), phis=np.ascontiguousarray(phis[:, :M]),
                          M=M, t_default=t_default, spectrum=vals)


def _powers(lambdas: np.ndarray, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("diffusion time must be nonnegative")
    if float(t) != np.floor(t) and np.any(lambdas < 0):
        raise ValueError("non-integer diffusion time with negative eigenvalues")
    return np.power(lambdas, float(t))


def coords(dm: DiffusionModel, t: Optional[float] = None) -> np.ndarray:
    """Diffusion map ``x -> (l_1^t Phi_1(x), ..., l_M^t Phi_M(x))``."""
    t = dm.t_default if t is None else t
    return dm.phis * _powers(dm.lambdas, t)


def pair_distance(dm: DiffusionModel, t: Optional[float], i: int, j: int) -> float:
    """Truncated diffusion distance between points i and j."""
    t = dm.t_default if t is None else t
    c = dm.phis[[i, j]] * _powers(dm.lambdas, t)
    return float(row_distances(c, np.array([0]), np.array([[1]]))[0, 0])


def oracle_distances(g: MarkovGraph, t: int) -> np.ndarray:
    """All-pairs diffusion distances from dense powers of P (tests only)."""
    n = g.n
    if n > ORACLE_MAX_N:
        raise ValueError(f"dense oracle limited to N <= {ORACLE_MAX_N}")
    if int(t) != t or t < 0:
        raise ValueError("oracle needs a nonnegative integer time")
    Pt = np.linalg.matrix_power(g.P.toarray(), int(t))
    B = Pt / np.sqrt(g.pi)[None, :]
    out = np.empty((n, n))
    for i in range(n):
        diff = B - B[i]
        out[i] = np.sqrt(np.sum(diff * diff, axis=1))
    return out


def oracle_distance(g: MarkovGraph, t: int, i: int, j: int) -> float:
    n = g.n
    if n > ORACLE_MAX_N:
        raise ValueError(f"dense oracle limited to N <= {ORACLE_MAX_N}")
    if int(t) != t or t < 0:
        raise ValueError("oracle needs a nonnegative integer time")
    e = np.zeros((2, n))
    e[0, i] = 1.0
    e[1, j] = 1.0
    PT = g.P.T.tocsr()
    for _ in range(int(t)):
        e = (PT @ e.T).T
    diff = (e[0] - e[1]) / np.sqrt(g.pi)
    return float(np.sqrt(np.sum(diff * diff)))
