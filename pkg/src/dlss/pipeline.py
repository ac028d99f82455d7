"""Run configuration, stage caching and the end-to-end clustering pipeline."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from . import active as active_mod
from .data import Dataset, DataError, load_csv, load_cube, perturb_duplicates
from .density import DensityProfile, estimate_density
from .diffusion import DiffusionModel, decompose
from .evaluation import MetricsReport, metrics
from .graph import MarkovGraph, NeighborLists, build_graph, knn
from .labeling import Labeling, build_spatial_index, run_dl, run_dlss
from .modes import KEstimate, ModeAnalysis, analyze_modes, estimate_k

__all__ = ["RunConfig", "StageCache", "Pipeline", "load_dataset", "preprocess"]

log = logging.getLogger(__name__)

METHODS = ("dl", "dlss", "active", "estimate-k")
NORMALIZATIONS = ("none", "max", "unit")


@dataclass
class RunConfig:
    """Experiment parameters.  Defaults are the published settings:
    k=100, sigma=1 for the graph, 20-NN density, t=30, r_s=3."""

    dataset: Optional[str] = None
    method: str = "dlss"
    k_graph: int = 100
    sigma_graph: float = 1.0
    k_density: int = 20
    sigma_density: Optional[float] = None
    density_stat: str = "mean"
    t: float = 30.0
    r_s: float = 3.0
    K: Optional[int] = None
    estimate_k: bool = False
    search_limit: int = 20
    m_max: int = 50
    embed_dim: Optional[int] = None
    active_budget: Optional[int] = None
    active_alpha: Optional[float] = None
    noise_variance: Optional[float] = None
    normalize: str = "none"
    seed: int = 0
    workers: int = 1
    cache_dir: Optional[str] = None
    out_dir: Optional[str] = None
    gt_column: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.normalize not in NORMALIZATIONS:
            raise ValueError(f"normalize must be one of {NORMALIZATIONS}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def load_dataset(path, gt_column: Optional[str] = None) -> Dataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path, gt_column=gt_column)
    if path.suffix.lower() == ".json":
        return load_cube(path)
    raise DataError(f"unrecognized dataset format: {path} (expected .json header or .csv)")


def preprocess(ds: Dataset, cfg: RunConfig) -> Dataset:
    """Duplicate-separating noise (in the input units), then optional rescaling."""
    if cfg.noise_variance:
        ds = perturb_duplicates(ds, cfg.noise_variance, cfg.seed)
    pts = ds.points
    if cfg.normalize == "max":
        scale = np.abs(pts).max()
        if scale > 0:
            pts = pts / scale
    elif cfg.normalize == "unit":
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        pts = pts / np.where(norms > 0, norms, 1.0)
    if pts is not ds.points:
        ds = Dataset(points=pts, grid=ds.grid, gt=ds.gt, name=ds.name, shape=ds.shape)
    return ds


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:24]


class StageCache:
    """``.npz`` files for neighbour lists, graphs and eigenpairs.

    * ``knn-<key>.npz``: ``idx`` (int64, N x k), ``dist`` (float64, N x k)
    * ``graph-<key>.npz``: CSR arrays of W (``data``, ``indices``, ``indptr``,
      ``shape``), ``sigma``, ``k``, ``bridges`` (B x 3: i, j, distance)
    * ``eig-<key>.npz``: ``lambdas``, ``phis`` (N x M), ``spectrum``, ``t_default``

    Keys hash the dataset content together with the stage parameters.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, kind: str, key: str) -> Path:
        return self.root / f"{kind}-{key}.npz"

    def get_knn(self, key) -> Optional[NeighborLists]:
        p = self._path("knn", key)
        if not p.exists():
            return None
        with np.load(p) as z:
            return NeighborLists(z["idx"], z["dist"], int(z["idx"].shape[1]))

    def put_knn(self, key, nl: NeighborLists) -> None:
        np.savez(self._path("knn", key), idx=nl.idx, dist=nl.dist)

    def get_graph(self, key) -> Optional[MarkovGraph]:
        p = self._path("graph", key)
        if not p.exists():
            return None
        with np.load(p) as z:
            W = sparse.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=tuple(z["shape"]))
            bridges = [(int(i), int(j), float(d)) for i, j, d in z["bridges"]]
            sigma, k = float(z["sigma"]), int(z["k"])
        deg = np.asarray(W.sum(axis=1)).ravel()
        P = (sparse.diags(1.0 / deg) @ W).tocsr()
        return MarkovGraph(W=W, deg=deg, P=P, pi=deg / deg.sum(), sigma=sigma, k=k,
                           bridges=bridges)

    def put_graph(self, key, g: MarkovGraph) -> None:
        br = np.array(g.bridges, dtype=np.float64).reshape(-1, 3)
        np.savez(self._path("graph", key), data=g.W.data, indices=g.W.indices,
                 indptr=g.W.indptr, shape=np.array(g.W.shape), sigma=g.sigma, k=g.k, bridges=br)

    def get_model(self, key) -> Optional[DiffusionModel]:
        p = self._path("eig", key)
        if not p.exists():
            return None
        with np.load(p) as z:
            return DiffusionModel(z["lambdas"], z["phis"], int(z["lambdas"].size),
                                  float(z["t_default"]), z["spectrum"])

    def put_model(self, key, dm: DiffusionModel) -> None:
        np.savez(self._path("eig", key), lambdas=dm.lambdas, phis=dm.phis,
                 spectrum=dm.spectrum if dm.spectrum is not None else dm.lambdas,
                 t_default=dm.t_default)


class Pipeline:
    """Lazily evaluated stages for one dataset and configuration.

    Stages are memoized, so sweeps over ``t`` or ``r_s`` reuse the neighbour
    search, graph and eigenpairs.
    """

    def __init__(self, ds: Dataset, cfg: Optional[RunConfig] = None,
                 cache: Optional[StageCache] = None):
        self.cfg = cfg or RunConfig()
        self.ds = preprocess(ds, self.cfg)
        if cache is None and self.cfg.cache_dir:
            cache = StageCache(self.cfg.cache_dir)
        self.cache = cache
        self.timings: dict = {}
        self._modes: dict = {}
        self._spatial: dict = {}
        self._hash = self.ds.content_hash() if cache is not None else None

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Pipeline":
        if not cfg.dataset:
            raise DataError("no dataset given")
        return cls(load_dataset(cfg.dataset, cfg.gt_column), cfg)

    @contextmanager
    def _timed(self, stage: str):
        t0 = time.perf_counter()
        yield
        self.timings[stage] = self.timings.get(stage, 0.0) + (time.perf_counter() - t0) * 1e3

    @property
    def k_graph(self) -> int:
        return min(self.cfg.k_graph, self.ds.n - 1)

    @property
    def k_density(self) -> int:
        return min(self.cfg.k_density, self.ds.n - 1)

    @cached_property
    def neighbors(self) -> NeighborLists:
        k = max(self.k_graph, self.k_density)
        key = _key(self._hash, "knn", k)
        if self.cache is not None and (nl := self.cache.get_knn(key)) is not None:
            return nl
        with self._timed("knn"):
            nl = knn(self.ds, k, workers=self.cfg.workers)
        if self.cache is not None:
            self.cache.put_knn(key, nl)
        return nl

    @cached_property
    def graph(self) -> MarkovGraph:
        key = _key(self._hash, "graph", self.k_graph, self.cfg.sigma_graph)
        if self.cache is not None and (g := self.cache.get_graph(key)) is not None:
            return g
        nl = self.neighbors
        with self._timed("graph"):
            g = build_graph(self.ds, nl.head(self.k_graph), self.cfg.sigma_graph)
        if self.cache is not None:
            self.cache.put_graph(key, g)
        return g

    @cached_property
    def model(self) -> DiffusionModel:
        cfg = self.cfg
        m_max = min(cfg.m_max, self.ds.n)
        key = _key(self._hash, "eig", self.k_graph, cfg.sigma_graph, m_max, cfg.embed_dim, cfg.t)
        if self.cache is not None and (dm := self.cache.get_model(key)) is not None:
            return dm
        g = self.graph
        with self._timed("eigen"):
            dm = decompose(g, m_max=m_max, n_eig=cfg.embed_dim, t_default=cfg.t)
        if self.cache is not None:
            self.cache.put_model(key, dm)
        return dm

    @cached_property
    def density(self) -> DensityProfile:
        nl = self.neighbors
        with self._timed("density"):
            return estimate_density(self.ds, nl, self.k_density, self.cfg.sigma_density,
                                    seed=self.cfg.seed, stat=self.cfg.density_stat)

    def spatial(self, r_s: Optional[float] = None):
        r_s = self.cfg.r_s if r_s is None else float(r_s)
        if r_s not in self._spatial:
            self._spatial[r_s] = build_spatial_index(self.ds.grid, r_s)
        return self._spatial[r_s]

    def modes(self, t: Optional[float] = None, K: Optional[int] = None) -> ModeAnalysis:
        t = self.cfg.t if t is None else float(t)
        K = self.resolve_K(t) if K is None else int(K)
        if (t, K) not in self._modes:
            dm, dp = self.model, self.density
            with self._timed("modes"):
                self._modes[(t, K)] = analyze_modes(dm, dp, t, K)
        return self._modes[(t, K)]

    def k_estimate(self, t: Optional[float] = None) -> KEstimate:
        return estimate_k(self.modes(t, K=1).Dt, self.cfg.search_limit)

    def resolve_K(self, t: Optional[float] = None) -> int:
        if self.cfg.K:
            return int(self.cfg.K)
        if self.cfg.estimate_k or self.ds.gt is None or self.ds.n_classes == 0:
            return self.k_estimate(t).k_hat
        return self.ds.n_classes

    def budget(self) -> int:
        if self.cfg.active_budget is not None:
            return int(self.cfg.active_budget)
        if self.cfg.active_alpha is not None:
            return int(round(self.cfg.active_alpha * self.ds.n))
        return 0

    def label(self, method: Optional[str] = None, t: Optional[float] = None,
              r_s: Optional[float] = None, K: Optional[int] = None) -> Labeling:
        method = method or self.cfg.method
        ma = self.modes(t, K)
        dp = self.density
        with self._timed("label"):
            if method == "dl":
                return run_dl(ma, dp)
            if method == "dlss":
                return run_dlss(ma, dp, self.spatial(r_s))
            if method == "active":
                return self.active(t=t, r_s=r_s, K=K)[0]
        raise ValueError(f"cannot label with method {method!r}")

    def query_plan(self, L: Optional[int] = None, t: Optional[float] = None,
                   K: Optional[int] = None):
        L = self.budget() if L is None else int(L)
        return active_mod.plan_queries(self.model, self.modes(t, K), t, L)

    def active(self, L: Optional[int] = None, t: Optional[float] = None,
               r_s: Optional[float] = None, K: Optional[int] = None):
        if self.ds.gt is None:
            raise DataError("active learning draws its labels from ground truth; none loaded")
        qp = self.query_plan(L, t, K)
        si = self.spatial(r_s) if self.ds.grid is not None else None
        lab = active_mod.run_active(qp, self.ds.gt, self.modes(t, K), self.density, si)
        return lab, qp

    def random_queries(self, seed: int, L: Optional[int] = None, t: Optional[float] = None,
                       r_s: Optional[float] = None, K: Optional[int] = None) -> Labeling:
        L = self.budget() if L is None else int(L)
        si = self.spatial(r_s) if self.ds.grid is not None else None
        return active_mod.random_baseline(seed, L, self.ds.gt, self.modes(t, K), self.density, si)

    def evaluate(self, labeling) -> Optional[MetricsReport]:
        if self.ds.gt is None or not np.any(self.ds.gt > 0):
            return None
        labels = labeling.labels if isinstance(labeling, Labeling) else labeling
        return metrics(labels, self.ds.gt)
