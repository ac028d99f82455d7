"""Label propagation from modes: spectral-only (DL) and two-stage spectral-spatial (DLSS)."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .data import LabelVector
from .density import DensityProfile
from .modes import ModeAnalysis

__all__ = [
    "Provenance",
    "SpatialIndex",
    "Labeling",
    "LabelingError",
    "build_spatial_index",
    "consensus",
    "run_dl",
    "run_dlss",
]


class LabelingError(ValueError):
    pass


class Provenance(enum.IntEnum):
    UNLABELED = 0
    MODE = 1
    QUERIED = 2
    STAGE1_SPECTRAL = 3
    STAGE2_CONSENSUS = 4
    STAGE2_SPECTRAL = 5


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    """Pixels within Euclidean grid distance ``r_s`` of each pixel, self excluded.

    Stored in CSR form: the neighbours of n are ``indices[indptr[n]:indptr[n+1]]``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    r_s: float

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    def neighbors(self, n: int) -> np.ndarray:
        return self.indices[self.indptr[n]:self.indptr[n + 1]]

    def as_lists(self) -> list:
        ip, ix = self.indptr.tolist(), self.indices.tolist()
        return [ix[ip[n]:ip[n + 1]] for n in range(len(ip) - 1)]


def build_spatial_index(grid: np.ndarray, r_s: float) -> SpatialIndex:
    if grid is None:
        raise LabelingError("spatial labeling needs pixel grid coordinates (grid required)")
    if r_s < 0:
        raise LabelingError("r_s must be nonnegative")
    grid = np.asarray(grid, dtype=np.int64)
    n = grid.shape[0]
    R = int(math.floor(r_s))
    offsets = [(dr, dc) for dr in range(-R, R + 1) for dc in range(-R, R + 1)
               if (dr or dc) and dr * dr + dc * dc <= r_s * r_s]
    if not offsets:
        return SpatialIndex(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), float(r_s))

    h, w = grid[:, 0].max() + 1, grid[:, 1].max() + 1
    lookup = np.full((h + 2 * R, w + 2 * R), -1, dtype=np.int64)
    lookup[grid[:, 0] + R, grid[:, 1] + R] = np.arange(n)
    src, dst = [], []
    for dr, dc in offsets:
        nb = lookup[grid[:, 0] + R + dr, grid[:, 1] + R + dc]
        ok = nb >= 0
        src.append(np.flatnonzero(ok))
        dst.append(nb[ok])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return SpatialIndex(indptr, dst, float(r_s))


def _majority(labels_of_neighbors) -> int:
    if not labels_of_neighbors:
        return 0
    lab, cnt = Counter(labels_of_neighbors).most_common(1)[0]
    return lab if 2 * cnt > len(labels_of_neighbors) else 0


def consensus(si: SpatialIndex, labels, n: int) -> int:
    """Strict-majority label among n's spatial neighbours, unlabeled counted as 0.

    Returns 0 when no label has relative frequency above one half.
    """
    lab = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    return int(_majority(lab[si.neighbors(n)].tolist()))


@dataclass(frozen=True, eq=False)
class Labeling:
    labels: np.ndarray
    provenance: np.ndarray
    K: int
    stage1_unlabeled: int = 0
    # (point, consensus at assignment, assigned label) for every stage-1 assignment
    events: list = field(default_factory=list)

    def as_label_vector(self) -> LabelVector:
        return LabelVector(self.labels, self.K)


def _initial(ma: ModeAnalysis, dp: DensityProfile, seeds: Optional[Mapping[int, int]]):
    n = dp.p.size
    labels = np.zeros(n, dtype=np.int64)
    prov = np.zeros(n, dtype=np.int8)
    labels[ma.modes] = np.arange(1, ma.K + 1)
    prov[ma.modes] = Provenance.MODE
    if seeds:
        for i, y in seeds.items():
            if int(y) < 1:
                raise LabelingError(f"seed {i} has label {y}; seed labels must be >= 1")
            labels[int(i)] = int(y)
            prov[int(i)] = Provenance.QUERIED
    top = dp.argmax
    if labels[top] == 0:
        # the density maximizer has no parent; give it its nearest mode's label
        labels[top] = labels[ma.modes[ma.argmax_mode]]
        prov[top] = Provenance.STAGE1_SPECTRAL
    return labels, prov


def _follow(labels: list, parent: list, n: int) -> int:
    m = parent[n]
    while m >= 0 and labels[m] == 0:
        m = parent[m]
    if m < 0:
        raise AssertionError(f"parent chain of {n} reaches no labeled point")
    return labels[m]


def run_dl(ma: ModeAnalysis, dp: DensityProfile,
           seeds: Optional[Mapping[int, int]] = None) -> Labeling:
    """Each point takes the label of its nearest higher-density neighbour in d_t."""
    labels, prov = _initial(ma, dp, seeds)
    lab = labels.tolist()
    parent = ma.parent.tolist()
    for n in dp.order.tolist():
        if lab[n] == 0:
            lab[n] = _follow(lab, parent, n)
            prov[n] = Provenance.STAGE1_SPECTRAL
    labels = np.asarray(lab, dtype=np.int64)
    return Labeling(labels, prov, int(labels.max()), 0)


def run_dlss(ma: ModeAnalysis, dp: DensityProfile, si: SpatialIndex,
             seeds: Optional[Mapping[int, int]] = None,
             record_events: bool = False) -> Labeling:
    """Two-stage spectral-spatial labeling.

    Stage 1 walks the unlabeled points by decreasing density and copies the
    label of the point's parent unless the parent is still unlabeled or a
    spatial consensus exists and disagrees.  Stage 2 walks what is left, again
    by decreasing density, and assigns the (recomputed) spatial consensus if
    there is one, else the label found up the parent chain.
    """
    if si.n != dp.p.size:
        raise LabelingError("spatial index does not match the data")
    labels, prov = _initial(ma, dp, seeds)
    lab = labels.tolist()
    parent = ma.parent.tolist()
    nbrs = si.as_lists()
    order = dp.order.tolist()
    events = []

    for n in order:
        if lab[n]:
            continue
        spectral = lab[parent[n]]
        if spectral == 0:
            continue
        c = _majority([lab[m] for m in nbrs[n]])
        if c != 0 and c != spectral:
            continue
        lab[n] = spectral
        prov[n] = Provenance.STAGE1_SPECTRAL
        if record_events:
            events.append((n, c, spectral))

    remaining = [n for n in order if lab[n] == 0]
    for n in remaining:
        c = _majority([lab[m] for m in nbrs[n]])
        if c != 0:
            lab[n] = c
            prov[n] = Provenance.STAGE2_CONSENSUS
        else:
            lab[n] = _follow(lab, parent, n)
            prov[n] = Provenance.STAGE2_SPECTRAL

    labels = np.asarray(lab, dtype=np.int64)
    return Labeling(labels, prov, int(labels.max()), len(remaining), events)
