"""Cluster-to-ground-truth alignment, OA/AA/kappa, and patch-wise paired t-tests."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .data import Dataset

__all__ = [
    "Alignment",
    "MetricsReport",
    "PatchStats",
    "PatchResult",
    "EvalError",
    "overlap_matrix",
    "align",
    "metrics",
    "split_patches",
    "patch_experiment",
    "paired_t",
]


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class Alignment:
    """Predicted label -> GT label; predicted labels left unmatched map to 0."""

    mapping: dict
    score: int  # number of gt-labeled pixels whose aligned label is correct


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Rows of ``confusion`` are GT classes 1..K_GT; columns are the aligned
    predicted classes 1..K_GT followed by one column per unmatched predicted label.
    """

    confusion: np.ndarray
    oa: float
    aa: float
    kappa: float
    permutation: dict
    chance: float = 0.0

    def to_dict(self) -> dict:
        return {
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "confusion": self.confusion.tolist(),
            "permutation": {str(k): int(v) for k, v in sorted(self.permutation.items())},
        }


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x), dtype=np.int64)


def overlap_matrix(pred, gt):
    """``O[a, b] = |{n : pred_n = a+1, gt_n = b+1}|`` over gt-labeled points."""
    pred, gt = _as_array(pred), _as_array(gt)
    if pred.shape != gt.shape:
        raise EvalError("pred and gt lengths differ")
    mask = gt > 0
    if not np.any(mask):
        raise EvalError("no ground-truth labeled points to evaluate on")
    if np.any(pred[mask] < 1):
        raise EvalError("predicted labels must be >= 1 on evaluated points")
    K = int(pred.max())
    K_gt = int(gt.max())
    O = np.zeros((K, K_gt), dtype=np.int64)
    np.add.at(O, (pred[mask] - 1, gt[mask] - 1), 1)
    return O


def align(pred, gt) -> Alignment:
    """Map predicted clusters to GT classes maximizing total overlap.

    Solved as a maximum-weight bipartite matching; rectangular problems leave
    the surplus predicted labels (or GT classes) unmatched.
    """
    O = overlap_matrix(pred, gt)
    # canonical row order so that ties resolve independently of label ids
    keys = [tuple(-O[a]) for a in range(O.shape[0])]
    perm = sorted(range(O.shape[0]), key=lambda a: keys[a])
    rows, cols = linear_sum_assignment(O[perm], maximize=True)
    mapping = {a + 1: 0 for a in range(O.shape[0])}
    score = 0
    for r, c in zip(rows, cols):
        a = perm[r]
        mapping[a + 1] = int(c) + 1
        score += int(O[a, c])
    return Alignment(mapping, score)


def metrics(pred, gt, alignment: Optional[Alignment] = None) -> MetricsReport:
    """Overall accuracy, average per-class recall and Cohen's kappa after alignment.

    Chance agreement is the standard marginal-product term
    ``sum_k row_k * col_k / total^2``.
    """
    pred, gt = _as_array(pred), _as_array(gt)
    alignment = alignment or align(pred, gt)
    O = overlap_matrix(pred, gt)
    K, K_gt = O.shape
    unmatched = [a for a in range(1, K + 1) if alignment.mapping.get(a, 0) == 0]
    conf = np.zeros((K_gt, K_gt + len(unmatched)), dtype=np.int64)
    for a in range(1, K + 1):
        b = alignment.mapping.get(a, 0)
        col = b - 1 if b else K_gt + unmatched.index(a)
        conf[:, col] += O[a - 1]

    total = conf.sum()
    diag = np.trace(conf[:, :K_gt])
    oa = diag / total
    row = conf.sum(axis=1)
    present = row > 0
    if not np.all(present):
        missing = (np.flatnonzero(~present) + 1).tolist()
        warnings.warn(f"GT classes {missing} have no pixels; excluded from AA", RuntimeWarning,
                      stacklevel=2)
    aa = float(np.mean(np.diag(conf[:, :K_gt])[present] / row[present]))
    col = conf[:, :K_gt].sum(axis=0)
    a_e = float(np.dot(row, col)) / float(total) ** 2
    kappa = (oa - a_e) / (1.0 - a_e) if a_e < 1.0 else float("nan")
    return MetricsReport(conf, float(oa), aa, float(kappa), dict(alignment.mapping), a_e)


# -- patch experiments ------------------------------------------------------


def split_patches(rows: int, cols: int, grid_rows: int, grid_cols: int):
    """Rectangles ``(r0, r1, c0, c1)`` of an equal split; remainders go to the last patch."""
    if not (1 <= grid_rows <= rows and 1 <= grid_cols <= cols):
        raise EvalError("patch grid does not fit the image")
    hr, hc = rows // grid_rows, cols // grid_cols
    out = []
    for i in range(grid_rows):
        r0, r1 = i * hr, (rows if i == grid_rows - 1 else (i + 1) * hr)
        for j in range(grid_cols):
            c0, c1 = j * hc, (cols if j == grid_cols - 1 else (j + 1) * hc)
            out.append((r0, r1, c0, c1))
    return out


@dataclass
class PatchResult:
    index: int
    bounds: tuple
    n: int
    K: int
    oa: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PatchStats:
    method_a: str
    method_b: str
    delta: tuple
    delta_mean: float
    delta_std: float
    t_stat: float
    df: int
    critical: float
    significant: bool
    verdict: str

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a, "method_b": self.method_b,
            "delta": list(self.delta), "delta_mean": self.delta_mean,
            "delta_std": self.delta_std,
            "t_stat": None if np.isnan(self.t_stat) else self.t_stat,
            "df": self.df, "critical": self.critical,
            "significant": self.significant, "verdict": self.verdict,
        }


def patch_experiment(ds: Dataset, grid_rows: int, grid_cols: int,
                     methods: Mapping[str, Callable[[Dataset, int], np.ndarray]],
                     keep_labels: bool = False) -> list:
    """Run every method on each patch that carries ground truth.

    Each method is called as ``method(patch_dataset, K)`` with K the number of GT
    classes present in the patch and must return one label per patch pixel.
    """
    if ds.grid is None or ds.gt is None:
        raise EvalError("patch experiments need a pixel grid and ground truth")
    rows, cols = ds.shape if ds.shape else tuple(int(v) + 1 for v in ds.grid.max(axis=0))
    results = []
    for pi, (r0, r1, c0, c1) in enumerate(split_patches(rows, cols, grid_rows, grid_cols)):
        g = ds.grid
        inside = (g[:, 0] >= r0) & (g[:, 0] < r1) & (g[:, 1] >= c0) & (g[:, 1] < c1)
        idx = np.flatnonzero(inside)
        gt = ds.gt[idx]
        classes = np.unique(gt[gt > 0])
        if classes.size == 0:
            continue
        # renumber GT classes to 1..K inside the patch
        remap = np.zeros(int(gt.max()) + 1, dtype=np.int64)
        remap[classes] = np.arange(1, classes.size + 1)
        sub = Dataset(points=ds.points[idx], grid=g[idx] - [r0, c0], gt=remap[gt],
                      name=f"{ds.name}-patch{pi}", shape=(r1 - r0, c1 - c0))
        res = PatchResult(pi, (r0, r1, c0, c1), idx.size, int(classes.size))
        for name, fn in methods.items():
            lab = np.asarray(fn(sub, res.K))
            res.oa[name] = metrics(lab, sub.gt).oa
            if keep_labels:
                res.labels[name] = lab
        results.append(res)
    return results


def paired_t(oa_a, oa_b, method_a: str = "a", method_b: str = "b",
             critical: Optional[float] = None, level: float = 0.95) -> PatchStats:
    """Paired t statistic ``mean(delta) / (std(delta) / sqrt(n - 1))`` on per-patch OA.

    ``std`` uses the ``n - 1`` denominator and the test has ``n - 1`` degrees of
    freedom.  Identical results give ``t = nan`` and the verdict "no difference".
    """
    delta = np.asarray(oa_a, dtype=np.float64) - np.asarray(oa_b, dtype=np.float64)
    n = delta.size
    if n < 2:
        raise EvalError("need at least two patches with ground truth")
    df = n - 1
    if critical is None:
        critical = float(stats.t.ppf(0.5 + level / 2.0, df))
    mean = float(delta.mean())
    sd = float(np.sqrt(np.sum((delta - mean) ** 2) / df))
    if sd == 0.0:
        if mean == 0.0:
            return PatchStats(method_a, method_b, tuple(delta.tolist()), mean, sd, float("nan"),
                              df, critical, False, "no difference")
        t = float(np.copysign(np.inf, mean))
    else:
        t = mean / (sd / np.sqrt(df))
    sig = bool(abs(t) > critical)
    verdict = "significant" if sig else "not significant"
    return PatchStats(method_a, method_b, tuple(delta.tolist()), mean, sd, t, df, critical,
                      sig, verdict)
