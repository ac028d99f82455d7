"""Datasets and file I/O for point clouds, hyperspectral cubes and label rasters.

A cube on disk is a raw binary payload plus a JSON sidecar header::

    {"rows": 86, "cols": 83, "bands": 224, "dtype": "f32", "order": "bip",
     "data_path": "salinasA.raw", "gt_path": "salinasA_gt.i32"}

``order`` is ``"bip"`` (band-interleaved-by-pixel, i.e. rows x cols x bands)
or ``"bsq"`` (band-sequential, bands x rows x cols).  Relative paths are
resolved against the header's directory.  The ground-truth raster is int32,
row-major, rows x cols, with 0 meaning "no ground truth".
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "Dataset",
    "LabelVector",
    "DataError",
    "load_cube",
    "save_cube",
    "load_csv",
    "perturb_duplicates",
    "grid_from_shape",
    "read_raster",
    "write_raster",
]

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_ORDERS = {"bip", "bsq"}


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


def grid_from_shape(rows: int, cols: int) -> np.ndarray:
    """Row-major (row, col) coordinates for a rows x cols raster."""
    n = np.arange(rows * cols)
    return np.column_stack([n // cols, n % cols]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Dataset:
    """N points in D dimensions, optionally living on a pixel grid.

    ``shape`` is the (rows, cols) of the raster the points came from, when the
    grid is a full raster; it is only used to write label images back out.
    """

    points: np.ndarray
    grid: Optional[np.ndarray] = None
    gt: Optional[np.ndarray] = None
    name: str = ""
    shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError(f"points must be a non-empty N x D matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain non-finite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

        n = pts.shape[0]
        if self.grid is not None:
            grid = np.ascontiguousarray(self.grid, dtype=np.int64)
            if grid.shape != (n, 2):
                raise DataError(f"grid must be N x 2, got {grid.shape}")
            if np.any(grid < 0):
                raise DataError("grid coordinates must be nonnegative")
            if np.unique(grid, axis=0).shape[0] != n:
                raise DataError("grid coordinates must be distinct")
            grid.setflags(write=False)
            object.__setattr__(self, "grid", grid)

        if self.gt is not None:
            gt = np.ascontiguousarray(self.gt, dtype=np.int64)
            if gt.shape != (n,):
                raise DataError(f"gt must have length {n}, got shape {gt.shape}")
            if np.any(gt < 0):
                raise DataError("gt labels must be nonnegative")
            gt.setflags(write=False)
            object.__setattr__(self, "gt", gt)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def n_classes(self) -> int:
        """Number of distinct nonzero ground-truth classes (0 if no gt)."""
        if self.gt is None:
            return 0
        return int(np.unique(self.gt[self.gt > 0]).size)

    def content_hash(self) -> str:
        """SHA-256 over points, grid and gt; used as a cache key."""
        h = hashlib.sha256()
        h.update(np.asarray(self.points.shape, dtype=np.int64).tobytes())
        h.update(self.points.tobytes())
        for extra in (self.grid, self.gt):
            h.update(b"|" if extra is None else extra.tobytes())
        return h.hexdigest()

    def subset(self, mask_or_index, name: Optional[str] = None) -> "Dataset":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            points=self.points[idx],
            grid=None if self.grid is None else self.grid[idx],
            gt=None if self.gt is None else self.gt[idx],
            name=name if name is not None else self.name,
        )


@dataclass(frozen=True, eq=False)
class LabelVector:
    """Integer labels in {0..K}, 0 meaning unlabeled."""

    labels: np.ndarray
    K: int = field(default=0)

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if lab.ndim != 1:
            raise DataError("labels must be one-dimensional")
        K = int(self.K) if self.K else int(lab.max(initial=0))
        if np.any(lab < 0) or np.any(lab > K):
            raise DataError(f"labels must lie in 0..{K}")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "K", K)


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def read_raster(path, rows: int, cols: int, dtype="<i4") -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = np.fromfile(path, dtype=np.dtype(dtype))
    if raw.size != rows * cols:
        raise DataError(f"{path}: expected {rows * cols} values, found {raw.size}")
    return raw.reshape(rows, cols)


def write_raster(path, values: np.ndarray, dtype="<i4") -> None:
    np.ascontiguousarray(values, dtype=np.dtype(dtype)).tofile(path)


def load_cube(header_path) -> Dataset:
    """Load a hyperspectral cube described by a JSON sidecar header."""
    header_path = Path(header_path)
    if not header_path.exists():
        raise FileNotFoundError(header_path)
    hdr = json.loads(header_path.read_text())
    try:
        rows, cols, bands = int(hdr["rows"]), int(hdr["cols"]), int(hdr["bands"])
        data_path = _resolve(header_path.parent, hdr["data_path"])
    except KeyError as exc:
        raise DataError(f"{header_path}: missing header field {exc}") from None
    dtype = _DTYPES.get(hdr.get("dtype", "f32"))
    if dtype is None:
        raise DataError(f"unsupported dtype {hdr.get('dtype')!r}")
    order = hdr.get("order", "bip")
    if order not in _ORDERS:
        raise DataError(f"unsupported order {order!r}")
    if min(rows, cols, bands) < 1:
        raise DataError("rows, cols and bands must be positive")
    if not data_path.exists():
        raise FileNotFoundError(data_path)

    raw = np.fromfile(data_path, dtype=dtype)
    if raw.size != rows * cols * bands:
        raise DataError(
            f"{data_path}: header implies {rows * cols * bands} values, payload has {raw.size}"
        )
    if order == "bip":
        cube = raw.reshape(rows * cols, bands)
    else:
        cube = raw.reshape(bands, rows * cols).T
    if not np.all(np.isfinite(cube)):
        raise DataError(f"{data_path}: payload contains non-finite values")

    gt = None
    if hdr.get("gt_path"):
        gt = read_raster(_resolve(header_path.parent, hdr["gt_path"]), rows, cols).ravel()

    return Dataset(
        points=cube.astype(np.float64),
        grid=grid_from_shape(rows, cols),
        gt=gt,
        name=hdr.get("name", header_path.stem),
        shape=(rows, cols),
    )


def save_cube(header_path, cube: np.ndarray, gt: Optional[np.ndarray] = None,
              dtype: str = "f32", order: str = "bip", name: Optional[str] = None) -> Path:
    """Write a rows x cols x bands array (and optional gt raster) in the sidecar format."""
    header_path = Path(header_path)
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DataError("cube must be rows x cols x bands")
    if dtype not in _DTYPES or order not in _ORDERS:
        raise DataError("unsupported dtype/order")
    rows, cols, bands = cube.shape
    stem = header_path.stem
    data_name = f"{stem}.raw"
    arr = cube if order == "bip" else np.transpose(cube, (2, 0, 1))
    np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tofile(header_path.parent / data_name)
    hdr = {"rows": rows, "cols": cols, "bands": bands, "dtype": dtype,
           "order": order, "data_path": data_name}
    if name:
        hdr["name"] = name
    if gt is not None:
        gt_name = f"{stem}_gt.i32"
        write_raster(header_path.parent / gt_name, np.asarray(gt).reshape(rows, cols))
        hdr["gt_path"] = gt_name
    header_path.write_text(json.dumps(hdr, indent=2))
    return header_path


def load_csv(path, gt_column: Optional[str] = None) -> Dataset:
    """Load a rectangular numeric CSV, one point per row.

    A first row that is not entirely numeric is taken as a header.  ``gt_column``
    may be a header name or a zero-based column index given as a string.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")

    def _numeric(row):
        try:
            [float(c) for c in row]
            return True
        except ValueError:
            return False

    header = None
    if not _numeric(rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(header) if header else len(rows[0])
    values = []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 1}: {exc}") from None
    table = np.asarray(values, dtype=np.float64)

    gt = None
    if gt_column is not None:
        if header and gt_column in header:
            col = header.index(gt_column)
        else:
            try:
                col = int(gt_column)
            except ValueError:
                raise DataError(f"{path}: no column named {gt_column!r}") from None
        if not 0 <= col < width:
            raise DataError(f"{path}: gt column {col} out of range")
        gt_vals = table[:, col]
        if np.any(gt_vals != np.round(gt_vals)):
            raise DataError(f"{path}: gt column must be integer-valued")
        gt = gt_vals.astype(np.int64)
        table = np.delete(table, col, axis=1)
    return Dataset(points=table, gt=gt, name=path.stem)


def perturb_duplicates(ds: Dataset, variance: float, seed: int) -> Dataset:
    """Add i.i.d. N(0, variance) noise to every coordinate.

    Used to separate pixels with identical spectra before density estimation.
    """
    if not variance > 0:
        raise DataError("variance must be positive")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, np.sqrt(variance), size=ds.points.shape)
    return Dataset(points=ds.points + noise, grid=ds.grid, gt=ds.gt,
                   name=ds.name, shape=ds.shape)
