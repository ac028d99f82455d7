#!/usr/bin/env python3
"""Convert a MATLAB .mat hyperspectral scene (and its ground truth) to the
JSON-header + raw-payload cube format read by ``dlss``.

Example::

    python scripts/convert_mat.py SalinasA_corrected.mat SalinasA_gt.mat \
        --out data/salinas_a.json --name salinas_a

A crop can be taken with ``--crop R0 R1 C0 C1`` (half-open pixel ranges),
for the benchmark subsets whose offsets have to be chosen by the user.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
from scipy.io import loadmat

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from dlss.data import save_cube  # noqa: E402


def _array(path, key, ndim):
    m = {k: v for k, v in loadmat(path).items() if not k.startswith("__")}
    if key:
        return np.asarray(m[key])
    cands = [k for k, v in m.items() if isinstance(v, np.ndarray) and v.ndim == ndim]
    if len(cands) != 1:
        raise SystemExit(f"{path}: cannot pick a {ndim}-d array from {sorted(m)}; use --*-key")
    return np.asarray(m[cands[0]])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("cube_mat")
    ap.add_argument("gt_mat", nargs="?")
    ap.add_argument("--cube-key")
    ap.add_argument("--gt-key")
    ap.add_argument("--crop", type=int, nargs=4, metavar=("R0", "R1", "C0", "C1"))
    ap.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    ap.add_argument("--name")
    ap.add_argument("--out", required=True, help="header path (.json)")
    args = ap.parse_args(argv)

    cube = _array(args.cube_mat, args.cube_key, 3).astype(np.float64)
    gt = _array(args.gt_mat, args.gt_key, 2).astype(np.int32) if args.gt_mat else None
    if gt is not None and gt.shape != cube.shape[:2]:
        raise SystemExit(f"gt shape {gt.shape} does not match cube {cube.shape[:2]}")
    if args.crop:
        r0, r1, c0, c1 = args.crop
        cube = cube[r0:r1, c0:c1]
        if gt is not None:
            gt = gt[r0:r1, c0:c1]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_cube(out, cube, gt, dtype=args.dtype, name=args.name or out.stem)
    r, c, b = cube.shape
    print(f"{out}: {r}x{c}x{b}" + ("" if gt is None else f", {len(np.unique(gt[gt > 0]))} classes"))


if __name__ == "__main__":
    main()
