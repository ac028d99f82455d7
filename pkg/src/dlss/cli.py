"""Command-line entry point.

Every command writes its outputs under ``--out-dir`` together with a
``manifest.json`` listing them.  Failures write ``error.json`` and exit with a
nonzero status.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset, DataError, save_cube, write_raster
from .diffusion import DiffusionError
from .evaluation import EvalError, metrics, paired_t, patch_experiment
from .graph import GraphError
from .labeling import LabelingError
from .modes import ModeError
from .active import ActiveError
from .pipeline import Pipeline, RunConfig, load_dataset
from .synth import ToySpec, generate_blobs, generate_toy

log = logging.getLogger("dlss")

CACHE_ENV = "DLSS_CACHE_DIR"
EXIT_USAGE = 2
EXIT_FAILURE = 1
DT_CURVE_LEN = 100

# flag name -> RunConfig field
_FLAGS = {
    "dataset": "dataset",
    "method": "method",
    "k_graph": "k_graph",
    "sigma_graph": "sigma_graph",
    "density_k": "k_density",
    "density_sigma": "sigma_density",
    "density_stat": "density_stat",
    "t": "t",
    "spatial_radius": "r_s",
    "k": "K",
    "estimate_k": "estimate_k",
    "search_limit": "search_limit",
    "m_max": "m_max",
    "embed_dim": "embed_dim",
    "active_budget": "active_budget",
    "active_alpha": "active_alpha",
    "noise_variance": "noise_variance",
    "normalize": "normalize",
    "seed": "seed",
    "workers": "workers",
    "cache_dir": "cache_dir",
    "out_dir": "out_dir",
    "gt_column": "gt_column",
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, files) -> None:
    entries = [{"file": f, "bytes": (out / f).stat().st_size, "sha256": _sha256(out / f)}
               for f in sorted(set(files))]
    write_json(out / "manifest.json", {"command": command, "files": entries})


def _add_run_flags(p: argparse.ArgumentParser, needs_dataset: bool = True) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    if needs_dataset:
        p.add_argument("--dataset", default=S, help="cube header (.json) or point table (.csv)")
        p.add_argument("--gt-column", default=S, help="CSV ground-truth column (name or index)")
    p.add_argument("--method", choices=["dl", "dlss", "active"], default=S)
    p.add_argument("--k-graph", type=int, default=S, help="graph neighbours (default 100)")
    p.add_argument("--sigma-graph", type=float, default=S, help="graph kernel scale (default 1)")
    p.add_argument("--density-k", type=int, default=S, help="KDE neighbours (default 20)")
    p.add_argument("--density-sigma", type=float, default=S, help="KDE bandwidth (default: auto)")
    p.add_argument("--density-stat", choices=["mean", "median"], default=S)
    p.add_argument("--t", type=float, default=S, help="diffusion time (default 30)")
    p.add_argument("--spatial-radius", type=float, default=S, help="r_s (default 3)")
    p.add_argument("--k", type=int, default=S, help="number of clusters")
    p.add_argument("--estimate-k", action="store_true", default=S)
    p.add_argument("--search-limit", type=int, default=S)
    p.add_argument("--m-max", type=int, default=S, help="eigenpairs computed (default 50)")
    p.add_argument("--embed-dim", type=int, default=S, help="fixed truncation instead of the elbow")
    p.add_argument("--active-budget", type=int, default=S)
    p.add_argument("--active-alpha", type=float, default=S)
    p.add_argument("--noise-variance", type=float, default=S,
                   help="variance of noise added to separate duplicate points")
    p.add_argument("--normalize", choices=["none", "max", "unit"], default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("--cache-dir", default=S, help=f"stage cache (default ${CACHE_ENV})")
    p.add_argument("--out-dir", default=S)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    for flag, field in _FLAGS.items():
        if hasattr(args, flag):
            base[field] = getattr(args, flag)
    if not base.get("cache_dir") and os.environ.get(CACHE_ENV):
        base["cache_dir"] = os.environ[CACHE_ENV]
    if base.get("estimate_k"):
        base.setdefault("method", "dlss")
    return RunConfig.from_dict(base)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_labels(out: Path, ds: Dataset, labeling, prefix: str = "") -> list:
    shape = ds.shape if ds.shape else (ds.n,)
    lab, prov = f"{prefix}labels.i32", f"{prefix}provenance.u8"
    write_raster(out / lab, labeling.labels.reshape(shape), "<i4")
    write_raster(out / prov, labeling.provenance.reshape(shape), "u1")
    return [lab, prov]


def _config_info(cfg: RunConfig) -> dict:
    # paths and thread count do not affect results; leave them out so reports
    # from equivalent runs are byte-identical
    d = cfg.to_dict()
    for k in ("out_dir", "cache_dir", "workers"):
        d.pop(k)
    return d


def _dataset_info(ds: Dataset) -> dict:
    return {"name": ds.name, "n": ds.n, "d": ds.d, "shape": list(ds.shape) if ds.shape else None,
            "sha256": ds.content_hash(), "gt_classes": ds.n_classes}


def _mode_info(pl: Pipeline, ma) -> dict:
    dt_sorted = np.sort(ma.Dt)[::-1][:DT_CURVE_LEN]
    return {"K": ma.K, "modes": ma.modes, "t": ma.t, "Dt_sorted": dt_sorted,
            "embedding_dim": pl.model.M, "lambdas": pl.model.lambdas,
            "bridges": [list(b) for b in pl.graph.bridges]}


def cmd_cluster(cfg: RunConfig) -> int:
    def body(out: Path) -> list:
        pl = Pipeline.from_config(cfg)
        report = {"config": _config_info(cfg), "dataset": _dataset_info(pl.ds), "method": cfg.method}
        if cfg.estimate_k or not cfg.K:
            if cfg.estimate_k or pl.ds.gt is None:
                ke = pl.k_estimate()
                report["k_estimate"] = {"k_hat": ke.k_hat, "method": ke.method_used}
        if cfg.method == "active":
            lab, qp = pl.active()
            report["active"] = {"L": qp.L, "alpha": qp.alpha, "queries": qp.queries,
                                "F_queries": qp.F[qp.queries]}
        else:
            lab = pl.label()
        ma = pl.modes()
        report["modes"] = _mode_info(pl, ma)
        report["stage1_unlabeled"] = lab.stage1_unlabeled
        report["n_labels"] = lab.K
        m = pl.evaluate(lab)
        report["metrics"] = m.to_dict() if m else None
        files = _write_labels(out, pl.ds, lab)
        write_json(out / "report.json", report)
        write_json(out / "timings.json", {"ms": pl.timings})
        return files + ["report.json"]

    return _run("cluster", cfg, body)


def cmd_sweep(cfg: RunConfig, param: str, values) -> int:
    if param not in ("t", "r_s"):
        raise ValueError("sweep parameter must be t or r_s")

    def body(out: Path) -> list:
        pl = Pipeline.from_config(cfg)
        if pl.ds.gt is None:
            raise DataError("sweeps need ground truth")
        rows = []
        for v in values:
            kw = {param: float(v)}
            lab = pl.label(**kw)
            m = pl.evaluate(lab)
            rows.append({param: float(v), "oa": m.oa, "aa": m.aa, "kappa": m.kappa,
                         "stage1_unlabeled": lab.stage1_unlabeled})
        oas = [r["oa"] for r in rows]
        write_json(out / "sweep.json", {"config": _config_info(cfg), "dataset": _dataset_info(pl.ds),
                                        "param": param, "rows": rows,
                                        "oa_range": max(oas) - min(oas)})
        write_json(out / "timings.json", {"ms": pl.timings})
        for r in rows:
            print(f"{param}={r[param]:g}\tOA={r['oa']:.4f}\tAA={r['aa']:.4f}\tkappa={r['kappa']:.4f}")
        return ["sweep.json"]

    return _run("sweep", cfg, body)


def patch_methods(cfg: RunConfig, names) -> dict:
    def make(name):
        def fn(sub: Dataset, K: int):
            sub_cfg = cfg.replace(K=K, estimate_k=False, cache_dir=None, method=name)
            return Pipeline(sub, sub_cfg).label(name).labels
        return fn
    return {n: make(n) for n in names}


def cmd_patches(cfg: RunConfig, grid_rows: int, grid_cols: int, names=("dlss", "dl")) -> int:
    def body(out: Path) -> list:
        full = load_dataset(cfg.dataset, cfg.gt_column)
        results = patch_experiment(full, grid_rows, grid_cols, patch_methods(cfg, names),
                                   keep_labels=True)
        files = []
        for r in results:
            r0, r1, c0, c1 = r.bounds
            for name, lab in r.labels.items():
                f = f"patch{r.index:03d}_{name}.i32"
                write_raster(out / f, lab.reshape(r1 - r0, c1 - c0))
                files.append(f)
        rep = {"config": _config_info(cfg), "grid": [grid_rows, grid_cols],
               "patches": [{"index": r.index, "bounds": r.bounds, "n": r.n, "K": r.K, "oa": r.oa}
                           for r in results]}
        if len(names) >= 2 and len(results) >= 2:
            a, b = names[0], names[1]
            st = paired_t([r.oa[a] for r in results], [r.oa[b] for r in results], a, b)
            rep["t_test"] = st.to_dict()
            print(f"{a} vs {b}: t={st.t_stat:.3f} df={st.df} ({st.verdict})")
        write_json(out / "patches.json", rep)
        return files + ["patches.json"]

    return _run("patches", cfg, body)


def cmd_estimate_k(cfg: RunConfig) -> int:
    def body(out: Path) -> list:
        pl = Pipeline.from_config(cfg)
        ke = pl.k_estimate()
        write_json(out / "report.json", {
            "config": _config_info(cfg), "dataset": _dataset_info(pl.ds),
            "k_hat": ke.k_hat, "method": ke.method_used,
            "sorted_Dt": ke.sorted_Dt[:cfg.search_limit + 2],
            "first_order": ke.first_order, "second_order": ke.second_order,
        })
        write_json(out / "timings.json", {"ms": pl.timings})
        print(ke.k_hat)
        return ["report.json"]

    return _run("estimate-k", cfg, body)


def cmd_eval(pred_path: str, dataset: str, out_dir: Optional[str], gt_column=None) -> int:
    cfg = RunConfig(dataset=dataset, out_dir=out_dir, gt_column=gt_column)

    def body(out: Path) -> list:
        ds = load_dataset(dataset, gt_column)
        if ds.gt is None:
            raise DataError("dataset has no ground truth")
        pred = np.fromfile(pred_path, dtype="<i4")
        if pred.size != ds.n:
            raise DataError(f"{pred_path}: {pred.size} labels for {ds.n} points")
        m = metrics(pred, ds.gt)
        write_json(out / "metrics.json", m.to_dict())
        print(f"OA={m.oa:.4f}\tAA={m.aa:.4f}\tkappa={m.kappa:.4f}")
        return ["metrics.json"]

    return _run("eval", cfg, body)


def cmd_synth(kind: str, out_path: str, seed: int = 0, **kw) -> int:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if kind == "toy":
        ds = generate_toy(ToySpec(seed=seed))
    else:
        ds = generate_blobs(kw["k"], kw["n_per"], kw["dim"], kw["separation"], seed)
    if out_path.suffix.lower() == ".csv":
        cols = [f"x{i}" for i in range(ds.d)] + ["gt"]
        table = np.column_stack([ds.points, ds.gt])
        fmt = ["%.17g"] * ds.d + ["%d"]
        np.savetxt(out_path, table, delimiter=",", header=",".join(cols), comments="", fmt=fmt)
    else:
        # one column of pixels, so the file loads as a (trivial) image
        save_cube(out_path, ds.points.reshape(ds.n, 1, ds.d), ds.gt.reshape(ds.n, 1),
                  dtype="f64", name=ds.name)
    print(out_path)
    return 0


_KNOWN_ERRORS = (DataError, GraphError, DiffusionError, ModeError, LabelingError, EvalError,
                 ActiveError, FileNotFoundError, ValueError)


def _run(command: str, cfg: RunConfig, body) -> int:
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    try:
        files = body(out)
    except _KNOWN_ERRORS as exc:
        err = {"command": command, "error": type(exc).__name__, "message": str(exc)}
        write_json(out / "error.json", err)
        print(json.dumps(err), file=sys.stderr)
        return EXIT_FAILURE
    write_manifest(out, command, files)
    log.info("%s finished in %.2f s", command, time.perf_counter() - t0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dlss", description="Diffusion-geometry clustering")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cluster", help="cluster one dataset")
    _add_run_flags(c)

    s = sub.add_parser("sweep", help="OA/AA/kappa over a range of t or r_s")
    _add_run_flags(s)
    s.add_argument("--param", choices=["t", "r_s"], required=True)
    s.add_argument("--values", type=float, nargs="+", required=True)

    pt = sub.add_parser("patches", help="per-patch runs and a paired t-test")
    _add_run_flags(pt)
    pt.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"), required=True)
    pt.add_argument("--methods", default="dlss,dl", help="comma-separated, first two are compared")

    e = sub.add_parser("estimate-k", help="estimate the number of clusters")
    _add_run_flags(e)

    ev = sub.add_parser("eval", help="score a label raster against ground truth")
    ev.add_argument("--pred", required=True, help="int32 label file")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--gt-column")
    ev.add_argument("--out-dir")

    sy = sub.add_parser("synth", help="write a synthetic dataset")
    sy_sub = sy.add_subparsers(dest="kind", required=True)
    toy = sy_sub.add_parser("toy")
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--out", required=True, help=".json cube header or .csv")
    bl = sy_sub.add_parser("blobs")
    bl.add_argument("--k", type=int, required=True)
    bl.add_argument("--n-per", type=int, default=200)
    bl.add_argument("--dim", type=int, default=2)
    bl.add_argument("--separation", type=float, default=10.0)
    bl.add_argument("--seed", type=int, default=0)
    bl.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            if args.kind == "toy":
                return cmd_synth("toy", args.out, args.seed)
            return cmd_synth("blobs", args.out, args.seed, k=args.k, n_per=args.n_per,
                             dim=args.dim, separation=args.separation)
        if args.command == "eval":
            return cmd_eval(args.pred, args.dataset, args.out_dir, args.gt_column)
        cfg = config_from_args(args)
        if args.command == "cluster":
            return cmd_cluster(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.param, args.values)
        if args.command == "patches":
            names = tuple(m.strip() for m in args.methods.split(",") if m.strip())
            return cmd_patches(cfg, args.grid[0], args.grid[1], names)
        if args.command == "estimate-k":
            return cmd_estimate_k(cfg.replace(method="estimate-k", estimate_k=True))
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(json.dumps({"command": args.command, "error": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
