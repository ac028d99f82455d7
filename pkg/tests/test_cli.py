import json

import numpy as np
import pytest

from dlss import cli, pipeline as pipeline_mod
from dlss.data import Dataset, grid_from_shape, save_cube
from dlss.pipeline import Pipeline, RunConfig, StageCache

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def striped_cube(path, rows=16, cols=18, bands=4, seed=0):
    """Three vertical stripes of distinct mean spectra plus noise."""
    rng = np.random.default_rng(seed)
    gt = np.repeat(np.arange(cols) * 3 // cols + 1, 1)[None, :].repeat(rows, 0)
    means = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], float)[:, :bands]
    cube = means[gt - 1] + rng.normal(0, 0.15, (rows, cols, bands))
    gt = gt.copy()
    gt[0, 0] = 0
    return save_cube(path, cube, gt, dtype="f64")


RUN = ["--k-graph", "30", "--sigma-graph", "0.7", "--k", "3"]


def run_cli(tmp_path, *argv, out="out"):
    rc = cli.main([*argv, "--out-dir", str(tmp_path / out)])
    return rc, tmp_path / out


def test_defaults_match_published_settings():
    cfg = RunConfig()
    assert (cfg.k_graph, cfg.sigma_graph, cfg.k_density, cfg.t, cfg.r_s) == (100, 1.0, 20, 30.0, 3.0)
    with pytest.raises(ValueError):
        RunConfig(method="kmeans")
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})


def test_cluster_writes_outputs(tmp_path):
    hdr = striped_cube(tmp_path / "s.json")
    rc, out = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN)
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["metrics"]["oa"] > 0.95
    assert len(rep["modes"]["modes"]) == 3
    assert "stage1_unlabeled" in rep
    labels = np.fromfile(out / "labels.i32", dtype="<i4")
    prov = np.fromfile(out / "provenance.u8", dtype="u1")
    assert labels.size == prov.size == 16 * 18
    man = json.loads((out / "manifest.json").read_text())
    assert {f["file"] for f in man["files"]} == {"labels.i32", "provenance.u8", "report.json"}


def test_csv_dl_ok_dlss_needs_grid(tmp_path, capsys):
    p = tmp_path / "pts.csv"
    assert cli.main(["synth", "blobs", "--k", "2", "--n-per", "40", "--out", str(p)]) == 0
    base = ["--dataset", str(p), "--gt-column", "gt", "--k-graph", "15", "--sigma-graph", "2"]
    rc, out = run_cli(tmp_path, "cluster", *base, "--method", "dl", out="dl")
    assert rc == 0
    rc, out = run_cli(tmp_path, "cluster", *base, "--method", "dlss", out="dlss")
    assert rc != 0
    err = json.loads((out / "error.json").read_text())
    assert "grid required" in err["message"]
    assert "grid required" in capsys.readouterr().err


def test_missing_dataset_is_reported(tmp_path):
    rc, out = run_cli(tmp_path, "cluster", "--dataset", str(tmp_path / "nope.json"))
    assert rc != 0
    assert json.loads((out / "error.json").read_text())["error"] == "FileNotFoundError"


def test_warm_cache(tmp_path):
    hdr = striped_cube(tmp_path / "s.json")
    cache = str(tmp_path / "cache")
    rc, a = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN, "--cache-dir", cache, out="a")
    rc2, b = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN, "--cache-dir", cache, out="b")
    assert rc == rc2 == 0
    assert (a / "labels.i32").read_bytes() == (b / "labels.i32").read_bytes()
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    ta = json.loads((a / "timings.json").read_text())["ms"]
    tb = json.loads((b / "timings.json").read_text())["ms"]
    assert {"knn", "graph", "eigen"} <= set(ta)
    assert not {"knn", "graph", "eigen"} & set(tb)
    assert sum(tb.values()) < sum(ta.values())


def test_cache_env_var(tmp_path, monkeypatch):
    hdr = striped_cube(tmp_path / "s.json")
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "envcache"))
    rc, _ = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN)
    assert rc == 0
    assert len(list((tmp_path / "envcache").glob("eig-*.npz"))) == 1


def test_stage_cache_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(points=rng.normal(size=(80, 3)))
    cfg = RunConfig(k_graph=10, sigma_graph=1.0, K=2)
    fresh = Pipeline(ds, cfg, cache=StageCache(tmp_path))
    g, dm, nl = fresh.graph, fresh.model, fresh.neighbors
    warm = Pipeline(ds, cfg, cache=StageCache(tmp_path))
    assert (warm.graph.W != g.W).nnz == 0
    np.testing.assert_array_equal(warm.graph.P.toarray(), g.P.toarray())
    np.testing.assert_array_equal(warm.model.phis, dm.phis)
    np.testing.assert_array_equal(warm.neighbors.idx, nl.idx)
    assert warm.timings == {}


def test_sweep_t_reuses_eigenpairs(tmp_path, monkeypatch):
    calls = []
    real = pipeline_mod.decompose
    monkeypatch.setattr(pipeline_mod, "decompose", lambda *a, **k: calls.append(1) or real(*a, **k))
    hdr = striped_cube(tmp_path / "s.json")
    rc, out = run_cli(tmp_path, "sweep", "--dataset", str(hdr), *RUN,
                      "--param", "t", "--values", "10", "30", "60")
    assert rc == 0 and len(calls) == 1
    rows = json.loads((out / "sweep.json").read_text())["rows"]
    assert [r["t"] for r in rows] == [10.0, 30.0, 60.0]


def test_sweep_rs_zero_equals_dl(tmp_path):
    hdr = striped_cube(tmp_path / "s.json")
    rc, out = run_cli(tmp_path, "sweep", "--dataset", str(hdr), *RUN,
                      "--param", "r_s", "--values", "0", "3")
    assert rc == 0
    rows = json.loads((out / "sweep.json").read_text())["rows"]
    rc, dl = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN, "--method", "dl", out="dl")
    assert rows[0]["oa"] == json.loads((dl / "report.json").read_text())["metrics"]["oa"]


def test_single_patch_equals_cluster(tmp_path):
    hdr = striped_cube(tmp_path / "s.json")
    rc, pt = run_cli(tmp_path, "patches", "--dataset", str(hdr), *RUN[:4],
                     "--grid", "1", "1", "--methods", "dlss", out="p")
    rc2, cl = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN[:4], out="c")
    assert rc == rc2 == 0
    assert (pt / "patch000_dlss.i32").read_bytes() == (cl / "labels.i32").read_bytes()


def test_patches_t_test(tmp_path):
    hdr = striped_cube(tmp_path / "s.json", rows=20, cols=24)
    rc, out = run_cli(tmp_path, "patches", "--dataset", str(hdr), *RUN[:4], "--grid", "2", "2")
    assert rc == 0
    rep = json.loads((out / "patches.json").read_text())
    assert len(rep["patches"]) == 4
    assert rep["t_test"]["df"] == 3


@pytest.mark.parametrize("method", ["dl", "dlss", "active"])
def test_determinism_across_workers(tmp_path, method):
    hdr = striped_cube(tmp_path / "s.json")
    extra = ["--method", method] + (["--active-budget", "5"] if method == "active" else [])
    rc, a = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN, *extra,
                    "--workers", "1", out="w1")
    rc2, b = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN, *extra,
                     "--workers", "4", out="w4")
    assert rc == rc2 == 0
    for f in ("labels.i32", "provenance.u8", "report.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_config_file_with_override(tmp_path):
    hdr = striped_cube(tmp_path / "s.json")
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"dataset": str(hdr), "k_graph": 30, "sigma_graph": 0.7,
                                "K": 3, "t": 5.0}))
    rc, out = run_cli(tmp_path, "cluster", "--config", str(conf), "--t", "12")
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["t"] == 12.0 and rep["config"]["k_graph"] == 30


def test_estimate_k_command(tmp_path, capsys):
    hdr = striped_cube(tmp_path / "s.json", rows=20, cols=21)
    rc, out = run_cli(tmp_path, "estimate-k", "--dataset", str(hdr), *RUN[:4])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    cfg = RunConfig(dataset=str(hdr), k_graph=30, sigma_graph=0.7)
    ke = Pipeline.from_config(cfg).k_estimate()
    assert (rep["k_hat"], rep["method"]) == (ke.k_hat, ke.method_used)
    assert capsys.readouterr().out.strip() == str(ke.k_hat)


def test_eval_command(tmp_path, capsys):
    hdr = striped_cube(tmp_path / "s.json")
    rc, out = run_cli(tmp_path, "cluster", "--dataset", str(hdr), *RUN)
    rc2, ev = run_cli(tmp_path, "eval", "--pred", str(out / "labels.i32"), "--dataset", str(hdr),
                      out="ev")
    assert rc == rc2 == 0
    m = json.loads((ev / "metrics.json").read_text())
    assert m["oa"] == json.loads((out / "report.json").read_text())["metrics"]["oa"]


def test_synth_outputs_reload(tmp_path):
    j, c = tmp_path / "toy.json", tmp_path / "toy.csv"
    assert cli.main(["synth", "toy", "--seed", "2", "--out", str(j)]) == 0
    assert cli.main(["synth", "toy", "--seed", "2", "--out", str(c)]) == 0
    a = pipeline_mod.load_dataset(j)
    b = pipeline_mod.load_dataset(c, "gt")
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.gt, b.gt)


def test_noise_applied_before_scaling():
    ds = Dataset(points=np.full((4, 2), 1000.0), grid=grid_from_shape(2, 2))
    cfg = RunConfig(noise_variance=1e-2, normalize="max", seed=1)
    out = pipeline_mod.preprocess(ds, cfg)
    assert np.abs(out.points).max() == 1.0
    assert np.std(out.points) < 1e-3
