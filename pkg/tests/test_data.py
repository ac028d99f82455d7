import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlss.data import (
    DataError,
    Dataset,
    LabelVector,
    grid_from_shape,
    load_csv,
    load_cube,
    perturb_duplicates,
    save_cube,
)


def _write_header(tmp_path, payload, **hdr):
    (tmp_path / "c.raw").write_bytes(payload)
    base = {"rows": 2, "cols": 2, "bands": 3, "dtype": "f32", "order": "bip", "data_path": "c.raw"}
    base.update(hdr)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(base))
    return path


def test_cube_2x2x3(tmp_path):
    vals = np.arange(12, dtype="<f4")
    ds = load_cube(_write_header(tmp_path, vals.tobytes()))
    assert (ds.n, ds.d) == (4, 3)
    assert ds.grid.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]
    np.testing.assert_array_equal(ds.points, vals.reshape(4, 3))


def test_cube_bsq_order(tmp_path):
    cube = np.arange(12, dtype="<f4").reshape(2, 2, 3)
    payload = np.transpose(cube, (2, 0, 1)).tobytes()
    ds = load_cube(_write_header(tmp_path, payload, order="bsq"))
    np.testing.assert_array_equal(ds.points, cube.reshape(4, 3))


def test_cube_size_mismatch(tmp_path):
    with pytest.raises(DataError, match="payload"):
        load_cube(_write_header(tmp_path, np.zeros(11, "<f4").tobytes()))


def test_cube_missing_payload(tmp_path):
    p = tmp_path / "h.json"
    p.write_text(json.dumps({"rows": 1, "cols": 1, "bands": 1, "data_path": "nope.raw"}))
    with pytest.raises(FileNotFoundError):
        load_cube(p)


def test_cube_nonfinite(tmp_path):
    vals = np.zeros(12, "<f4")
    vals[5] = np.nan
    with pytest.raises(DataError, match="non-finite"):
        load_cube(_write_header(tmp_path, vals.tobytes()))


def test_salinas_a_shape_bookkeeping(tmp_path):
    rows, cols, bands = 86, 83, 224
    cube = np.zeros((rows, cols, bands), dtype=np.float32)
    ds = load_cube(save_cube(tmp_path / "sa.json", cube))
    assert (ds.n, ds.d) == (7138, 224)
    assert ds.shape == (86, 83)


@settings(max_examples=25, deadline=None)
@given(rows=st.integers(1, 6), cols=st.integers(1, 6), bands=st.integers(1, 4),
       order=st.sampled_from(["bip", "bsq"]), seed=st.integers(0, 1000))
def test_cube_round_trip(tmp_path_factory, rows, cols, bands, order, seed):
    tmp = tmp_path_factory.mktemp("rt")
    cube = np.random.default_rng(seed).normal(size=(rows, cols, bands)).astype("<f4")
    gt = np.arange(rows * cols).reshape(rows, cols) % 3
    ds = load_cube(save_cube(tmp / "x.json", cube, gt, order=order))
    # flattening back reproduces the payload bit for bit
    assert ds.points.astype("<f4").tobytes() == cube.reshape(-1, bands).tobytes()
    n = np.arange(rows * cols)
    np.testing.assert_array_equal(ds.grid, np.column_stack([n // cols, n % cols]))
    np.testing.assert_array_equal(ds.gt, gt.ravel())


def test_csv_plain(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,4\n5,6\n")
    ds = load_csv(p)
    assert (ds.n, ds.d) == (3, 2) and ds.grid is None and ds.gt is None


def test_csv_gt_column(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,label\n1,2,1\n3,4,2\n5,6,1\n")
    ds = load_csv(p, gt_column="label")
    assert (ds.n, ds.d) == (3, 2)
    assert ds.gt.tolist() == [1, 2, 1]
    assert load_csv(p, gt_column="2").gt.tolist() == [1, 2, 1]


def test_csv_text_cell(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,oops\n")
    with pytest.raises(DataError):
        load_csv(p)


def test_csv_ragged(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(DataError, match="fields"):
        load_csv(p)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(points=np.array([[np.inf, 0.0]]))
    with pytest.raises(DataError):
        Dataset(points=np.zeros((2, 1)), grid=np.zeros((2, 2)))
    with pytest.raises(DataError):
        Dataset(points=np.zeros((2, 1)), gt=np.array([1, -1]))
    ds = Dataset(points=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        ds.points[0, 0] = 1.0


def test_label_vector_range():
    with pytest.raises(ValueError):
        LabelVector(np.array([0, 3]), 2)
    LabelVector(np.array([0, 2]), 2)


def test_perturb_separates_duplicates():
    ds = Dataset(points=np.ones((2, 4)))
    out = perturb_duplicates(ds, 1e-3, seed=7)
    assert not np.array_equal(out.points[0], out.points[1])
    again = perturb_duplicates(ds, 1e-3, seed=7)
    np.testing.assert_array_equal(out.points, again.points)


def test_grid_from_shape():
    assert grid_from_shape(2, 3).tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]


def test_content_hash_changes():
    a = Dataset(points=np.zeros((3, 2)))
    b = Dataset(points=np.zeros((3, 2)), gt=np.array([1, 1, 2]))
    assert a.content_hash() != b.content_hash()
    assert a.content_hash() == Dataset(points=np.zeros((3, 2))).content_hash()
