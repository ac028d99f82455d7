import os
import warnings
from pathlib import Path

import numpy as np
import pytest

from dlss.data import Dataset
from dlss.graph import build_graph, knn

DATA_DIR_ENV = "DLSS_DATA_DIR"


def random_graph(seed: int, n: int = None, d: int = 3, k: int = 8):
    """A connected kNN graph on random points with a data-scaled kernel."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(20, 101))
    X = rng.normal(size=(n, d))
    ds = Dataset(points=X)
    nl = knn(ds, min(k, n - 1))
    sigma = float(np.median(nl.dist[:, -1]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        g = build_graph(ds, nl, sigma)
    return ds, g


def data_dir():
    d = os.environ.get(DATA_DIR_ENV)
    return Path(d) if d else None


def scene_path(name: str):
    d = data_dir()
    if d is None:
        return None
    p = d / f"{name}.json"
    return p if p.exists() else None


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (criterion number, part) -> (status, title, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        n = key[0]
        status, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}" + (f" ({detail})" if detail else ""))
