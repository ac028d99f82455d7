import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlss.density import DensityProfile, density_order
from dlss.diffusion import DiffusionModel
from dlss.modes import (
    InconclusiveError,
    ModeError,
    analyze_modes,
    estimate_k,
    nearest_higher_density,
    top_k,
)
from dlss.pipeline import Pipeline, RunConfig
from dlss.synth import generate_blobs


def embedded(C):
    """A diffusion model whose coordinates at any t are exactly ``C``."""
    C = np.asarray(C, dtype=np.float64)
    return DiffusionModel(np.ones(C.shape[1]), C, C.shape[1], t_default=1.0)


def profile(p):
    p = np.asarray(p, dtype=np.float64)
    order, rank = density_order(p)
    return DensityProfile(p, order, rank)


def oracle_parents(C, p):
    """Independent double loop over the density order."""
    n = len(p)
    order = sorted(range(n), key=lambda i: (-p[i], i))
    rho = np.zeros(n)
    parent = np.full(n, -1)
    top = order[0]
    rho[top] = max(np.sqrt(np.sum((C[m] - C[top]) ** 2)) for m in range(n))
    for r in range(1, n):
        i = order[r]
        best, arg = np.inf, -1
        for m in order[:r]:
            d = np.sqrt(np.sum((C[m] - C[i]) ** 2))
            if d < best or (d == best and m < arg):
                best, arg = d, m
        rho[i], parent[i] = best, arg
    return rho, parent


def test_three_collinear_points():
    C = [[0.0], [1.0], [3.0]]
    ma = analyze_modes(embedded(C), profile([0.5, 0.3, 0.2]), K=1)
    assert ma.parent.tolist() == [-1, 0, 1]
    np.testing.assert_allclose(ma.rho_tilde, [3.0, 1.0, 2.0])
    np.testing.assert_allclose(ma.rho, [1.0, 1 / 3, 2 / 3])
    assert ma.modes.tolist() == [0]


def test_parent_tie_goes_to_lower_index():
    C = [[0.0], [2.0], [1.0]]
    ma = analyze_modes(embedded(C), profile([0.4, 0.35, 0.25]), K=1)
    assert ma.parent.tolist() == [-1, 0, 0]


@pytest.mark.parametrize("seed", range(3))
def test_matches_double_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(100, 5))
    p = rng.random(100)
    p[rng.integers(0, 100, 10)] = p[0]  # density ties
    rho, parent = oracle_parents(C, p)
    r2, par2 = nearest_higher_density(C, profile(p))
    np.testing.assert_array_equal(par2, parent)
    np.testing.assert_array_equal(r2, rho)


def test_blocking_does_not_change_result(monkeypatch):
    from dlss import modes as modes_mod

    rng = np.random.default_rng(9)
    C = rng.normal(size=(300, 4))
    dp = profile(rng.random(300))
    a = nearest_higher_density(C, dp)
    monkeypatch.setattr(modes_mod, "_BLOCK_ELEMS", 64)
    b = nearest_higher_density(C, dp)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 80), K=st.integers(1, 5),
       c=st.floats(1e-3, 1e3))
def test_scale_robustness(seed, n, K, c):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(n, 3))
    dp = profile(rng.random(n))
    K = min(K, n)
    a = analyze_modes(embedded(C), dp, K=K)
    b = analyze_modes(embedded(C), dp.scaled(c), K=K)
    np.testing.assert_array_equal(a.parent, b.parent)
    np.testing.assert_array_equal(a.rho, b.rho)
    np.testing.assert_array_equal(np.argsort(a.Dt, kind="stable"),
                                  np.argsort(b.Dt, kind="stable"))
    np.testing.assert_array_equal(a.modes, b.modes)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 80))
def test_parent_chain_ascends_to_argmax(seed, n):
    rng = np.random.default_rng(seed)
    dp = profile(rng.random(n))
    ma = analyze_modes(embedded(rng.normal(size=(n, 2))), dp, K=1)
    for i in range(n):
        steps, j = 0, i
        while ma.parent[j] >= 0:
            assert dp.rank[ma.parent[j]] < dp.rank[j]
            j = ma.parent[j]
            steps += 1
            assert steps <= n
        assert j == dp.argmax


def test_top_k_ties_by_index():
    assert top_k(np.array([0.1, 0.5, 0.5, 0.2]), 2).tolist() == [1, 2]


def test_k_out_of_range():
    with pytest.raises(ModeError):
        analyze_modes(embedded([[0.0], [1.0]]), profile([0.6, 0.4]), K=3)


def test_two_blobs_modes_separate_over_50_seeds():
    cfg = RunConfig(k_graph=20, sigma_graph=2.0, k_density=20, K=2)
    for seed in range(50):
        ds = generate_blobs(2, 100, dim=2, separation=10.0, seed=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ma = Pipeline(ds, cfg).modes()
        assert sorted(ds.gt[ma.modes].tolist()) == [1, 2], seed


# -- cluster-count estimation -----------------------------------------------

def _curve(head, n=60, tail=1e-4):
    rest = tail * np.linspace(1, 0.5, n - len(head))
    return np.concatenate([head, rest])


def test_first_order_gap():
    Dt = _curve([1.0, 0.95, 0.9, 0.1, 0.09])
    ke = estimate_k(Dt)
    assert (ke.k_hat, ke.method_used) == (3, "first-order")


def test_first_order_needs_index_at_least_two():
    # the largest drop right after the first value is ignored by the first-order rule
    Dt = _curve([1.0, 0.1, 0.09, 0.08, 0.07])
    ke = estimate_k(Dt)
    assert ke.k_hat >= 2


def test_second_order_fallback():
    # gradual decay: no single drop dominates, but the 4->5 step is steepest
    # relative to the next one
    head = [1.0, 0.8, 0.62, 0.46, 0.32, 0.31, 0.30, 0.29]
    s = np.array(head + list(np.linspace(0.28, 0.2, 52)))
    ke = estimate_k(s)
    assert ke.method_used == "second-order"
    delta = np.diff(s)[:20]
    ratios = delta[:-1] / delta[1:]
    assert ke.k_hat == int(np.argmax(ratios[1:])) + 2


def test_estimate_k_on_shuffled_input():
    Dt = _curve([1.0, 0.95, 0.9, 0.1, 0.09])
    perm = np.random.default_rng(0).permutation(Dt.size)
    assert estimate_k(Dt[perm]).k_hat == 3


def test_degenerate_curve():
    with pytest.raises(InconclusiveError):
        estimate_k(np.ones(50))


def test_too_few_points():
    with pytest.raises(ModeError):
        estimate_k(np.arange(22.0), search_limit=20)


def test_estimate_k_on_blobs():
    ds = generate_blobs(3, 150, dim=2, separation=12.0, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ke = Pipeline(ds, RunConfig(k_graph=20, sigma_graph=2.0)).k_estimate()
    assert ke.k_hat == 3
