"""Seeded synthetic data: the bridged-Gaussians toy example and separable blobs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import Dataset

__all__ = ["ToySpec", "TOY_PIPELINE", "generate_toy", "generate_blobs", "parabola_points"]


@dataclass(frozen=True)
class ToySpec:
    """Two Gaussians at (0,1) and (1,0) joined by a parabolic band (class 1),
    a Gaussian at (0,0) (class 2), and uniform background noise."""

    n_gauss1a: int = 200
    n_gauss1b: int = 200
    n_bridge: int = 200
    n_gauss2: int = 300
    n_noise: int = 100
    sigma_blob: float = 0.1
    bridge_width: float = 0.1
    noise_box: tuple = (-1.0, 2.0, -1.0, 2.0)  # xmin, xmax, ymin, ymax
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_gauss1a, self.n_gauss1b, self.n_bridge, self.n_gauss2, self.n_noise)
        if min(counts) < 0:
            raise ValueError("point counts must be nonnegative")
        if not self.sigma_blob > 0:
            raise ValueError("sigma_blob must be positive")


# Graph/density settings used with the toy data (its scale is ~1, not HSI reflectance).
TOY_PIPELINE = {"k_graph": 100, "sigma_graph": 0.5, "k_density": 20, "t": 30.0}


def parabola_points(u: np.ndarray) -> tuple:
    """Points of ``y = (1 - x)^2``, x in [0, 1], at arc-length fractions ``u``,
    with unit normals."""
    xs = np.linspace(0.0, 1.0, 2001)
    speed = np.sqrt(1.0 + 4.0 * (1.0 - xs) ** 2)
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(xs))])
    x = np.interp(u * arc[-1], arc, xs)
    y = (1.0 - x) ** 2
    tangent = np.column_stack([np.ones_like(x), -2.0 * (1.0 - x)])
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    return np.column_stack([x, y]), normal


def generate_toy(spec: ToySpec = ToySpec()) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    s = spec.sigma_blob
    a = rng.normal([0.0, 1.0], s, size=(spec.n_gauss1a, 2))
    b = rng.normal([1.0, 0.0], s, size=(spec.n_gauss1b, 2))
    on_curve, normal = parabola_points(rng.uniform(0.0, 1.0, spec.n_bridge))
    offset = rng.uniform(-0.5, 0.5, spec.n_bridge)[:, None] * spec.bridge_width
    bridge = on_curve + offset * normal
    c = rng.normal([0.0, 0.0], s, size=(spec.n_gauss2, 2))
    x0, x1, y0, y1 = spec.noise_box
    noise = np.column_stack([rng.uniform(x0, x1, spec.n_noise), rng.uniform(y0, y1, spec.n_noise)])

    clean = np.vstack([a, b, bridge, c])
    gt_clean = np.concatenate([
        np.ones(spec.n_gauss1a + spec.n_gauss1b + spec.n_bridge, dtype=np.int64),
        np.full(spec.n_gauss2, 2, dtype=np.int64),
    ])
    if spec.n_noise and clean.shape[0]:
        _, nn = cKDTree(clean).query(noise, k=1)
        gt_noise = gt_clean[nn]
    else:
        gt_noise = np.ones(spec.n_noise, dtype=np.int64)
    return Dataset(points=np.vstack([clean, noise]), gt=np.concatenate([gt_clean, gt_noise]),
                   name=f"toy-seed{spec.seed}")


def generate_blobs(K: int, n_per: int, dim: int = 2, separation: float = 10.0,
                   seed: int = 0, sigma: float = 1.0) -> Dataset:
    """K isotropic Gaussians (std ``sigma``) with means ``k * separation`` along
    the first axis."""
    if not separation > 0:
        raise ValueError("separation must be positive")
    if K < 1 or n_per < 1 or dim < 1:
        raise ValueError("K, n_per and dim must be positive")
    rng = np.random.default_rng(seed)
    means = np.zeros((K, dim))
    means[:, 0] = separation * np.arange(K)
    pts = np.vstack([rng.normal(m, sigma, size=(n_per, dim)) for m in means])
    gt = np.repeat(np.arange(1, K + 1), n_per)
    return Dataset(points=pts, gt=gt, name=f"blobs-K{K}-seed{seed}")
