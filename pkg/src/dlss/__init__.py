"""Diffusion-geometry clustering of point clouds and hyperspectral images."""

from .active import plan_queries, random_baseline, run_active
from .data import Dataset, LabelVector, load_csv, load_cube, save_cube
from .density import estimate_density
from .diffusion import coords, decompose, pair_distance
from .evaluation import align, metrics, paired_t, patch_experiment
from .graph import build_graph, knn
from .labeling import Provenance, build_spatial_index, run_dl, run_dlss
from .modes import analyze_modes, estimate_k
from .pipeline import Pipeline, RunConfig

__version__ = "0.1.0"

__all__ = [
    "Dataset", "LabelVector", "load_csv", "load_cube", "save_cube",
    "knn", "build_graph", "decompose", "coords", "pair_distance", "estimate_density",
    "analyze_modes", "estimate_k", "Provenance", "build_spatial_index", "run_dl", "run_dlss",
    "plan_queries", "run_active", "random_baseline",
    "align", "metrics", "paired_t", "patch_experiment", "Pipeline", "RunConfig",
]
