"""
Core components for EM Boundary Net.

This package contains the network engine proper: volume helpers, spec
parsing, graph evaluation and backpropagation, training, inference, the
recursive protocol, and scoring.
"""

from .spec_parser import load_spec, parse_spec
from .netgraph import backward, field_of_view, forward, infer_plan, init_params, param_count
from .training import Trainer, class_weights, derive_boundary_labels, sample_patch, train
from .evaluation import best_pixel_error, best_rand_f, pixel_error, rand_pr_curve, rand_scores
from .inference import infer
from .recursive import recursive_pipeline, warm_start

__all__ = [
    "load_spec",
    "parse_spec",
    "infer_plan",
    "field_of_view",
    "param_count",
    "init_params",
    "forward",
    "backward",
    "derive_boundary_labels",
    "class_weights",
    "sample_patch",
    "Trainer",
    "train",
    "infer",
    "recursive_pipeline",
    "warm_start",
    "pixel_error",
    "best_pixel_error",
    "rand_scores",
    "rand_pr_curve",
    "best_rand_f",
]
